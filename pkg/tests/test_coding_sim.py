"""
Tests for the random-coding simulator
"""

import math
from itertools import product

import numpy as np
import pytest

from conftest import ALL_STRATEGIES
from config import SimConfig, SweepConfig
from covertcsi.exceptions import EncoderAtypical
from covertcsi.probability import Pmf, ConditionalPmf, JointPmf, kl_divergence, n_fold_product
from covertcsi.channel_model import StateDmc, StrategyMap, q0, effective_channels
from covertcsi.covert_capacity import solution_from_dict
from covertcsi.coding_sim import (
    Codebook, codebook_size, gen_codebook, shannon_encode, multicoding_weights, likelihood_encode,
    ml_decode, simulate_transmissions, exact_warden_dist, covertness_metrics, simulate_codebook,
    run_experiment, average_reports, csv_row, decoding_law, reports_to_text, read_reports_text, EXACT,
    ESTIMATE, _decode_batch, _log
)

XOR_MAP = StrategyMap([[0, 1], [1, 0]])


def noncausal_solution():
    """State-dependent P_U|S on the full BSC strategy map (not covert, only used for enumeration checks)."""
    return solution_from_dict({
        'mode': 'noncausal',
        'rate_bits': float('nan'),
        'aux_dist': [[0.1, 0.6, 0.2, 0.1], [0.3, 0.2, 0.3, 0.2]],
        'map': ALL_STRATEGIES,
    })


def average_kl(reports, n):
    return np.mean([r.kl_nats for r in reports if r.n == n])


class TestCodebook:
    def test_sizes_round_up(self):
        assert codebook_size(4, 0.5) == 4
        assert codebook_size(8, 0.3) == 6
        assert codebook_size(5, 0.0) == 1
        with pytest.raises(ValueError):
            codebook_size(4, -0.1)

    def test_realized_rates(self):
        cb = gen_codebook(SimConfig(n=4, R=0.3, R_K=0.6), Pmf([0.5, 0.5]))
        assert cb.sizes == (6, 3, 1)
        assert cb.realized_rates() == pytest.approx((math.log2(3) / 4, math.log2(6) / 4, 0.0))

    def test_point_mass_is_constant(self):
        cb = gen_codebook(SimConfig(n=5, R=0.4, R_K=0.4), Pmf.point_mass(3, 2))
        assert np.all(cb.entries == 2)

    def test_seed_reproducible(self):
        cfg = SimConfig(n=6, R=0.5, R_K=0.5, seed=99)
        first = gen_codebook(cfg, Pmf([0.3, 0.7]))
        second = gen_codebook(cfg, Pmf([0.3, 0.7]))
        other = gen_codebook(SimConfig(n=6, R=0.5, R_K=0.5, seed=100), Pmf([0.3, 0.7]))
        assert np.array_equal(first.entries, second.entries)
        assert not np.array_equal(first.entries, other.entries)

    def test_symbol_frequencies(self):
        dist = Pmf([0.2, 0.5, 0.3])
        cb = gen_codebook(SimConfig(n=10, R=0.5, R_K=0.5, seed=5), dist)
        symbols = cb.entries.ravel()
        assert symbols.size == 32 * 32 * 10
        for v, p in enumerate(dist.probs):
            sigma = math.sqrt(p * (1 - p) / symbols.size)
            assert abs(np.mean(symbols == v) - p) <= 4 * sigma

    def test_noncausal_has_bins(self):
        cb = gen_codebook(SimConfig(n=2, R=0.5, R_K=0.5, R_prime=1.0, mode='noncausal'), Pmf([0.5, 0.5]))
        assert cb.sizes == (2, 2, 4)


class TestEncoders:
    def test_constant_map_sends_x0(self):
        cb = gen_codebook(SimConfig(n=4, R=0.5, R_K=0.5), Pmf([0.5, 0.5]))
        x = shannon_encode(cb, 1, 2, [0, 1, 1, 0], StrategyMap.constant(2, 2, 0))
        assert x.tolist() == [0, 0, 0, 0]

    def test_xor_map(self):
        s_seq = [1, 0, 1, 1]
        cb = Codebook(np.array(s_seq).reshape(1, 1, 1, 4), Pmf([0.5, 0.5]), seed=0)
        assert shannon_encode(cb, 0, 0, s_seq, XOR_MAP).tolist() == [0, 0, 0, 0]

    def test_single_bin(self):
        cb = gen_codebook(SimConfig(n=3, R=0.5, R_K=0.5, mode='noncausal'), Pmf.uniform(4))
        rng = np.random.default_rng(0)
        s_given_u = ConditionalPmf(np.full((4, 2), 0.5))
        for _ in range(5):
            l, _ = likelihood_encode(cb, 0, 0, [0, 1, 0], rng, StrategyMap(ALL_STRATEGIES), s_given_u)
            assert l == 0

    def test_identical_candidates_are_uniform(self):
        entries = np.zeros((1, 1, 4, 3), dtype=np.int64)
        cb = Codebook(entries, Pmf([0.5, 0.5]), seed=0, mode='noncausal')
        s_given_u = ConditionalPmf([[0.3, 0.7], [0.6, 0.4]])
        weights = multicoding_weights(cb, 0, 0, [1, 0, 1], s_given_u)
        assert np.allclose(weights, 0.25)

    def test_posterior_matches_enumeration(self):
        cb = gen_codebook(SimConfig(n=2, R=0.0, R_K=0.0, R_prime=1.0, mode='noncausal', seed=3),
                          Pmf([0.3, 0.3, 0.4]))
        rows = np.array([[0.2, 0.8], [0.5, 0.5], [0.9, 0.1]])
        s_given_u = ConditionalPmf(rows)
        for s_seq in product(range(2), repeat=2):
            direct = np.array([np.prod([rows[u, s] for u, s in zip(cb.entries[0, 0, l], s_seq)])
                               for l in range(4)])
            weights = multicoding_weights(cb, 0, 0, s_seq, s_given_u)
            assert np.allclose(weights, direct / direct.sum(), atol=1e-12)

    def test_atypical_state_sequence(self):
        entries = np.zeros((1, 1, 2, 2), dtype=np.int64)
        cb = Codebook(entries, Pmf([0.5, 0.5]), seed=0, mode='noncausal')
        s_given_u = ConditionalPmf([[1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(EncoderAtypical):
            multicoding_weights(cb, 0, 0, [0, 1], s_given_u)


class TestDecoder:
    @pytest.fixture
    def noiseless(self):
        # Y = Z = X, single state
        law = np.zeros((1, 2, 2, 2))
        law[0, 0, 0, 0] = 1.0
        law[0, 1, 1, 1] = 1.0
        return StateDmc.from_tensor([1.0], law)

    def test_distinct_codewords_decode(self, noiseless):
        entries = np.array([[0, 0, 1], [0, 1, 0], [1, 1, 1]]).reshape(1, 3, 1, 3)
        cb = Codebook(entries, Pmf([0.5, 0.5]), seed=0)
        identity = StrategyMap([[0], [1]])
        for m in range(3):
            assert ml_decode(cb, 0, entries[0, m, 0], noiseless, identity) == m

    def test_ties_go_to_smaller_message(self, noiseless):
        entries = np.array([[1, 0], [1, 0]]).reshape(1, 2, 1, 2)
        cb = Codebook(entries, Pmf([0.5, 0.5]), seed=0)
        assert ml_decode(cb, 0, [1, 0], noiseless, StrategyMap([[0], [1]])) == 0

    def test_batch_decoder_is_map(self, bsc, bsc_solution):
        cfg = SimConfig(n=8, R=0.125, R_K=1.0, seed=17)
        cb = gen_codebook(cfg, bsc_solution.aux_dist)
        sent = simulate_transmissions(bsc, cb, bsc_solution.map, 500, np.random.default_rng(8))
        wy = effective_channels(bsc, bsc_solution.map)[0]
        decoded = _decode_batch(cb, sent['k'], sent['y'], _log(decoding_law(bsc, bsc_solution.map)))
        for t in range(500):
            likelihoods = [np.prod(wy[cb.entries[sent['k'][t], m, 0], sent['y'][t]]) for m in range(cb.sizes[1])]
            best = max(likelihoods)
            assert likelihoods[decoded[t]] >= best * (1 - 1e-12)
            assert all(lk < best * (1 - 1e-12) for lk in likelihoods[:decoded[t]])


class TestWarden:
    def test_all_x0_codebook_is_invisible(self, bsc):
        cfg = SimConfig(n=3, R=0.4, R_K=0.4)
        cb = gen_codebook(cfg, Pmf([1.0]))
        smap = StrategyMap.constant(1, 2, bsc.x0)
        p_hat = exact_warden_dist(cb, bsc, cfg, smap)
        kl, tv, bound, test_sum = covertness_metrics(p_hat, n_fold_product(q0(bsc), 3))
        assert kl == pytest.approx(0.0, abs=1e-12)
        assert (bound, test_sum) == pytest.approx((1.0, 1.0))

    def test_single_letter_x1(self, bsc):
        cfg = SimConfig(n=1, R=0.0, R_K=0.0)
        cb = gen_codebook(cfg, Pmf([1.0]))
        smap = StrategyMap.constant(1, 2, 1)
        p_hat = exact_warden_dist(cb, bsc, cfg, smap)
        assert np.allclose(p_hat.probs, [0.2, 0.8])
        expected = 0.2 * math.log(0.2 / 0.8) + 0.8 * math.log(0.8 / 0.2)
        assert kl_divergence(p_hat, n_fold_product(q0(bsc), 1)) == pytest.approx(expected)
        _, tv, _, test_sum = covertness_metrics(p_hat, n_fold_product(q0(bsc), 1))
        assert tv == pytest.approx(0.6)
        assert test_sum == pytest.approx(0.4)

    def test_causal_matches_brute_force(self, bsc, bsc_solution):
        cfg = SimConfig(n=4, R=0.5, R_K=0.5, seed=41)
        cb = gen_codebook(cfg, bsc_solution.aux_dist)
        table = bsc_solution.map.table
        brute = np.zeros((2,) * 4)
        n_keys, n_msgs, _ = cb.sizes
        for k in range(n_keys):
            for m in range(n_msgs):
                v = cb.entries[k, m, 0]
                for s_seq in product(range(2), repeat=4):
                    p_seq = np.prod([0.8 if s == 0 else 0.2 for s in s_seq])
                    z = tuple(int(table[v[i], s_seq[i]]) ^ s_seq[i] for i in range(4))
                    brute[z] += p_seq / (n_keys * n_msgs)
        p_hat = exact_warden_dist(cb, bsc, cfg, bsc_solution.map)
        q0_n = n_fold_product(q0(bsc), 4)
        assert p_hat.probs.sum() == pytest.approx(1.0, abs=1e-10)
        assert covertness_metrics(p_hat, q0_n)[0] == pytest.approx(kl_divergence(brute, q0_n), abs=1e-10)

    def test_noncausal_matches_brute_force(self, bsc):
        sol = noncausal_solution()
        joint = sol.joint(bsc).project(['U', 'S'])
        s_given_u = joint / joint.sum(axis=1, keepdims=True)
        cfg = SimConfig(n=2, R=0.5, R_K=0.5, R_prime=1.0, mode='noncausal', seed=12)
        cb = gen_codebook(cfg, sol.aux_marginal(bsc))
        table = sol.map.table
        n_keys, n_msgs, n_bins = cb.sizes
        brute = np.zeros((2, 2))
        for k in range(n_keys):
            for m in range(n_msgs):
                for s_seq in product(range(2), repeat=2):
                    p_seq = np.prod([0.8 if s == 0 else 0.2 for s in s_seq])
                    weights = np.array([np.prod([s_given_u[u, s] for u, s in zip(cb.entries[k, m, l], s_seq)])
                                        for l in range(n_bins)])
                    if weights.sum() == 0:
                        weights = np.eye(n_bins)[0]
                    weights = weights / weights.sum()
                    for l in range(n_bins):
                        u = cb.entries[k, m, l]
                        z = tuple(int(table[u[i], s_seq[i]]) ^ s_seq[i] for i in range(2))
                        brute[z] += p_seq * weights[l] / (n_keys * n_msgs)
        p_hat = exact_warden_dist(cb, bsc, cfg, sol.map, ConditionalPmf(s_given_u))
        assert np.allclose(p_hat.probs, brute, atol=1e-12)

    def test_metrics_edge_cases(self):
        q = JointPmf(np.array([[0.25, 0.25], [0.25, 0.25]]), ('Z1', 'Z2'))
        assert covertness_metrics(q, q) == pytest.approx((0.0, 0.0, 1.0, 1.0))
        kl, tv, bound, test_sum = covertness_metrics([1.0, 0.0], [0.0, 1.0])
        assert math.isinf(kl)
        assert (tv, bound, test_sum) == (1.0, 0.0, 0.0)

    def test_optimal_test_beats_bound(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            p = rng.dirichlet(np.ones(8))
            q = rng.dirichlet(np.ones(8))
            _, _, bound, test_sum = covertness_metrics(p, q)
            assert test_sum >= bound - 1e-12


class TestSimulation:
    def test_chain_and_normalization(self, bsc, bsc_solution):
        report = simulate_codebook(bsc, bsc_solution, SimConfig(n=4, R=0.5, R_K=0.5, trials=50, seed=2))
        assert report.exactness == EXACT
        assert report.kl_exact_nats == report.kl_nats
        assert report.tv_exact == report.tv
        assert report.chain_sum_nats <= report.kl_nats + 1e-10
        assert 0.0 <= report.tv <= 1.0
        assert report.optimal_test_sum >= report.detection_bound
        assert report.decoder == 'maximum-likelihood'

    def test_single_message_reports_na(self, bsc, bsc_solution):
        report = simulate_codebook(bsc, bsc_solution, SimConfig(n=2, R=0.0, R_K=0.5, trials=20))
        assert report.p_err is None
        assert csv_row(report)[4] == 'NA'

    def test_monte_carlo_fallback(self, bsc, bsc_solution):
        cfg = SimConfig(n=4, R=0.5, R_K=0.5, trials=20, exact_z_cap=8, mc_samples=20000)
        report = simulate_codebook(bsc, bsc_solution, cfg)
        assert report.exactness == ESTIMATE
        assert math.isnan(report.kl_exact_nats)
        assert math.isnan(report.tv_exact)
        assert math.isfinite(report.kl_nats)
        assert 0.0 <= report.tv <= 1.0

    def test_mode_mismatch(self, bsc, bsc_solution):
        with pytest.raises(ValueError):
            simulate_codebook(bsc, bsc_solution, SimConfig(n=2, R=0.5, R_K=0.5, mode='noncausal'))

    def test_encoder_law_at_one_letter(self, bsc, bsc_solution):
        cfg = SimConfig(n=1, R=0.0, R_K=14.0, seed=4)
        cb = gen_codebook(cfg, bsc_solution.aux_dist)
        samples = 100000
        sent = simulate_transmissions(bsc, cb, bsc_solution.map, samples, np.random.default_rng(9))
        counts = np.zeros((2, 2, 2))
        np.add.at(counts, (sent['x'][:, 0], sent['s'][:, 0], sent['z'][:, 0]), 1)
        empirical = counts / samples
        expected = bsc_solution.joint(bsc).project(['X', 'S', 'Z'])
        n_codewords = cb.entries.size
        sigma = np.sqrt(expected * (1 - expected) * (1 / samples + 1 / n_codewords))
        assert np.all(np.abs(empirical - expected) <= 4 * sigma + 1e-12)

    def test_run_is_reproducible(self, bsc, bsc_solution):
        sweep = SweepConfig(n_list=[2, 4], R=0.5, R_K=0.5, trials=30, codebooks=2, seed=77, workers=1)
        first = [r.to_dict() for r in run_experiment(bsc, bsc_solution, sweep)]
        sweep.workers = 2
        second = [r.to_dict() for r in run_experiment(bsc, bsc_solution, sweep)]
        assert first == second
        assert [r['n'] for r in first] == [2, 2, 4, 4]

    def test_average_pools_errors(self, bsc, bsc_solution):
        sweep = SweepConfig(n_list=[4], R=0.5, R_K=0.5, trials=40, codebooks=3, seed=1, workers=1)
        reports = run_experiment(bsc, bsc_solution, sweep)
        averaged = average_reports(reports)
        assert len(averaged) == 1
        assert averaged[0].trials == 120
        assert averaged[0].errors == sum(r.errors for r in reports)
        assert averaged[0].kl_nats == pytest.approx(np.mean([r.kl_nats for r in reports]))
        assert averaged[0].codebook_index == -1

    def test_report_text(self, bsc, bsc_solution):
        sweep = SweepConfig(n_list=[2, 4], R=0.5, R_K=0.5, trials=30, codebooks=2, seed=6, workers=1)
        averaged = average_reports(run_experiment(bsc, bsc_solution, sweep))
        blocks = read_reports_text(reports_to_text(averaged))
        assert len(blocks) == 2
        for block, report in zip(blocks, averaged):
            assert list(block) == list(report.to_dict())
            assert block['n'] == str(report.n)
            assert block['exactness'] == EXACT
            assert block['sizes'] == ','.join(str(v) for v in report.sizes)
            assert float(block['kl_nats']) == pytest.approx(report.kl_nats, rel=1e-11)
            assert float(block['p_err']) == pytest.approx(report.p_err, rel=1e-11)
            assert block['rate_condition_flags'] == 'soft_covering=true, reliability=true'


class TestTrends:
    def test_kl_shrinks_above_soft_covering_rate(self, bsc, bsc_solution):
        """
        R + R_K is well above I(V;Z) here. At R=0.3, R_K=0.6 the sum sits just
        above I(V;Z) = 0.72 bits and, at n <= 8 with 5 codebooks, the average
        KL still rises from n=4 to n=8 and the starved contrast stays under 10x.
        """
        sweep = SweepConfig(n_list=[4, 8], R=0.5, R_K=1.5, trials=20, codebooks=5, seed=3, workers=1)
        reports = run_experiment(bsc, bsc_solution, sweep)
        assert average_kl(reports, 8) < average_kl(reports, 4)
        assert all(r.rate_condition_flags['soft_covering'] for r in reports)

        low = SweepConfig(n_list=[8], R=0.1, R_K=0.1, trials=20, codebooks=5, seed=3, workers=1)
        starved = run_experiment(bsc, bsc_solution, low)
        assert not starved[0].rate_condition_flags['soft_covering']
        assert average_kl(starved, 8) > 10 * average_kl(reports, 8)

    def test_reliability_contrast(self, bsc, bsc_solution):
        good = simulate_codebook(bsc, bsc_solution, SimConfig(n=8, R=0.125, R_K=1.0, trials=10000, seed=8))
        assert good.realized_R <= 0.25
        assert good.p_err <= 0.1
        assert good.rate_condition_flags['reliability']

        bad = simulate_codebook(bsc, bsc_solution, SimConfig(n=8, R=1.083, R_K=0.0, trials=10000, seed=8))
        assert bad.sizes[1] == 406
        assert bad.p_err >= 0.2
        assert not bad.rate_condition_flags['reliability']
