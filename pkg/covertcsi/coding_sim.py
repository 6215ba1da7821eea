"""
Random-coding schemes at small blocklengths
Builds codebooks for the causal (Shannon strategy) and noncausal (multicoding
with likelihood encoding) schemes, computes the warden's output distribution
and measures covertness and reliability
"""

import logging
import math
from dataclasses import dataclass, field, asdict
from itertools import product
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from config import SimConfig, SweepConfig, CODEBOOK_ENTRY_CAP
from covertcsi.exceptions import BudgetExceededError, EncoderAtypical
from covertcsi.parallel import run_indexed
from covertcsi.probability import (
    Pmf, ConditionalPmf, JointPmf, kl_divergence, tv_distance, mutual_information,
    n_fold_product, per_letter_divergences
)
from covertcsi.channel_model import (
    StateDmc, StrategyMap, q0, effective_channels, aux_state_laws
)
from covertcsi.covert_capacity import CapacitySolution, CAUSAL, NONCAUSAL

logger = logging.getLogger(__name__)

ROLE_CODEBOOK = 1
ROLE_TRIALS = 2
ROLE_MC = 3

EXACT = 'EXACT'
ESTIMATE = 'ESTIMATE'
DECODER = 'maximum-likelihood'

CHUNK_ELEMENTS = 1 << 22
MC_CHUNK = 1 << 16


def _log(x) -> np.ndarray:
    with np.errstate(divide='ignore'):
        return np.log(np.asarray(x, dtype=float))


def _stream(*words: int) -> np.random.Generator:
    """Counter-based generator keyed by the given integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(w) for w in words])))


def codebook_size(n: int, rate: float) -> int:
    """ceil(2^{nR}), at least 1."""
    if rate < 0:
        raise ValueError(f"rates must be non-negative, got {rate}")
    exponent = n * rate
    if exponent > 62:
        raise BudgetExceededError(f"2^{exponent:g} codewords cannot be stored")
    return max(1, math.ceil(2.0 ** exponent - 1e-9))


def derive_seed(*words: int) -> int:
    return int(np.random.SeedSequence([int(w) for w in words]).generate_state(1, dtype=np.uint64)[0])


@dataclass
class Codebook:
    """Aux-symbol sequences indexed by (k, m, l); l has a single value in causal mode"""
    entries: np.ndarray
    dist: Pmf
    seed: int
    mode: str = CAUSAL

    def __post_init__(self):
        entries = np.asarray(self.entries)
        if entries.ndim != 4:
            raise ValueError(f"codebook entries need shape (K, M, L, n), got {entries.shape}")
        if entries.size and (entries.min() < 0 or entries.max() >= self.dist.size):
            raise ValueError("codebook entries fall outside the aux alphabet")
        self.entries = entries

    @property
    def sizes(self) -> Tuple[int, int, int]:
        k, m, l, _ = self.entries.shape
        return k, m, l

    @property
    def n(self) -> int:
        return self.entries.shape[3]

    def realized_rates(self) -> Tuple[float, float, float]:
        """(R, R_K, R') actually used: log2(size)/n"""
        k, m, l = self.sizes
        return math.log2(m) / self.n, math.log2(k) / self.n, math.log2(l) / self.n


@dataclass
class SimReport:
    """Covertness and reliability of one codebook (codebook_index -1 for an average over draws)"""
    n: int
    mode: str
    codebook_index: int
    seed: int
    realized_R: float
    realized_RK: float
    realized_Rprime: float
    sizes: Tuple[int, int, int]
    trials: int
    errors: int
    p_err: Optional[float]
    p_err_halfwidth: Optional[float]
    kl_nats: float
    tv: float
    detection_bound: float
    optimal_test_sum: float
    exactness: str
    chain_sum_nats: float
    rate_condition_flags: Dict[str, bool] = field(default_factory=dict)
    encoder_atypical: int = 0
    codebooks: int = 1
    decoder: str = DECODER

    @property
    def kl_exact_nats(self) -> float:
        return self.kl_nats if self.exactness == EXACT else float('nan')

    @property
    def tv_exact(self) -> float:
        return self.tv if self.exactness == EXACT else float('nan')

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['sizes'] = list(self.sizes)
        return data

    def to_text(self) -> str:
        """Structured text, one 'key: value' line per field."""
        lines = []
        for key, value in self.to_dict().items():
            if isinstance(value, dict):
                value = ', '.join(f"{k}={format_cell(v)}" for k, v in value.items())
            elif isinstance(value, list):
                value = ','.join(format_cell(v) for v in value)
            lines.append(f"{key}: {format_cell(value)}")
        return '\n'.join(lines) + '\n'


def reports_to_text(reports: Sequence[SimReport]) -> str:
    """Report blocks separated by a blank line."""
    return '\n'.join(report.to_text() for report in reports)


def read_reports_text(text: str) -> List[Dict[str, str]]:
    """Split report text back into one {field: cell} dict per block."""
    blocks = []
    current: Dict[str, str] = {}
    for line in text.splitlines():
        if not line.strip():
            if current:
                blocks.append(current)
                current = {}
            continue
        key, _, value = line.partition(': ')
        current[key] = value
    if current:
        blocks.append(current)
    return blocks


# ---------------------------------------------------------------------------
# Codebook and encoders

def gen_codebook(cfg: SimConfig, dist: Pmf) -> Codebook:
    """
    Draw a codebook with IID entries from dist.

    Entries for key k come from a Philox stream keyed by
    (seed, codebook role, n, k) and are filled in (m, l, i) order, so each key
    can be regenerated on its own.

    Args:
        cfg: blocklength, rates, seed and mode
        dist: P_V (causal) or P_U (noncausal)

    Returns:
        Codebook of shape (K, M, L, n)
    """
    if cfg.n < 1:
        raise ValueError(f"blocklength must be at least 1, got {cfg.n}")
    if cfg.mode not in (CAUSAL, NONCAUSAL):
        raise ValueError(f"unknown mode '{cfg.mode}'")
    n_keys = codebook_size(cfg.n, cfg.R_K)
    n_msgs = codebook_size(cfg.n, cfg.R)
    n_bins = codebook_size(cfg.n, cfg.R_prime) if cfg.mode == NONCAUSAL else 1
    total = n_keys * n_msgs * n_bins * cfg.n
    if total > CODEBOOK_ENTRY_CAP:
        raise BudgetExceededError(
            f"codebook needs {total} symbols ({n_keys}x{n_msgs}x{n_bins}x{cfg.n}), cap is {CODEBOOK_ENTRY_CAP}")
    entries = np.empty((n_keys, n_msgs, n_bins, cfg.n), dtype=np.int32)
    for k in range(n_keys):
        rng = _stream(cfg.seed, ROLE_CODEBOOK, cfg.n, k)
        entries[k] = rng.choice(dist.size, size=(n_msgs, n_bins, cfg.n), p=dist.probs)
    logger.debug(f"Codebook n={cfg.n}: K={n_keys} M={n_msgs} L={n_bins}")
    return Codebook(entries=entries, dist=dist, seed=cfg.seed, mode=cfg.mode)


def shannon_encode(cb: Codebook, k: int, m: int, s_seq: Sequence[int], smap: StrategyMap) -> np.ndarray:
    """x_i = map(v_i(k,m), s_i)"""
    s_seq = np.asarray(s_seq, dtype=np.int64)
    return smap.table[cb.entries[k, m, 0], s_seq]


def _posterior(log_weights: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Normalize log-weights along the last axis; all -inf rows become a point mass on l=0."""
    peak = log_weights.max(axis=-1, keepdims=True)
    atypical = ~np.isfinite(peak[..., 0])
    shifted = np.where(np.isfinite(peak), peak, 0.0)
    weights = np.exp(log_weights - shifted)
    weights[atypical] = 0.0
    weights[atypical, 0] = 1.0
    return weights / weights.sum(axis=-1, keepdims=True), atypical


def multicoding_weights(cb: Codebook, k: int, m: int, s_seq: Sequence[int],
                        s_given_u: ConditionalPmf) -> np.ndarray:
    """
    Likelihood-encoder posterior g(l | s^n, k, m), proportional to prod_i P_{S|U}(s_i | u_i(k,m,l)).

    Raises:
        EncoderAtypical: every candidate gives s^n probability zero
    """
    s_seq = np.asarray(s_seq, dtype=np.int64)
    log_psu = _log(s_given_u.rows)
    log_w = log_psu[cb.entries[k, m], s_seq].sum(axis=-1)
    weights, atypical = _posterior(log_w)
    if atypical:
        raise EncoderAtypical(f"no multicoding candidate explains the state sequence (k={k}, m={m})")
    return weights


def likelihood_encode(cb: Codebook, k: int, m: int, s_seq: Sequence[int], rng: np.random.Generator,
                      smap: StrategyMap, s_given_u: ConditionalPmf) -> Tuple[int, np.ndarray]:
    """
    Pick the multicoding index l at random from the likelihood posterior and apply the map.

    Returns:
        (l, x^n)
    """
    weights = multicoding_weights(cb, k, m, s_seq, s_given_u)
    l = int(rng.choice(weights.size, p=weights))
    return l, smap.table[cb.entries[k, m, l], np.asarray(s_seq, dtype=np.int64)]


def _encode_batch(cb: Codebook, keys: np.ndarray, msgs: np.ndarray, states: np.ndarray,
                  rng: np.random.Generator, log_psu: Optional[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """Multicoding indices and atypical flags for a batch of trials."""
    count = keys.size
    _, _, n_bins = cb.sizes
    if n_bins == 1 or log_psu is None:
        return np.zeros(count, dtype=np.int64), np.zeros(count, dtype=bool)
    candidates = cb.entries[keys, msgs]
    log_w = log_psu[candidates, states[:, None, :]].sum(axis=-1)
    weights, atypical = _posterior(log_w)
    draws = rng.random(count)
    bins = (np.cumsum(weights, axis=1) < draws[:, None]).sum(axis=1)
    return np.minimum(bins, n_bins - 1), atypical


def _sample_outputs(ch: StateDmc, states: np.ndarray, inputs: np.ndarray,
                    rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    cum = np.cumsum(ch.law.rows, axis=1)
    cum[:, -1] = 1.0
    rows = states * ch.nx + inputs
    draws = rng.random(rows.shape)
    pair = (cum[rows] <= draws[..., None]).sum(axis=-1)
    pair = np.minimum(pair, ch.ny * ch.nz - 1)
    return pair // ch.nz, pair % ch.nz


def simulate_transmissions(ch: StateDmc, cb: Codebook, smap: StrategyMap, count: int,
                           rng: np.random.Generator,
                           s_given_u: Optional[ConditionalPmf] = None) -> Dict[str, np.ndarray]:
    """
    Send `count` blocks with uniform key and message through the channel.

    Args:
        ch: channel
        cb: codebook
        smap: strategy map
        count: number of blocks
        rng: randomness for keys, messages, states, multicoding and channel noise
        s_given_u: P_{S|U} for the likelihood encoder (noncausal mode)

    Returns:
        dict of arrays k, m, l (count,), s, x, y, z (count, n) and atypical (count,)
    """
    n_keys, n_msgs, _ = cb.sizes
    n = cb.n
    keys = rng.integers(n_keys, size=count)
    msgs = rng.integers(n_msgs, size=count)
    states = rng.choice(ch.ns, size=(count, n), p=ch.state_dist.probs)
    log_psu = _log(s_given_u.rows) if (s_given_u is not None and cb.mode == NONCAUSAL) else None
    bins, atypical = _encode_batch(cb, keys, msgs, states, rng, log_psu)
    aux = cb.entries[keys, msgs, bins]
    inputs = smap.table[aux, states]
    y, z = _sample_outputs(ch, states, inputs, rng)
    return {'k': keys, 'm': msgs, 'l': bins, 's': states, 'x': inputs, 'y': y, 'z': z,
            'atypical': atypical}


# ---------------------------------------------------------------------------
# Decoder

def decoding_law(ch: StateDmc, smap: StrategyMap, s_given_u: Optional[ConditionalPmf] = None) -> np.ndarray:
    """Per-aux-symbol output law at the receiver, with the state averaged over P_S or P_{S|U}."""
    if s_given_u is None:
        return effective_channels(ch, smap)[0]
    wy_us = aux_state_laws(ch, smap)[0]
    return np.einsum('us,usy->uy', s_given_u.rows, wy_us)


def ml_decode(cb: Codebook, k: int, y_seq: Sequence[int], ch: StateDmc, smap: StrategyMap,
              s_given_u: Optional[ConditionalPmf] = None) -> int:
    """Most likely message given the key; ties go to the smallest (m, l)."""
    log_w = _log(decoding_law(ch, smap, s_given_u))
    scores = log_w[cb.entries[k], np.asarray(y_seq, dtype=np.int64)].sum(axis=-1)
    _, _, n_bins = cb.sizes
    return int(np.argmax(scores.ravel())) // n_bins


def _decode_batch(cb: Codebook, keys: np.ndarray, y: np.ndarray, log_w: np.ndarray) -> np.ndarray:
    n_keys, n_msgs, n_bins = cb.sizes
    chunk = max(1, CHUNK_ELEMENTS // (n_msgs * n_bins * cb.n))
    decoded = np.empty(keys.size, dtype=np.int64)
    for start in range(0, keys.size, chunk):
        stop = min(start + chunk, keys.size)
        candidates = cb.entries[keys[start:stop]]
        scores = log_w[candidates, y[start:stop, None, None, :]].sum(axis=-1)
        flat = scores.reshape(stop - start, n_msgs * n_bins)
        decoded[start:stop] = np.argmax(flat, axis=1) // n_bins
    return decoded


# ---------------------------------------------------------------------------
# Warden

def _product_rows(laws: np.ndarray) -> np.ndarray:
    """laws (B, n, nz) -> (B, nz^n) product distributions, first letter most significant."""
    out = laws[:, 0, :]
    for i in range(1, laws.shape[1]):
        out = (out[:, :, None] * laws[:, i, None, :]).reshape(laws.shape[0], -1)
    return out


def _accumulate(total: np.ndarray, weights: np.ndarray, laws: np.ndarray):
    chunk = max(1, CHUNK_ELEMENTS // total.size)
    for start in range(0, weights.size, chunk):
        stop = min(start + chunk, weights.size)
        total += weights[start:stop] @ _product_rows(laws[start:stop])


def _z_labels(n: int) -> List[str]:
    return [f"Z{i + 1}" for i in range(n)]


def exact_warden_dist(cb: Codebook, ch: StateDmc, cfg: SimConfig, smap: StrategyMap,
                      s_given_u: Optional[ConditionalPmf] = None) -> JointPmf:
    """
    Exact distribution of Z^n induced by the code.

    Averages over uniform (k, m), the likelihood-encoding posterior over l
    (noncausal), every state sequence and the channel law.

    Raises:
        BudgetExceededError: |Z|^n or the enumeration work exceeds the caps in cfg
    """
    n = cb.n
    z_cells = ch.nz ** n
    if z_cells > cfg.exact_z_cap:
        raise BudgetExceededError(f"|Z|^n = {z_cells} exceeds the exact cap {cfg.exact_z_cap}")
    flat = cb.entries.reshape(-1, n)
    unique, inverse, counts = np.unique(flat, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    total = np.zeros(z_cells)

    if cb.mode == CAUSAL or s_given_u is None:
        work = unique.shape[0] * z_cells
        if work > cfg.exact_threshold:
            raise BudgetExceededError(f"exact enumeration needs {work} terms, cap is {cfg.exact_threshold}")
        wz = effective_channels(ch, smap)[1]
        _accumulate(total, counts / counts.sum(), wz[unique])
    else:
        work = ch.ns ** n * unique.shape[0] * z_cells
        if work > cfg.exact_threshold:
            raise BudgetExceededError(f"exact enumeration needs {work} terms, cap is {cfg.exact_threshold}")
        wz_us = aux_state_laws(ch, smap)[1]
        log_psu = _log(s_given_u.rows)
        n_keys, n_msgs, _ = cb.sizes
        p_s = ch.state_dist.probs
        for s_seq in product(range(ch.ns), repeat=n):
            s_arr = np.array(s_seq, dtype=np.int64)
            p_seq = float(np.prod(p_s[s_arr]))
            if p_seq == 0:
                continue
            weights, _ = _posterior(log_psu[cb.entries, s_arr].sum(axis=-1))
            per_codeword = np.bincount(inverse, weights=weights.ravel() * p_seq / (n_keys * n_msgs),
                                       minlength=unique.shape[0])
            used = np.flatnonzero(per_codeword > 0)
            _accumulate(total, per_codeword[used], wz_us[unique[used], s_arr])
    return JointPmf.normalized(total.reshape((ch.nz,) * n), _z_labels(n))


def estimate_warden_metrics(cb: Codebook, ch: StateDmc, cfg: SimConfig, smap: StrategyMap,
                            s_given_u: Optional[ConditionalPmf] = None) -> Tuple[float, float]:
    """
    Plug-in (KL nats, TV) of the empirical Z^n distribution against Q0^n.

    The plug-in KL is biased; it is only used when exact enumeration is over budget.
    """
    rng = _stream(cfg.seed, ROLE_MC, cfg.n)
    samples = []
    for start in range(0, cfg.mc_samples, MC_CHUNK):
        count = min(MC_CHUNK, cfg.mc_samples - start)
        sent = simulate_transmissions(ch, cb, smap, count, rng, s_given_u)
        samples.append(sent['z'].astype(np.int16))
    z = np.concatenate(samples)
    cells, counts = np.unique(z, axis=0, return_counts=True)
    p_hat = counts / counts.sum()
    ref = q0(ch).probs[cells].prod(axis=1)
    if np.any(ref == 0):
        kl = float('inf')
    else:
        kl = max(float(np.sum(p_hat * np.log(p_hat / ref))), 0.0)
    tv = 0.5 * (float(np.abs(p_hat - ref).sum()) + max(0.0, 1.0 - float(ref.sum())))
    return kl, min(tv, 1.0)


def covertness_metrics(p_hat, q0_n) -> Tuple[float, float, float, float]:
    """
    Warden statistics of an output distribution.

    Returns:
        (KL nats, TV, detection bound 1 - sqrt(KL) clamped at 0, optimal test's alpha + beta = 1 - TV)
    """
    kl = kl_divergence(p_hat, q0_n)
    tv = tv_distance(p_hat, q0_n)
    return kl, tv, _detection_bound(kl), 1.0 - tv


def _detection_bound(kl: float) -> float:
    if not math.isfinite(kl):
        return 0.0
    return max(0.0, 1.0 - math.sqrt(kl))


# ---------------------------------------------------------------------------
# Experiments

def _halfwidth(errors: int, trials: int) -> float:
    p = errors / trials
    return float(norm.ppf(0.975) * math.sqrt(p * (1.0 - p) / trials))


def rate_condition_flags(solution: CapacitySolution, ch: StateDmc, R: float, R_K: float,
                         R_prime: float = 0.0) -> Dict[str, bool]:
    """Sufficient conditions of the random-coding schemes, evaluated on the solution joint."""
    joint = solution.joint(ch)
    if solution.mode == CAUSAL:
        return {
            'soft_covering': bool(R + R_K > mutual_information(joint, 'V', 'Z')),
            'reliability': bool(R < mutual_information(joint, 'V', 'Y')),
        }
    return {
        'multicoding': bool(R_prime > mutual_information(joint, 'U', 'S')),
        'soft_covering': bool(R + R_K + R_prime > mutual_information(joint, 'U', 'Z')),
        'reliability': bool(R + R_prime < mutual_information(joint, 'U', 'Y')),
    }


def _scheme(solution: CapacitySolution, ch: StateDmc) -> Tuple[Pmf, Optional[ConditionalPmf]]:
    """Codebook distribution and, in noncausal mode, P_{S|U}."""
    if solution.mode == CAUSAL:
        return solution.aux_dist, None
    return solution.aux_marginal(ch), solution.joint(ch).conditional('S', 'U')


def simulate_codebook(ch: StateDmc, solution: CapacitySolution, cfg: SimConfig,
                      codebook_index: int = 0) -> SimReport:
    """Draw one codebook and measure its covertness and reliability."""
    if cfg.mode != solution.mode:
        raise ValueError(f"simulation mode '{cfg.mode}' does not match the solution mode '{solution.mode}'")
    dist, s_given_u = _scheme(solution, ch)
    smap = solution.map
    cb = gen_codebook(cfg, dist)
    n_keys, n_msgs, n_bins = cb.sizes
    R, R_K, R_prime = cb.realized_rates()

    try:
        p_hat = exact_warden_dist(cb, ch, cfg, smap, s_given_u)
        q0_n = n_fold_product(q0(ch), cfg.n, cap=cfg.exact_z_cap)
        kl, tv, bound, test_sum = covertness_metrics(p_hat, q0_n)
        chain = float(sum(per_letter_divergences(p_hat, q0(ch))))
        exactness = EXACT
    except BudgetExceededError as e:
        logger.warning(f"n={cfg.n}: {e}; using a Monte Carlo plug-in estimate "
                       f"from {cfg.mc_samples} samples (biased)")
        kl, tv = estimate_warden_metrics(cb, ch, cfg, smap, s_given_u)
        bound, test_sum = _detection_bound(kl), 1.0 - tv
        chain = float('nan')
        exactness = ESTIMATE

    errors, atypical = 0, 0
    p_err, halfwidth = None, None
    if n_msgs > 1 and cfg.trials > 0:
        rng = _stream(cfg.seed, ROLE_TRIALS, cfg.n)
        sent = simulate_transmissions(ch, cb, smap, cfg.trials, rng, s_given_u)
        log_w = _log(decoding_law(ch, smap, s_given_u))
        decoded = _decode_batch(cb, sent['k'], sent['y'], log_w)
        errors = int(np.count_nonzero(decoded != sent['m']))
        atypical = int(np.count_nonzero(sent['atypical']))
        p_err = errors / cfg.trials
        halfwidth = _halfwidth(errors, cfg.trials)
        if atypical:
            logger.warning(f"n={cfg.n}: {atypical} encoder-atypical trials (l=0 substituted)")

    report = SimReport(
        n=cfg.n,
        mode=cfg.mode,
        codebook_index=codebook_index,
        seed=cfg.seed,
        realized_R=R,
        realized_RK=R_K,
        realized_Rprime=R_prime,
        sizes=(n_keys, n_msgs, n_bins),
        trials=cfg.trials if n_msgs > 1 else 0,
        errors=errors,
        p_err=p_err,
        p_err_halfwidth=halfwidth,
        kl_nats=kl,
        tv=tv,
        detection_bound=bound,
        optimal_test_sum=test_sum,
        exactness=exactness,
        chain_sum_nats=chain,
        rate_condition_flags=rate_condition_flags(solution, ch, R, R_K, R_prime),
        encoder_atypical=atypical,
    )
    logger.info(f"n={cfg.n} codebook {codebook_index}: KL={kl:.6g} nats, TV={tv:.4f}, "
                f"p_err={'NA' if p_err is None else f'{p_err:.4f}'} ({exactness})")
    return report


def run_experiment(ch: StateDmc, solution: CapacitySolution, sweep: SweepConfig) -> List[SimReport]:
    """
    Run every (n, codebook draw) of a sweep.

    The seed of each draw is derived from (master seed, n, draw), so reports
    do not depend on the worker count or scheduling.

    Returns:
        per-codebook reports ordered by n, then draw
    """
    if not sweep.n_list:
        raise ValueError("the sweep needs at least one blocklength")
    if sweep.codebooks < 1:
        raise ValueError(f"need at least one codebook draw, got {sweep.codebooks}")
    tasks = [(n, draw) for n in sweep.n_list for draw in range(sweep.codebooks)]
    logger.info(f"Simulation sweep: n in {list(sweep.n_list)}, {sweep.codebooks} codebooks each, "
                f"{sweep.trials} trials per codebook")

    def task(index: int, item: Tuple[int, int]) -> SimReport:
        n, draw = item
        cfg = sweep.config_for(n, derive_seed(sweep.seed, n, draw), solution.mode)
        return simulate_codebook(ch, solution, cfg, draw)

    return run_indexed(task, tasks, sweep.workers)


def average_reports(reports: Sequence[SimReport]) -> List[SimReport]:
    """
    One report per blocklength: pooled decoding errors and mean KL/TV over codebook draws.

    The detection bound is recomputed from the mean KL.
    """
    by_n: Dict[int, List[SimReport]] = {}
    for report in reports:
        by_n.setdefault(report.n, []).append(report)
    averaged = []
    for n in sorted(by_n):
        group = by_n[n]
        first = group[0]
        trials = sum(r.trials for r in group)
        errors = sum(r.errors for r in group)
        kl = float(np.mean([r.kl_nats for r in group]))
        tv = float(np.mean([r.tv for r in group]))
        averaged.append(SimReport(
            n=n,
            mode=first.mode,
            codebook_index=-1,
            seed=first.seed,
            realized_R=first.realized_R,
            realized_RK=first.realized_RK,
            realized_Rprime=first.realized_Rprime,
            sizes=first.sizes,
            trials=trials,
            errors=errors,
            p_err=errors / trials if trials else None,
            p_err_halfwidth=_halfwidth(errors, trials) if trials else None,
            kl_nats=kl,
            tv=tv,
            detection_bound=_detection_bound(kl),
            optimal_test_sum=1.0 - tv,
            exactness=EXACT if all(r.exactness == EXACT for r in group) else ESTIMATE,
            chain_sum_nats=float(np.mean([r.chain_sum_nats for r in group])),
            rate_condition_flags=dict(first.rate_condition_flags),
            encoder_atypical=sum(r.encoder_atypical for r in group),
            codebooks=len(group),
        ))
    return averaged


# ---------------------------------------------------------------------------
# CSV rows

def format_cell(value) -> str:
    if value is None:
        return 'NA'
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        if math.isnan(value):
            return 'NA'
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return f"{value:.12g}"
    return str(value)


def csv_row(report: SimReport) -> List[str]:
    """Cells in the sweep CSV column order."""
    return [format_cell(v) for v in (
        report.n,
        report.realized_R,
        report.realized_RK,
        report.realized_Rprime,
        report.p_err,
        report.p_err_halfwidth,
        report.kl_nats,
        report.tv,
        report.detection_bound,
        report.exactness,
    )]
