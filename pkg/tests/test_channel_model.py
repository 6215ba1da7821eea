"""
Tests for channel representation, validation and channel files
"""

import json
import math

import numpy as np
import pytest

from conftest import ALL_STRATEGIES, bsc_law, random_channel
from covertcsi.exceptions import ChannelParseError, ChannelValidationError
from covertcsi.probability import Pmf, ConditionalPmf, mutual_information
from covertcsi.channel_model import (
    StateDmc, StrategyMap, q0, forbidden_inputs, validate, effective_channels, causal_joint,
    noncausal_joint, cost_and_covert_residuals, x0_redundant, channel_to_dict, canonical_text,
    save_channel, parse_channel, read_channel, load_channel
)


def bsc_dict():
    return {
        'nx': 2, 'ns': 2, 'ny': 2, 'nz': 2, 'x0': 0,
        'P_S': [0.8, 0.2],
        'law': bsc_law().tolist(),
        'cost': [0, 1],
        'budget': None,
        'key_rate_bits': 1,
    }


class TestBundledChannels:
    def test_bsc_fixture(self, bsc):
        assert (bsc.nx, bsc.ns, bsc.ny, bsc.nz) == (2, 2, 2, 2)
        assert np.allclose(q0(bsc).probs, [0.8, 0.2])
        assert math.isinf(bsc.budget)
        assert bsc.key_rate == 1.0

    def test_bsc_is_valid(self, bsc_path):
        _, report = read_channel(bsc_path)
        assert report.ok
        assert report.forbidden == []

    def test_canonical_round_trip_is_byte_identical(self, bsc_path, tmp_path):
        with open(bsc_path, 'r', encoding='utf-8') as f:
            original = f.read()
        out = tmp_path / 'bsc.json'
        save_channel(load_channel(bsc_path), str(out))
        assert out.read_text(encoding='utf-8') == original

    def test_degraded_warden_q0(self, degraded_warden):
        assert np.allclose(q0(degraded_warden).probs, [0.8 * 0.9 + 0.2 * 0.1, 0.8 * 0.1 + 0.2 * 0.9])


class TestParsing:
    def test_missing_field_names_it(self):
        data = bsc_dict()
        del data['law']
        with pytest.raises(ChannelParseError) as info:
            parse_channel(json.dumps(data))
        assert info.value.field == 'law'
        assert 'law' in str(info.value)

    def test_malformed_json_reports_position(self):
        with pytest.raises(ChannelParseError) as info:
            parse_channel('{"nx": 2,,}')
        assert info.value.line == 1

    def test_wrong_shape(self):
        data = bsc_dict()
        data['cost'] = [0, 1, 2]
        with pytest.raises(ChannelParseError) as info:
            parse_channel(json.dumps(data))
        assert info.value.field == 'cost'

    def test_bad_row_sum_is_semantic(self):
        data = bsc_dict()
        data['law'][1][0][0][0] = 0.5
        with pytest.raises(ChannelValidationError) as info:
            parse_channel(json.dumps(data))
        assert info.value.report.row_errors[0][:2] == (1, 0)

    def test_negative_entry_is_semantic(self):
        data = bsc_dict()
        data['law'][0][1][1][1] = 1.5
        data['law'][0][1][0][0] = -0.5
        with pytest.raises(ChannelValidationError) as info:
            parse_channel(json.dumps(data))
        assert (0, 1) in info.value.report.negative_entries

    def test_tiny_row_error_is_renormalized(self):
        data = bsc_dict()
        data['law'][0][0][0][0] = 1.0 + 5e-10
        ch, report = parse_channel(json.dumps(data))
        assert report.renormalized_rows == [(0, 0)]
        assert ch.law.rows[0].sum() == pytest.approx(1.0, abs=1e-15)
        assert report.ok

    def test_negative_cost(self):
        data = bsc_dict()
        data['cost'] = [0, -1]
        with pytest.raises(ChannelValidationError):
            parse_channel(json.dumps(data))

    @pytest.mark.parametrize('name', ['budget', 'key_rate_bits'])
    @pytest.mark.parametrize('literal', ['NaN', 'Infinity', '-Infinity'])
    def test_non_finite_scalars(self, name, literal):
        data = bsc_dict()
        data[name] = 0.5
        text = json.dumps(data).replace(f'"{name}": 0.5', f'"{name}": {literal}')
        assert literal in text
        with pytest.raises(ChannelParseError) as info:
            parse_channel(text)
        assert info.value.field == name


class TestValidation:
    def test_forbidden_input(self):
        # x=1 reaches z=1 while Q0(1)=0
        law = np.zeros((1, 2, 1, 2))
        law[0, 0, 0, 0] = 1.0
        law[0, 1, 0, :] = [0.5, 0.5]
        ch = StateDmc.from_tensor([1.0], law)
        report = validate(ch)
        assert forbidden_inputs(ch) == [1]
        assert report.forbidden == [1]
        assert not report.supp_ok
        assert not report.ok

    def test_full_support_is_ok(self):
        report = validate(random_channel(5))
        assert report.ok


class TestStrategyMaps:
    def test_canonical_sorts_rows(self):
        smap = StrategyMap([[1, 0], [0, 1], [0, 0]])
        assert smap.canonical().to_list() == [[0, 0], [0, 1], [1, 0]]

    def test_check_rejects_out_of_range(self, bsc):
        with pytest.raises(ValueError):
            StrategyMap([[0, 2]]).check(bsc)
        with pytest.raises(ValueError):
            StrategyMap([[0, 1, 0]]).check(bsc)

    def test_effective_channels_bsc(self, bsc):
        wy, wz, cost = effective_channels(bsc, StrategyMap(ALL_STRATEGIES))
        expected = [[0.8, 0.2], [1.0, 0.0], [0.0, 1.0], [0.2, 0.8]]
        assert np.allclose(wy, expected)
        assert np.allclose(wz, expected)
        assert np.allclose(cost, [0.0, 0.2, 0.8, 1.0])


class TestJoints:
    def test_causal_joint_bsc_optimum(self, bsc):
        joint = causal_joint(bsc, Pmf([0.0, 0.8, 0.2, 0.0]), StrategyMap(ALL_STRATEGIES))
        cost, divergence = cost_and_covert_residuals(joint, bsc)
        assert cost == pytest.approx(0.32)
        assert divergence == pytest.approx(0.0, abs=1e-12)
        assert mutual_information(joint, 'V', 'Y') == pytest.approx(0.721928, abs=1e-6)
        # V and S are independent under causal CSI
        assert mutual_information(joint, 'V', 'S') == pytest.approx(0.0, abs=1e-12)

    def test_noncausal_joint_state_marginal(self, bsc):
        smap = StrategyMap(ALL_STRATEGIES)
        rows = ConditionalPmf([[0.1, 0.2, 0.3, 0.4], [0.4, 0.3, 0.2, 0.1]])
        joint = noncausal_joint(bsc, rows, smap)
        assert np.allclose(joint.project(['S']), [0.8, 0.2])
        assert joint.axes == ('U', 'S', 'X', 'Y', 'Z')

    def test_constant_map_gives_q0(self, bsc):
        joint = causal_joint(bsc, Pmf([1.0]), StrategyMap.constant(1, 2, bsc.x0))
        assert np.allclose(joint.project(['Z']), q0(bsc).probs)


class TestRedundancy:
    def test_bsc_x0_not_redundant(self, bsc):
        # state averaged: x=0 -> Bern(0.2), x=1 -> Bern(0.8)
        assert not x0_redundant(bsc)

    def test_mixture_is_redundant(self):
        law = np.zeros((1, 3, 1, 2))
        law[0, 0, 0] = [0.5, 0.5]
        law[0, 1, 0] = [1.0, 0.0]
        law[0, 2, 0] = [0.0, 1.0]
        assert x0_redundant(StateDmc.from_tensor([1.0], law))


def test_canonical_text_format():
    text = canonical_text({'b': [0.5, 1], 'a': None})
    assert text == '{\n  "a": null,\n  "b": [0.5, 1]\n}\n'
