"""
Tests for the command-line interface
"""

import json

import numpy as np
import pytest
from openpyxl import load_workbook

from conftest import bsc_law
from config import CSV_COLUMNS, SURFACE_COLUMNS
from covertcsi.cli import main, EXIT_OK, EXIT_SEMANTIC, EXIT_PARSE, EXIT_COMPUTATION
from covertcsi.coding_sim import read_reports_text
from database_manager import RunRegistry

BSC_AUX = '0,0.8,0.2,0'
BSC_MAP = '0,0;0,1;1,0;1,1'


def write_channel(tmp_path, name, law, p_s=(0.8, 0.2)):
    data = {
        'nx': law.shape[1], 'ns': law.shape[0], 'ny': law.shape[2], 'nz': law.shape[3], 'x0': 0,
        'P_S': list(p_s),
        'law': law.tolist(),
        'cost': list(range(law.shape[1])),
        'budget': None,
        'key_rate_bits': 1,
    }
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding='utf-8')
    return str(path)


class TestValidate:
    def test_valid_channel(self, bsc_path, capsys):
        assert main(['--no-registry', 'validate', bsc_path]) == EXIT_OK
        assert 'Channel is valid' in capsys.readouterr().out

    def test_row_sum_error(self, tmp_path):
        law = bsc_law()
        law[0, 0, 0, 0] = 0.5
        path = write_channel(tmp_path, 'bad.json', law)
        assert main(['--no-registry', 'validate', path]) == EXIT_SEMANTIC

    def test_forbidden_input(self, tmp_path, capsys):
        law = np.zeros((1, 2, 1, 2))
        law[0, 0, 0, 0] = 1.0
        law[0, 1, 0, :] = [0.5, 0.5]
        path = write_channel(tmp_path, 'forbidden.json', law, p_s=(1.0,))
        assert main(['--no-registry', 'validate', path]) == EXIT_SEMANTIC
        assert 'FORBIDDEN inputs: [1]' in capsys.readouterr().out

    def test_malformed_json(self, tmp_path):
        path = tmp_path / 'broken.json'
        path.write_text('{"nx": 2,', encoding='utf-8')
        assert main(['--no-registry', 'validate', str(path)]) == EXIT_PARSE

    def test_missing_file(self, tmp_path):
        assert main(['--no-registry', 'validate', str(tmp_path / 'nope.json')]) == EXIT_PARSE


class TestCapacity:
    def test_solution_file_and_manifest(self, bsc_path, tmp_path, capsys):
        out = tmp_path / 'sol.json'
        code = main(['--no-registry', 'capacity', bsc_path, '--restarts', '4', '--out', str(out)])
        assert code == EXIT_OK
        assert 'Rate: 0.72' in capsys.readouterr().out
        data = json.loads(out.read_text(encoding='utf-8'))
        assert data['mode'] == 'causal'
        assert data['rate_bits'] == pytest.approx(0.721928, abs=1e-3)
        manifest = json.loads((tmp_path / 'sol.json.manifest.json').read_text(encoding='utf-8'))
        assert manifest['command'] == 'capacity'
        assert manifest['exit_code'] == EXIT_OK
        assert len(manifest['channel_digest']) == 64

    def test_run_is_registered(self, bsc_path, tmp_path):
        db = str(tmp_path / 'runs.sqlite3')
        assert main(['--registry', db, 'capacity', bsc_path, '--restarts', '4']) == EXIT_OK
        runs = RunRegistry(db).get_runs()
        assert runs['total'] == 1
        assert runs['results'][0]['command'] == 'capacity'
        assert runs['results'][0]['exit_code'] == EXIT_OK
        assert runs['results'][0]['config']['mode'] == 'causal'

    def test_infeasible_budget(self, tmp_path):
        path = write_channel(tmp_path, 'costly.json', bsc_law())
        data = json.loads(open(path, encoding='utf-8').read())
        data['cost'] = [1, 1]
        data['budget'] = 0.5
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(data, f)
        assert main(['--no-registry', 'capacity', path]) == EXIT_COMPUTATION


class TestAwgn:
    def test_full_cancellation(self, capsys):
        assert main(['--no-registry', 'awgn', '--P', '2', '--T', '1']) == EXIT_OK
        assert 'rate_noncausal_bits: 0.500000' in capsys.readouterr().out

    def test_zero_interference_is_rejected(self):
        assert main(['--no-registry', 'awgn', '--P', '1', '--T', '0']) == EXIT_COMPUTATION


class TestSimulate:
    def sweep_args(self, bsc_path, out):
        return ['--no-registry', 'simulate', bsc_path, '--aux', BSC_AUX, '--map', BSC_MAP,
                '--n-list', '2,4', '--R', '0.5', '--RK', '0.5', '--trials', '50',
                '--codebooks', '2', '--seed', '5', '--out', str(out)]

    def test_csv_is_reproducible(self, bsc_path, tmp_path):
        first, second = tmp_path / 'a.csv', tmp_path / 'b.csv'
        assert main(self.sweep_args(bsc_path, first)) == EXIT_OK
        assert main(self.sweep_args(bsc_path, second)) == EXIT_OK
        text = first.read_text(encoding='utf-8')
        assert text == second.read_text(encoding='utf-8')
        lines = text.splitlines()
        assert lines[0] == ','.join(CSV_COLUMNS)
        assert [line.split(',')[0] for line in lines[1:]] == ['2', '4']
        assert all(line.endswith('EXACT') for line in lines[1:])

    def test_workbook(self, bsc_path, tmp_path):
        xlsx = tmp_path / 'sweep.xlsx'
        args = self.sweep_args(bsc_path, tmp_path / 'c.csv') + ['--xlsx', str(xlsx)]
        assert main(args) == EXIT_OK
        wb = load_workbook(xlsx)
        assert wb.sheetnames == ['Sweep Averages', 'Codebooks', 'Summary']
        assert wb['Codebooks'].max_row == 5

    def test_text_report(self, bsc_path, tmp_path):
        report = tmp_path / 'sweep.txt'
        out = tmp_path / 'd.csv'
        assert main(self.sweep_args(bsc_path, out) + ['--report', str(report)]) == EXIT_OK
        blocks = read_reports_text(report.read_text(encoding='utf-8'))
        rows = [line.split(',') for line in out.read_text(encoding='utf-8').splitlines()[1:]]
        assert [b['n'] for b in blocks] == ['2', '4']
        for block, row in zip(blocks, rows):
            assert block['kl_nats'] == row[CSV_COLUMNS.index('kl_nats')]
            assert block['p_err'] == row[CSV_COLUMNS.index('p_err')]
            assert block['exactness'] == row[-1]
            assert block['codebooks'] == '2'
        manifest = json.loads((tmp_path / 'sweep.txt.manifest.json').read_text(encoding='utf-8'))
        assert str(report) in manifest['outputs']

    def test_aux_without_map(self, bsc_path):
        assert main(['--no-registry', 'simulate', bsc_path, '--aux', BSC_AUX, '--R', '0.5']) == EXIT_COMPUTATION


class TestSurface:
    def test_csv(self, bsc_path, tmp_path):
        out = tmp_path / 'surface.csv'
        code = main(['--no-registry', 'surface', bsc_path, '--A-grid', '0', '--B-grid', '0.2,inf',
                     '--restarts', '4', '--out', str(out)])
        assert code == EXIT_OK
        lines = out.read_text(encoding='utf-8').splitlines()
        assert lines[0] == ','.join(SURFACE_COLUMNS)
        assert len(lines) == 3
        assert lines[2].split(',')[1] == 'inf'
        assert float(lines[1].split(',')[2]) <= float(lines[2].split(',')[2]) + 1e-6


class TestRuns:
    def test_listing_pages(self, bsc_path, tmp_path, capsys):
        db = str(tmp_path / 'runs.sqlite3')
        assert main(['--registry', db, 'validate', bsc_path]) == EXIT_OK
        assert main(['--registry', db, 'awgn', '--P', '2', '--T', '1']) == EXIT_OK
        assert main(['--registry', db, 'awgn', '--P', '1', '--T', '0']) == EXIT_COMPUTATION
        capsys.readouterr()

        assert main(['--registry', db, 'runs', '--size', '2']) == EXIT_OK
        out = capsys.readouterr().out
        assert '3 total, page 1 of 2' in out
        assert '#3 awgn' in out
        assert '#2 awgn' in out
        assert '#1 validate' not in out
        assert 'more: --page 2' in out

        assert main(['--registry', db, 'runs', '--filter', 'validate']) == EXIT_OK
        out = capsys.readouterr().out
        assert '1 total' in out
        assert '#1 validate' in out

    def test_listing_is_not_recorded(self, tmp_path):
        db = str(tmp_path / 'runs.sqlite3')
        assert main(['--registry', db, 'runs']) == EXIT_OK
        assert RunRegistry(db).get_runs()['total'] == 0
