import json

import numpy as np
import pandas as pd
import pytest

from errors import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, DataError, NumericError, UsageError
from orchestrator import ARTIFACT_KINDS, PipelineOrchestrator
from pipeline_config import build_run_config
from run_pipeline import build_parser, main

FAST = ['--epochs', '1', '--timesteps', '50', '--base-width', '4', '--batch-size', '64', '--rows', '20',
        '--seed', '3']


def orchestrator(*argv):
    return PipelineOrchestrator(build_run_config(build_parser().parse_args(list(argv))))


def run_toy(toy_csv, out, *extra):
    schema, csv = toy_csv
    return orchestrator('pipeline', '--schema', str(schema), '--train-csv', str(csv), '--out', str(out),
                        *FAST, *extra).cmd_pipeline()


def test_pipeline_lists_six_artifacts(toy_csv, tmp_path):
    manifest = run_toy(toy_csv, tmp_path / 'run')
    assert set(manifest.artifacts) == set(ARTIFACT_KINDS)
    assert len(manifest.artifacts) == 6
    assert [s['name'] for s in manifest.stages] == ['fit', 'layout', 'train', 'sample', 'audit']
    assert manifest.status == 'ok'

    saved = json.loads((tmp_path / 'run' / 'manifest.json').read_text(encoding='utf-8'))
    assert saved['artifacts'] == manifest.artifacts
    assert str(toy_csv[1]) in saved['inputs']
    for relative in saved['artifact_hashes']:
        assert (tmp_path / 'run' / relative).exists()
    assert len((tmp_path / 'run' / 'synthetic.csv').read_text().splitlines()) == 21


def test_same_seed_same_synthetic_bytes(toy_csv, tmp_path):
    run_toy(toy_csv, tmp_path / 'a')
    run_toy(toy_csv, tmp_path / 'b')
    for name in ('synthetic.csv', 'model.ckpt', 'layout.tsv'):
        assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes()


def test_non_empty_output_needs_force(toy_csv, tmp_path):
    run_toy(toy_csv, tmp_path / 'run')
    with pytest.raises(UsageError):
        run_toy(toy_csv, tmp_path / 'run')
    assert run_toy(toy_csv, tmp_path / 'run', '--force').status == 'ok'


def test_stage_failure_keeps_manifest(tmp_path, toy_csv):
    schema, _ = toy_csv
    bad = tmp_path / 'bad.csv'
    bad.write_text('x,flag\nabc,yes\n1.0,no\n', encoding='utf-8')
    with pytest.raises(DataError) as info:
        orchestrator('pipeline', '--schema', str(schema), '--train-csv', str(bad), '--out',
                     str(tmp_path / 'run'), *FAST).cmd_pipeline()
    assert info.value.stage == 'fit'
    saved = json.loads((tmp_path / 'run' / 'manifest.json').read_text(encoding='utf-8'))
    assert saved['status'] == 'failed'
    assert saved['failed_stage'] == 'fit'


def test_sample_command_reproduces_pipeline_output(toy_csv, tmp_path):
    run_toy(toy_csv, tmp_path / 'run')
    manifest = orchestrator('sample', '--checkpoint', str(tmp_path / 'run' / 'model.ckpt'), '--rows', '20',
                            '--seed', '3', '--out', str(tmp_path / 'again')).cmd_sample()
    assert manifest.artifacts['synthetic_csv'] == 'synthetic.csv'
    assert (tmp_path / 'run' / 'synthetic.csv').read_bytes() == (tmp_path / 'again' / 'synthetic.csv').read_bytes()


def test_audit_and_compare_commands(toy_csv, tmp_path):
    schema, csv = toy_csv
    run_toy(toy_csv, tmp_path / 'a')
    run_toy(toy_csv, tmp_path / 'b', '--layout', 'baseline')
    report = orchestrator('audit', '--schema', str(schema), '--real-csv', str(csv), '--synth-csv',
                          str(tmp_path / 'a' / 'synthetic.csv'), '--out', str(tmp_path / 'audit')).cmd_audit()
    assert 0.0 <= report.fidelity.overall <= 1.0
    assert (tmp_path / 'audit' / 'audit_report.md').exists()

    text = orchestrator('compare', '--runs', str(tmp_path / 'a'), str(tmp_path / 'b'), '--out',
                        str(tmp_path / 'cmp')).cmd_compare()
    assert '| метрика | a | b |' in text
    assert (tmp_path / 'cmp' / 'comparison.md').exists()


def test_charts_are_auxiliary(toy_csv, tmp_path):
    manifest = run_toy(toy_csv, tmp_path / 'run', '--charts')
    assert any(path.endswith('loss.png') for path in manifest.auxiliary)
    assert (tmp_path / 'run' / 'charts' / 'layout_map.png').exists()
    assert len(manifest.artifacts) == 6


def test_gradcheck_passes_on_fixture(tmp_path):
    result = orchestrator('gradcheck', '--seed', '1').cmd_gradcheck()
    assert result['passed']
    assert result['max_relative_error'] < 1e-3


def test_gradcheck_fails_with_corrupted_backward():
    def corrupt(grads):
        return {name: g + 1.0 for name, g in grads.items()}

    with pytest.raises(NumericError) as info:
        orchestrator('gradcheck', '--seed', '1').cmd_gradcheck(hook=corrupt)
    assert info.value.exit_code == EXIT_NUMERIC


def test_cli_exit_codes(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    with pytest.raises(SystemExit) as info:
        main(['gradcheck', '--seed', '2'])
    assert info.value.code == EXIT_OK

    with pytest.raises(SystemExit) as info:
        main(['pipeline', '--out', str(tmp_path / 'run')])
    assert info.value.code == EXIT_USAGE

    with pytest.raises(SystemExit) as info:
        main(['pipeline', '--epochs', 'many'])
    assert info.value.code == EXIT_USAGE


def test_cli_data_error_exit_code(monkeypatch, tmp_path, toy_csv):
    monkeypatch.chdir(tmp_path)
    schema, _ = toy_csv
    with pytest.raises(SystemExit) as info:
        main(['fit', '--schema', str(schema), '--train-csv', str(tmp_path / 'missing.csv'), '--out',
              str(tmp_path / 'run')])
    assert info.value.code == EXIT_DATA


def test_audit_report_bytes_repeat(toy_csv, tmp_path):
    run_toy(toy_csv, tmp_path / 'a')
    run_toy(toy_csv, tmp_path / 'b')
    for name in ('audit_report.json', 'audit_report.md'):
        assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes()


def test_no_clamp_flag_reaches_sampling(toy_csv, tmp_path):
    """Без обрезки ненатренированная сеть уводит числа за обученный диапазон"""
    clamped = run_toy(toy_csv, tmp_path / 'clamped')
    raw = run_toy(toy_csv, tmp_path / 'raw', '--no-clamp')
    assert clamped.summary['sampling']['clamp'] is True
    assert raw.summary['sampling']['clamp'] is False

    real = pd.read_csv(toy_csv[1])
    low, high = real['x'].min(), real['x'].max()
    inside = pd.read_csv(tmp_path / 'clamped' / 'synthetic.csv')['x']
    outside = pd.read_csv(tmp_path / 'raw' / 'synthetic.csv')['x']
    assert inside.between(low, high).all()
    assert not outside.between(low, high).all()


def test_dump_grids_and_decode_from_dump(toy_csv, tmp_path):
    manifest = run_toy(toy_csv, tmp_path / 'run', '--dump-grids')
    dump = tmp_path / 'run' / 'grids.txt'
    assert 'grids.txt' in manifest.auxiliary
    assert len(dump.read_text(encoding='utf-8').splitlines()) == 20

    again = orchestrator('sample', '--checkpoint', str(tmp_path / 'run' / 'model.ckpt'), '--grids', str(dump),
                         '--out', str(tmp_path / 'decoded')).cmd_sample()
    assert again.summary['sampling']['source'] == 'grids'
    assert str(dump) in again.inputs

    original = pd.read_csv(tmp_path / 'run' / 'synthetic.csv')
    decoded = pd.read_csv(tmp_path / 'decoded' / 'synthetic.csv')
    assert list(decoded['flag']) == list(original['flag'])
    assert np.allclose(decoded['x'], original['x'], atol=1e-3)


def test_posterior_variance_flag(toy_csv, tmp_path):
    manifest = run_toy(toy_csv, tmp_path / 'post', '--variance', 'posterior', '--no-clamp')
    run_toy(toy_csv, tmp_path / 'beta', '--no-clamp')
    assert manifest.summary['sampling']['variance'] == 'posterior'
    assert (tmp_path / 'post' / 'synthetic.csv').read_bytes() != (tmp_path / 'beta' / 'synthetic.csv').read_bytes()
