#!/usr/bin/env python3
"""Tests for the command line entry points."""
import json

import pytest

import rrc_cli
from rrc_cli import build_parser, experiment_config, main


def _synth(tmp_path, seed=3):
    out = tmp_path / 'synth'
    main(['synth-gen', '--seed', str(seed), '-o', str(out), '--classes', '3', '--train-per-class', '3',
          '--test-per-class', '2', '--impostor-classes', '2', '--size', '7x8'])
    return out


def test_synth_gen_writes_manifest(tmp_path, capsys):
    out = _synth(tmp_path)
    manifest = json.loads((out / 'manifest.json').read_text())
    assert set(manifest) == {'train', 'test', 'impostors'}
    assert 'manifest' in capsys.readouterr().out


def test_code_prints_json_and_writes_maps(tmp_path, capsys):
    out = _synth(tmp_path)
    capsys.readouterr()
    weight_map = tmp_path / 'weights.png'
    main(['code', str(out / 'class01/03.pgm'), '--dataset', str(out), '--beta', '1',
          '--weight-map', str(weight_map), '--initial-weight-map', str(tmp_path / 'w0.png'),
          '--reconstruction', str(tmp_path / 'rec.png'), '--include-weights'])
    result = json.loads(capsys.readouterr().out)
    assert result['predicted_class'] == 1
    assert result['class_name'] == '01'
    assert len(result['weights']) == 56
    assert weight_map.is_file() and (tmp_path / 'rec.png').is_file() and (tmp_path / 'w0.png').is_file()


def test_benchmark_requires_seed(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(['recognize', '-o', str(tmp_path)])
    assert exc.value.code == 1
    assert capsys.readouterr().err.startswith('Error:')


def test_flags_override_config_file(tmp_path):
    path = tmp_path / 'experiment.json'
    path.write_text(json.dumps({'seed': 1, 'workers': 2, 'corruption_levels': [0.1],
                                'coder': {'lambda': 0.01}}))
    args = build_parser().parse_args(['corrupt-bench', '--config', str(path), '--seed', '9',
                                      '--levels', '0,0.5', '--tau', '0.7'])
    config = experiment_config(args, 'corruption')
    assert config.seed == 9
    assert config.workers == 2
    assert config.corruption_levels == [0.0, 0.5]
    assert (config.coder.lam, config.coder.tau) == (0.01, 0.7)


def test_coder_flags_without_file_start_from_preset():
    args = build_parser().parse_args(['occlude-bench', '--seed', '1', '--lambda', '0.002', '--levels', '0.1'])
    config = experiment_config(args, 'occlusion')
    assert config.coder.tau == 0.6 and config.coder.lam == 0.002
    assert config.occlusion_levels == [0.1]


def test_default_corrupt_bench_runs_are_byte_identical(tmp_path, capsys):
    data = _synth(tmp_path)
    for run in ('a', 'b'):
        main(['corrupt-bench', '--seed', '5', '--dataset', str(data), '--levels', '0,0.3',
              '--methods', 'RRC_L2,ridge,NN', '-o', str(tmp_path / run)])
    for name in ('metrics.csv', 'queries.csv'):
        assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes()
    assert 'Wrote' in capsys.readouterr().out


def test_timing_is_opt_in():
    args = build_parser().parse_args(['recognize', '--seed', '1'])
    assert not experiment_config(args, 'none').timing
    args = build_parser().parse_args(['recognize', '--seed', '1', '--timing'])
    assert experiment_config(args, 'none').timing


def test_validate_roc_prints_area(tmp_path, capsys):
    data = _synth(tmp_path)
    main(['validate-roc', '--seed', '5', '--dataset', str(data), '--methods', 'RRC_L2,ridge',
          '-o', str(tmp_path / 'roc')])
    assert 'ROC area RRC_L2' in capsys.readouterr().out
    assert (tmp_path / 'roc' / 'roc_ridge.csv').is_file()


def test_usage_examples_parse():
    examples = [line.split()[2:] for line in rrc_cli.__doc__.splitlines()
                if line.strip().startswith('python rrc_cli.py')]
    assert len(examples) >= 4
    for argv in examples:
        args = build_parser().parse_args(argv)
        assert args.command == argv[0]


def test_unknown_method_is_rejected():
    with pytest.raises(SystemExit):
        build_parser().parse_args(['recognize', '--seed', '1', '--methods', 'SRC'])
