#!/usr/bin/env python3
"""
Command line for robust coding: code a single query, run recognition and robustness
benchmarks, sweep SCI thresholds for impostor rejection, and generate synthetic datasets.

Examples:
    python rrc_cli.py synth-gen --seed 7 -o data/synth
    python rrc_cli.py code data/synth/class00/07.pgm --dataset data/synth --weight-map w.png
    python rrc_cli.py corrupt-bench --seed 7 --levels 0,0.2,0.4,0.6 -o results/corrupt
    python rrc_cli.py validate-roc --seed 7 --config experiment.json
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import structlog

from classify import fit_pca, run_ir3c_pca
from coding_types import CoderConfig, QuerySignal, RobustCodingError
from dataset import SyntheticSpec, load_dataset, write_synthetic
from experiment import (METHODS, ExperimentConfig, ExperimentReport, run_experiment,
                        write_report)
from image_io import read_image, vector_to_image, write_image
from ir3c import run_ir3c

logger = structlog.get_logger(__name__)

BENCH_MODES = {
    'recognize': 'none',
    'corrupt-bench': 'corruption',
    'occlude-bench': 'occlusion',
    'validate-roc': 'validation',
    'tau-sweep': 'tau',
}


def configure_logging(verbose: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.INFO
    structlog.configure(
        processors=[
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt='%H:%M:%S'),
            structlog.dev.ConsoleRenderer(),
        ],
        wrapper_class=structlog.make_filtering_bound_logger(level),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )


def _floats(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected comma-separated numbers, got {text!r}')


def _methods(text: str) -> List[str]:
    methods = [part.strip() for part in text.split(',') if part.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise argparse.ArgumentTypeError(f'unknown methods {unknown}; choose from {", ".join(METHODS)}')
    return methods


def _size(text: str) -> List[int]:
    try:
        width, height = (int(part) for part in text.lower().split('x'))
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected WIDTHxHEIGHT, got {text!r}')
    return [width, height]


def _add_coder_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--lambda', dest='lam', type=float, help='Coefficient regularization (default 1e-3)')
    parser.add_argument('--tau', type=float, help='Residual quantile for delta (default 0.8 clean, 0.6 perturbed)')
    parser.add_argument('--zeta', type=float, help='Fixed mu*delta product (default 8)')
    parser.add_argument('--max-iter', dest='max_outer_iter', type=int, help='Outer iteration cap (default 50)')
    parser.add_argument('--drop-threshold', dest='pixel_drop_threshold', type=float,
                        help='Drop pixels whose weight falls below this value from the coding step')


def _add_experiment_flags(parser: argparse.ArgumentParser, levels: bool = True) -> None:
    parser.add_argument('--config', help='ExperimentConfig JSON file; flags given here override it')
    parser.add_argument('--seed', type=int, help='RNG seed (required, here or in --config)')
    parser.add_argument('--experiment', help='Experiment id written to the metrics CSV')
    parser.add_argument('--dataset', help='Dataset directory with manifest.json (default: synthetic suite)')
    parser.add_argument('--train-per-class', type=int, help='Training images per class (per-class manifests)')
    parser.add_argument('--test-per-class', type=int, help='Cap on test images per class')
    parser.add_argument('--size', dest='image_size', type=_size, help='Resize images to WIDTHxHEIGHT')
    parser.add_argument('--pca-dim', type=int, help='Code in a PCA feature space of this dimension')
    parser.add_argument('--methods', type=_methods, help=f'Comma-separated subset of {",".join(METHODS)}')
    parser.add_argument('--patch', help='Occluder image (default: bundled texture)')
    parser.add_argument('-o', '--output-dir', help='Directory for CSV output (default: results)')
    parser.add_argument('--workers', type=int, help='Parallel query workers (default 1)')
    parser.add_argument('--timing', action='store_const', const=True,
                        help='Measure per-query wall time into mean_ms (runs are no longer byte-identical)')
    if levels:
        parser.add_argument('--levels', type=_floats, help='Comma-separated perturbation fractions')
    _add_coder_flags(parser)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Robust coding of images with adaptive pixel weights')
    parser.add_argument('-v', '--verbose', action='store_true', help='Log per-iteration details')
    sub = parser.add_subparsers(dest='command', required=True)

    code = sub.add_parser('code', help='Code one query image and print the result as JSON')
    code.add_argument('query', help='Query image (PGM or PNG)')
    code.add_argument('--dataset', required=True, help='Dataset directory with manifest.json')
    code.add_argument('--train-per-class', type=int, help='Training images per class (per-class manifests)')
    code.add_argument('--size', dest='image_size', type=_size, help='Resize images to WIDTHxHEIGHT')
    code.add_argument('--beta', type=int, choices=[1, 2], default=2, help='1 for l1 coefficients, 2 for l2')
    code.add_argument('--pca-dim', type=int, help='Code in a PCA feature space of this dimension')
    code.add_argument('--weight-map', help='Write the final pixel weights as an image')
    code.add_argument('--initial-weight-map', help='Write the first-iteration pixel weights as an image')
    code.add_argument('--reconstruction', help='Write the reconstruction D alpha as an image')
    code.add_argument('--include-weights', action='store_true', help='Add the weight vector to the JSON')
    _add_coder_flags(code)

    for name, text in (('recognize', 'Recognition rate on unperturbed queries'),
                       ('corrupt-bench', 'Recognition rate versus random pixel corruption'),
                       ('occlude-bench', 'Recognition rate versus block occlusion'),
                       ('tau-sweep', 'RRC recognition rate versus tau over corruption levels')):
        bench = sub.add_parser(name, help=text)
        _add_experiment_flags(bench, levels=name != 'recognize')
        if name == 'tau-sweep':
            bench.add_argument('--tau-values', type=_floats, help='Comma-separated tau values')

    roc = sub.add_parser('validate-roc', help='SCI threshold sweep for rejecting impostors')
    _add_experiment_flags(roc, levels=False)
    roc.add_argument('--perturbation', dest='validation_perturbation',
                     choices=['none', 'corruption', 'occlusion'], help='Perturbation applied to every query')
    roc.add_argument('--level', dest='validation_level', type=float, help='Perturbation fraction')

    synth = sub.add_parser('synth-gen', help='Write a synthetic face-like dataset with a manifest')
    synth.add_argument('--seed', type=int, required=True, help='RNG seed')
    synth.add_argument('-o', '--output', required=True, help='Output directory')
    synth.add_argument('--classes', type=int, help='Enrolled classes (default 10)')
    synth.add_argument('--train-per-class', type=int, help='Training images per class (default 5)')
    synth.add_argument('--test-per-class', type=int, help='Test images per class (default 5)')
    synth.add_argument('--impostor-classes', type=int, help='Classes kept out of training (default 5)')
    synth.add_argument('--size', type=_size, help='Image WIDTHxHEIGHT (default 28x32)')
    return parser


def _coder_overrides(args) -> Dict:
    names = ('lam', 'tau', 'zeta', 'max_outer_iter', 'pixel_drop_threshold')
    return {name: getattr(args, name) for name in names if getattr(args, name, None) is not None}


def experiment_config(args, mode: str) -> ExperimentConfig:
    """Merge --config with the flags that were given explicitly."""
    data: Dict = {}
    if args.config:
        with open(args.config, 'r', encoding='utf-8') as f:
            data = json.load(f)

    for name in ('seed', 'experiment', 'dataset', 'train_per_class', 'test_per_class', 'image_size',
                 'pca_dim', 'methods', 'patch', 'output_dir', 'workers', 'timing', 'tau_values',
                 'validation_perturbation', 'validation_level'):
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    levels = getattr(args, 'levels', None)
    if levels is not None:
        data['occlusion_levels' if mode == 'occlusion' else 'corruption_levels'] = levels

    overrides = _coder_overrides(args)
    if overrides:
        coder = data.get('coder')
        if coder is None:
            base = CoderConfig.clean() if mode == 'none' else CoderConfig.occluded()
        else:
            base = CoderConfig.from_dict(coder)
        data['coder'] = base.replace(**overrides).to_dict()
    return ExperimentConfig.from_dict(data)


def _print_report(report: ExperimentReport, written: List[Path]) -> None:
    print(f"{'experiment':<16} {'method':<8} {'perturbation':<12} {'level':>6} {'rate':>7} {'iters':>7} {'ms':>9}")
    for row in report.rows:
        print(f'{row.experiment:<16} {row.method:<8} {row.perturbation:<12} {row.level:>6.2f} '
              f'{row.rate:>7.4f} {row.mean_iters:>7.2f} {row.mean_ms:>9.3f}')
        if row.failures:
            print(f'  ({row.failures} queries failed and were excluded)')
    for method, auc in report.auc.items():
        print(f'ROC area {method}: {auc:.4f}')
    for path in written:
        print(f'Wrote {path}')


def run_code(args) -> None:
    size = tuple(args.image_size) if args.image_size else None
    data = load_dataset(args.dataset, train_per_class=args.train_per_class, size=size)
    image = read_image(args.query, size=size)
    query = QuerySignal(image.flatten())
    config = CoderConfig(beta=args.beta, **_coder_overrides(args))
    if args.pca_dim:
        result = run_ir3c_pca(data.dictionary, query, fit_pca(data.dictionary, args.pca_dim), config)
    else:
        result = run_ir3c(data.dictionary, query, config)

    output = result.to_json_dict(include_weights=args.include_weights)
    output['class_name'] = data.class_names[result.predicted_class]
    print(json.dumps(output, indent=2))

    if args.weight_map:
        write_image(vector_to_image(result.final_weights.weights, image.height, image.width, scale=255.0),
                    args.weight_map)
    if args.initial_weight_map:
        write_image(vector_to_image(result.initial_weights.weights, image.height, image.width, scale=255.0),
                    args.initial_weight_map)
    if args.reconstruction:
        write_image(vector_to_image(result.reconstruction, image.height, image.width), args.reconstruction)


def run_synth_gen(args) -> None:
    values = {}
    for flag, name in (('classes', 'n_classes'), ('train_per_class', 'train_per_class'),
                       ('test_per_class', 'test_per_class'), ('impostor_classes', 'impostor_classes')):
        if getattr(args, flag) is not None:
            values[name] = getattr(args, flag)
    if args.size:
        values['width'], values['height'] = args.size
    manifest = write_synthetic(SyntheticSpec(**values), args.seed, args.output)
    print(f'Wrote synthetic dataset manifest {manifest}')


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        if args.command == 'code':
            run_code(args)
        elif args.command == 'synth-gen':
            run_synth_gen(args)
        else:
            mode = BENCH_MODES[args.command]
            config = experiment_config(args, mode)
            report = run_experiment(config, mode)
            _print_report(report, write_report(report, config.output_dir))
    except (RobustCodingError, OSError, json.JSONDecodeError, TypeError) as exc:
        print(f'Error: {exc}', file=sys.stderr)
        sys.exit(1)
    return 0


if __name__ == '__main__':
    main()
