#!/usr/bin/env python3
"""
Dataset ingestion and the synthetic face-like generator.

A dataset directory holds images plus a JSON manifest. Two manifest layouts are accepted:

    {"subject01": ["s01/a.pgm", ...], "subject02": [...]}
        one list per class; the first train_per_class sorted paths train, the rest test

    {"train": {...}, "test": {...}, "impostors": {...}}
        explicit lists; "impostors" (classes absent from training) is optional

Paths are relative to the dataset root. Classes are ordered by their manifest key
(numerically when every key is an integer) and labelled 0..k-1 in that order.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import structlog
from scipy.ndimage import gaussian_filter

from coding_types import ClassPartition, DatasetError, Dictionary, DomainError
from image_io import GrayImage, read_image, write_image

logger = structlog.get_logger(__name__)

MANIFEST_NAME = 'manifest.json'


@dataclass(frozen=True)
class LabeledImage:
    image: GrayImage
    label: int
    source: str


@dataclass
class Dataset:
    """Training dictionary plus held-out query images (kept as 8-bit for perturbation)."""
    dictionary: Dictionary
    queries: List[LabeledImage]
    impostors: List[LabeledImage] = field(default_factory=list)
    class_names: List[str] = field(default_factory=list)
    height: int = 0
    width: int = 0

    @property
    def partition(self) -> ClassPartition:
        return self.dictionary.partition


def _class_order(keys) -> List[str]:
    keys = list(keys)
    if all(str(key).lstrip('-').isdigit() for key in keys):
        return sorted(keys, key=lambda key: int(key))
    return sorted(keys)


def load_manifest(root) -> Dict:
    root = Path(root)
    path = root / MANIFEST_NAME if root.is_dir() else root
    if not path.is_file():
        raise DatasetError(f'manifest not found: {path}')
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise DatasetError(f'manifest {path} is not valid JSON: {exc}') from exc


def _read_all(root: Path, paths: List[str], label: int, size) -> List[LabeledImage]:
    images = []
    for relative in sorted(paths):
        images.append(LabeledImage(read_image(root / relative, size=size), label, relative))
    return images


def _stack_columns(images: List[LabeledImage]) -> Tuple[np.ndarray, int, int]:
    height, width = images[0].image.height, images[0].image.width
    columns = []
    for item in images:
        if (item.image.height, item.image.width) != (height, width):
            raise DatasetError(f'{item.source} is {item.image.width}x{item.image.height}, '
                               f'expected {width}x{height}')
        try:
            columns.append(item.image.unit_vector())
        except DomainError as exc:
            raise DatasetError(f'{item.source}: {exc}') from exc
    return np.column_stack(columns), height, width


def load_dataset(root, manifest: Optional[Dict] = None, train_per_class: Optional[int] = None,
                 test_per_class: Optional[int] = None,
                 size: Optional[Tuple[int, int]] = None) -> Dataset:
    """
    Load training columns, class partition and held-out queries from a manifest.

    Args:
        root: Dataset directory
        manifest: Parsed manifest (default: root/manifest.json)
        train_per_class: Split for the per-class layout (required there)
        test_per_class: Optional cap on queries per class
        size: Optional (width, height) resize applied to every image

    Returns:
        Dataset with unit-norm dictionary columns in deterministic order
    """
    root = Path(root)
    manifest = manifest if manifest is not None else load_manifest(root)

    if 'train' in manifest:
        train_lists = manifest['train']
        test_lists = manifest.get('test', {})
        impostor_lists = manifest.get('impostors', {})
    else:
        if train_per_class is None:
            raise DatasetError('train_per_class is required for a per-class manifest')
        train_lists, test_lists = {}, {}
        for key, paths in manifest.items():
            ordered = sorted(paths)
            train_lists[key] = ordered[:train_per_class]
            test_lists[key] = ordered[train_per_class:]
        impostor_lists = {}

    class_names = _class_order(train_lists)
    train, queries = [], []
    for label, name in enumerate(class_names):
        if not train_lists[name]:
            raise DatasetError(f'class {name} has no training images')
        train.extend(_read_all(root, train_lists[name], label, size))
        tests = sorted(test_lists.get(name, []))
        if test_per_class is not None:
            tests = tests[:test_per_class]
        queries.extend(_read_all(root, tests, label, size))
    impostors = []
    for offset, name in enumerate(_class_order(impostor_lists)):
        impostors.extend(_read_all(root, impostor_lists[name], len(class_names) + offset, size))

    matrix, height, width = _stack_columns(train)
    for item in queries + impostors:
        if (item.image.height, item.image.width) != (height, width):
            raise DatasetError(f'{item.source} is {item.image.width}x{item.image.height}, '
                               f'expected {width}x{height}')
    labels = [item.label for item in train]
    logger.info('dataset_loaded', root=str(root), classes=len(class_names), atoms=len(train),
                queries=len(queries), impostors=len(impostors), height=height, width=width)
    return Dataset(Dictionary(matrix, ClassPartition(labels)), queries, impostors,
                   [str(name) for name in class_names], height, width)


@dataclass(frozen=True)
class SyntheticSpec:
    """
    Smooth random face-like classes.

    Every image is 128 + shared field + class field + a random mix of the class's own
    variation modes + pixel noise. All fields are unit-variance Gaussian-smoothed noise
    scaled by the amplitudes. A class therefore spans a low-dimensional subspace, much as
    one face under changing light does, and clean test images are nearly representable
    by the training images of their class.
    """
    n_classes: int = 10
    train_per_class: int = 5
    test_per_class: int = 5
    impostor_classes: int = 5
    height: int = 32
    width: int = 28
    shared_amplitude: float = 35.0
    class_amplitude: float = 10.0
    class_modes: int = 3
    mode_amplitude: float = 4.0
    noise_sigma: float = 1.0
    smoothness: float = 4.0

    @classmethod
    def from_dict(cls, data: Dict) -> 'SyntheticSpec':
        return cls(**data)


def _smooth_field(rng: np.random.Generator, spec: SyntheticSpec) -> np.ndarray:
    field_ = gaussian_filter(rng.standard_normal((spec.height, spec.width)), spec.smoothness, mode='wrap')
    return (field_ - field_.mean()) / field_.std()


def _sample(rng: np.random.Generator, prototype: np.ndarray, modes: np.ndarray,
            spec: SyntheticSpec) -> GrayImage:
    mix = spec.mode_amplitude * rng.standard_normal(len(modes))
    values = (prototype + np.tensordot(mix, modes, axes=1)
              + spec.noise_sigma * rng.standard_normal(prototype.shape))
    return GrayImage(np.clip(np.rint(values), 0, 255).astype(np.uint8))


def _synthetic_items(spec: SyntheticSpec, seed: int) -> Dict[str, List[LabeledImage]]:
    rng = np.random.default_rng([seed, 0])
    shared = 128.0 + spec.shared_amplitude * _smooth_field(rng, spec)
    total = spec.n_classes + spec.impostor_classes
    prototypes = [shared + spec.class_amplitude * _smooth_field(rng, spec) for _ in range(total)]
    modes = [np.stack([_smooth_field(rng, spec) for _ in range(spec.class_modes)])
             if spec.class_modes else np.zeros((0, spec.height, spec.width)) for _ in range(total)]

    sections: Dict[str, List[LabeledImage]] = {'train': [], 'test': [], 'impostors': []}
    for label, prototype in enumerate(prototypes):
        for index in range(spec.train_per_class + spec.test_per_class):
            # impostor classes draw train_per_class samples too; only the rest are kept
            item = LabeledImage(_sample(rng, prototype, modes[label], spec), label,
                                f'class{label:02d}/{index:02d}.pgm')
            if label >= spec.n_classes:
                if index >= spec.train_per_class:
                    sections['impostors'].append(item)
            elif index < spec.train_per_class:
                sections['train'].append(item)
            else:
                sections['test'].append(item)
    return sections


def generate_synthetic(spec: SyntheticSpec, seed: int) -> Dataset:
    """
    Build a synthetic dataset: training dictionary, test queries and impostor queries.

    Impostors come from extra classes that never enter the dictionary. Fully determined
    by (spec, seed).
    """
    sections = _synthetic_items(spec, seed)
    matrix, height, width = _stack_columns(sections['train'])
    dictionary = Dictionary(matrix, ClassPartition([item.label for item in sections['train']]))
    names = [f'class{label:02d}' for label in range(spec.n_classes)]
    return Dataset(dictionary, sections['test'], sections['impostors'], names, height, width)


def write_synthetic(spec: SyntheticSpec, seed: int, output_dir) -> Path:
    """Write a synthetic dataset as PGM files plus an explicit train/test/impostors manifest."""
    output_dir = Path(output_dir)
    manifest: Dict[str, Dict[str, List[str]]] = {}
    for section, items in _synthetic_items(spec, seed).items():
        manifest[section] = {}
        for item in items:
            write_image(item.image, output_dir / item.source)
            manifest[section].setdefault(f'{item.label:02d}', []).append(item.source)

    manifest_path = output_dir / MANIFEST_NAME
    with open(manifest_path, 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    logger.info('synthetic_written', output_dir=str(output_dir), classes=spec.n_classes,
                impostor_classes=spec.impostor_classes)
    return manifest_path
