"""Synthetic multimodal classification data with controllable domain shift.

Source samples are drawn from class-conditional Gaussian clusters, one
cluster layout per modality. Target samples come from the same clusters and
are then corrupted per modality: additive white noise, a planar rotation of
the first two coordinates, and random zeroing of a fraction of coordinates
per sample. Each modality draws from its own seeded substream, so changing
one modality's severity leaves every other modality's data untouched.

On disk a dataset is a directory with a JSON manifest plus one CSV per
modality per split and one labels CSV per split. Target-train labels are
stored for diagnostics only and are flagged as such in the manifest; inside
the package they sit behind an audited accessor so training code provably
never reads them.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

# Spread of the class-cluster means relative to the unit within-class noise.
# 0.8 keeps the task learnable on the source domain while leaving the target
# F1 of an unadapted model visibly below ceiling under the default shifts.
CLASS_MEAN_SCALE = 0.8

_SPLITS = ("source", "target_train", "target_test")


class DatasetFormatError(ValueError):
    """A dataset file on disk failed validation."""


@dataclass(frozen=True)
class ShiftSpec:
    """Per-modality corruption severities applied to target samples."""

    noise_sigma: float = 0.0
    rotation_angle: float = 0.0
    mask_fraction: float = 0.0

    def validate(self) -> None:
        if self.noise_sigma < 0 or self.rotation_angle < 0:
            raise ValueError("shift severities must be nonnegative")
        if not 0.0 <= self.mask_fraction <= 1.0:
            raise ValueError("mask_fraction must be in [0, 1]")


@dataclass(frozen=True)
class DatasetSpec:
    """Shape, size, seed, and shift profile of a synthetic dataset."""

    modalities: int = 3
    classes: int = 4
    feature_dims: tuple = (8, 8, 8)
    source_samples: int = 600
    target_samples: int = 600
    seed: int = 0
    shifts: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not self.shifts:
            object.__setattr__(self, "shifts",
                               tuple(ShiftSpec() for _ in range(self.modalities)))

    def validate(self) -> None:
        if self.modalities < 1:
            raise ValueError("modalities must be >= 1")
        if self.classes < 2:
            raise ValueError("classes must be >= 2")
        if len(self.feature_dims) != self.modalities:
            raise ValueError("feature_dims length must equal modalities")
        if any(d < 1 for d in self.feature_dims):
            raise ValueError("feature dimensions must be >= 1")
        if self.source_samples < 1 or self.target_samples < 1:
            raise ValueError("sample counts must be >= 1")
        if len(self.shifts) != self.modalities:
            raise ValueError("shifts length must equal modalities")
        for s in self.shifts:
            s.validate()


class MultimodalDataset:
    """Feature matrices and labels for the three splits.

    `target_train_labels` is an audited property: every read bumps
    `train_label_reads`. The training loop must never touch it; diagnostics
    use `eval_only_target_train_labels()` instead, which is not audited.
    """

    def __init__(self, spec: DatasetSpec, source_features, source_labels,
                 target_train_features, target_train_labels,
                 target_test_features, target_test_labels):
        self.spec = spec
        self.source_features = source_features
        self.source_labels = source_labels
        self.target_train_features = target_train_features
        self._target_train_labels = target_train_labels
        self.target_test_features = target_test_features
        self.target_test_labels = target_test_labels
        self.train_label_reads = 0

    @property
    def target_train_labels(self) -> np.ndarray:
        self.train_label_reads += 1
        return self._target_train_labels

    def eval_only_target_train_labels(self) -> np.ndarray:
        """Diagnostics-only access that bypasses the audit counter."""
        return self._target_train_labels


def _stream(seed: int, tag: int, modality: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, tag, modality)))


def _apply_shift(x: np.ndarray, shift: ShiftSpec,
                 rng: np.random.Generator) -> np.ndarray:
    if shift.noise_sigma > 0.0:
        x = x + shift.noise_sigma * rng.standard_normal(x.shape)
    if shift.rotation_angle > 0.0 and x.shape[1] >= 2:
        c = math.cos(shift.rotation_angle)
        s = math.sin(shift.rotation_angle)
        first = c * x[:, 0] - s * x[:, 1]
        second = s * x[:, 0] + c * x[:, 1]
        x = x.copy()
        x[:, 0] = first
        x[:, 1] = second
    if shift.mask_fraction > 0.0:
        k = int(round(shift.mask_fraction * x.shape[1]))
        if k > 0:
            scores = rng.random(x.shape)
            ranks = np.argsort(scores, axis=1)[:, :k]
            x = x.copy()
            np.put_along_axis(x, ranks, 0.0, axis=1)
    return x


def imbalanced_benchmark_spec(seed: int = 7) -> DatasetSpec:
    """The default desk-scale benchmark with imbalanced per-modality shifts.

    Modality 1 is corrupted beyond repair (heavy noise plus half the
    coordinates zeroed per sample); modalities 2 and 3 carry mild,
    alignment-fixable shifts. This is the regime where weighting all
    alignment losses equally over-aligns the hopeless modality and
    balancing pays off.
    """
    return DatasetSpec(
        modalities=3, classes=4, feature_dims=(8, 8, 8),
        source_samples=600, target_samples=600, seed=seed,
        shifts=(ShiftSpec(noise_sigma=4.0, mask_fraction=0.5),
                ShiftSpec(noise_sigma=0.3, rotation_angle=0.4),
                ShiftSpec(noise_sigma=0.3, rotation_angle=0.4)),
    )


def generate(spec: DatasetSpec) -> MultimodalDataset:
    """Draw a dataset from the spec; bitwise deterministic under its seed."""
    spec.validate()
    m, c = spec.modalities, spec.classes
    means = [_stream(spec.seed, 0, i).normal(0.0, CLASS_MEAN_SCALE,
                                             (c, spec.feature_dims[i]))
             for i in range(m)]
    y_src = _stream(spec.seed, 4, 0).integers(0, c, spec.source_samples)
    y_tt = _stream(spec.seed, 4, 1).integers(0, c, spec.target_samples)
    y_te = _stream(spec.seed, 4, 2).integers(0, c, spec.target_samples)

    src, tgt_train, tgt_test = [], [], []
    for i in range(m):
        d = spec.feature_dims[i]
        src.append(means[i][y_src]
                   + _stream(spec.seed, 1, i).standard_normal((len(y_src), d)))
        rng_tt = _stream(spec.seed, 2, i)
        base = means[i][y_tt] + rng_tt.standard_normal((len(y_tt), d))
        tgt_train.append(_apply_shift(base, spec.shifts[i], rng_tt))
        rng_te = _stream(spec.seed, 3, i)
        base = means[i][y_te] + rng_te.standard_normal((len(y_te), d))
        tgt_test.append(_apply_shift(base, spec.shifts[i], rng_te))

    return MultimodalDataset(spec, src, y_src, tgt_train, y_tt, tgt_test, y_te)


# ---------------------------------------------------------------------------
# Persistence: manifest.json + per-modality feature CSVs + label CSVs.

def _spec_to_mapping(spec: DatasetSpec) -> dict:
    d = asdict(spec)
    d["feature_dims"] = list(spec.feature_dims)
    d["shifts"] = [asdict(s) for s in spec.shifts]
    return d


def _spec_from_mapping(d: dict) -> DatasetSpec:
    try:
        shifts = tuple(ShiftSpec(**s) for s in d["shifts"])
        return DatasetSpec(modalities=d["modalities"], classes=d["classes"],
                           feature_dims=tuple(d["feature_dims"]),
                           source_samples=d["source_samples"],
                           target_samples=d["target_samples"],
                           seed=d["seed"], shifts=shifts)
    except (KeyError, TypeError) as exc:
        raise DatasetFormatError(f"manifest spec section invalid: {exc}") from exc


def _write_features_csv(path: Path, x: np.ndarray) -> None:
    cols = ",".join(f"f{i}" for i in range(x.shape[1]))
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"sample_id,{cols}\n")
        for i, row in enumerate(x):
            fh.write(f"{i}," + ",".join(repr(float(v)) for v in row) + "\n")


def _write_labels_csv(path: Path, y: np.ndarray) -> None:
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("sample_id,label\n")
        for i, v in enumerate(y):
            fh.write(f"{i},{int(v)}\n")


def save_dataset(dataset: MultimodalDataset, out_dir) -> None:
    """Write the dataset directory: manifest.json, feature and label CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = dataset.spec
    features = {"source": dataset.source_features,
                "target_train": dataset.target_train_features,
                "target_test": dataset.target_test_features}
    labels = {"source": dataset.source_labels,
              "target_train": dataset.eval_only_target_train_labels(),
              "target_test": dataset.target_test_labels}
    splits = {}
    for split in _SPLITS:
        feat_files = []
        for i, x in enumerate(features[split]):
            name = f"{split}_m{i + 1}.csv"
            _write_features_csv(out / name, x)
            feat_files.append(name)
        label_file = f"{split}_labels.csv"
        _write_labels_csv(out / label_file, labels[split])
        splits[split] = {"count": int(len(labels[split])),
                         "features": feat_files, "labels": label_file}
    splits["target_train"]["labels_eval_only"] = True
    manifest = {"spec": _spec_to_mapping(spec), "seed": spec.seed,
                "splits": splits}
    with (out / "manifest.json").open("w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def _read_features_csv(path: Path, expect_rows: int, expect_cols: int,
                       section: str) -> np.ndarray:
    if not path.exists():
        raise DatasetFormatError(f"{section}: missing file {path.name}")
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError(f"{section}: {path.name} is empty")
    header = lines[0].split(",")
    if header[0] != "sample_id" or len(header) != expect_cols + 1:
        raise DatasetFormatError(
            f"{section}: {path.name} line 1: bad header {lines[0]!r}")
    if len(lines) - 1 != expect_rows:
        raise DatasetFormatError(
            f"{section}: {path.name} has {len(lines) - 1} rows, "
            f"manifest says {expect_rows}")
    x = np.empty((expect_rows, expect_cols))
    for n, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != expect_cols + 1:
            raise DatasetFormatError(
                f"{section}: {path.name} line {n}: expected "
                f"{expect_cols + 1} fields, got {len(parts)}")
        try:
            x[n - 2] = [float(v) for v in parts[1:]]
        except ValueError as exc:
            raise DatasetFormatError(
                f"{section}: {path.name} line {n}: {exc}") from exc
    return x


def _read_labels_csv(path: Path, expect_rows: int, section: str) -> np.ndarray:
    if not path.exists():
        raise DatasetFormatError(f"{section}: missing file {path.name}")
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "sample_id,label":
        raise DatasetFormatError(f"{section}: {path.name} line 1: bad header")
    if len(lines) - 1 != expect_rows:
        raise DatasetFormatError(
            f"{section}: {path.name} has {len(lines) - 1} rows, "
            f"manifest says {expect_rows}")
    y = np.empty(expect_rows, dtype=np.int64)
    for n, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 2:
            raise DatasetFormatError(
                f"{section}: {path.name} line {n}: expected 2 fields")
        try:
            y[n - 2] = int(parts[1])
        except ValueError as exc:
            raise DatasetFormatError(
                f"{section}: {path.name} line {n}: {exc}") from exc
    return y


def load_dataset(in_dir) -> MultimodalDataset:
    """Load and validate a dataset directory written by save_dataset."""
    root = Path(in_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DatasetFormatError(f"missing manifest.json in {root}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(
            f"manifest.json line {exc.lineno}: {exc.msg}") from exc
    if "spec" not in manifest or "splits" not in manifest:
        raise DatasetFormatError("manifest.json: missing spec or splits section")
    spec = _spec_from_mapping(manifest["spec"])
    spec.validate()

    expected_counts = {"source": spec.source_samples,
                       "target_train": spec.target_samples,
                       "target_test": spec.target_samples}
    data = {}
    label_arrays = {}
    for split in _SPLITS:
        if split not in manifest["splits"]:
            raise DatasetFormatError(f"manifest.json: missing split {split!r}")
        info = manifest["splits"][split]
        count = info["count"]
        if count != expected_counts[split]:
            raise DatasetFormatError(
                f"{split}: manifest count {count} disagrees with the spec's "
                f"{expected_counts[split]} samples")
        files = info["features"]
        if len(files) != spec.modalities:
            raise DatasetFormatError(
                f"{split}: manifest lists {len(files)} feature files, "
                f"spec has {spec.modalities} modalities")
        data[split] = [
            _read_features_csv(root / fname, count, spec.feature_dims[i], split)
            for i, fname in enumerate(files)
        ]
        label_arrays[split] = _read_labels_csv(root / info["labels"], count, split)
        bad = (label_arrays[split] < 0) | (label_arrays[split] >= spec.classes)
        if np.any(bad):
            raise DatasetFormatError(
                f"{split}: label out of range [0, {spec.classes})")

    return MultimodalDataset(spec, data["source"], label_arrays["source"],
                             data["target_train"], label_arrays["target_train"],
                             data["target_test"], label_arrays["target_test"])


def dataset_equal(a: MultimodalDataset, b: MultimodalDataset) -> bool:
    """Exact equality of specs, features, and labels (round-trip check)."""
    if a.spec != b.spec:
        return False
    for xs, ys in ((a.source_features, b.source_features),
                   (a.target_train_features, b.target_train_features),
                   (a.target_test_features, b.target_test_features)):
        if len(xs) != len(ys) or any(not np.array_equal(x, y)
                                     for x, y in zip(xs, ys)):
            return False
    return (np.array_equal(a.source_labels, b.source_labels)
            and np.array_equal(a.eval_only_target_train_labels(),
                               b.eval_only_target_train_labels())
            and np.array_equal(a.target_test_labels, b.target_test_labels))
