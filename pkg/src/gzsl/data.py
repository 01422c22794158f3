"""GZSL datasets: schema, split validation, binary ingestion and a synthetic generator."""
from __future__ import annotations

import json
import logging
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff.rng import Rng

log = logging.getLogger(__name__)

FEAT_MAGIC = b"FEAT"
LABL_MAGIC = b"LABL"
SPLIT_KEYS = ("seen_classes", "unseen_classes", "train_idx", "test_seen_idx", "test_unseen_idx")

# |Y^S| (train+val), |Y^U|, |D^Tr|, |D^Te_U|, |D^Te_S| of the standard benchmarks.
# SUN is listed with 645 = 580 + 65 seen classes.
BENCHMARKS = {
    "CUB": dict(n_seen=150, n_val=50, n_unseen=50, n_train=7057, n_test_unseen=1764, n_test_seen=2967),
    "SUN": dict(n_seen=645, n_val=65, n_unseen=72, n_train=14340, n_test_unseen=2580, n_test_seen=1440),
    "AWA1": dict(n_seen=40, n_val=13, n_unseen=10, n_train=19832, n_test_unseen=4958, n_test_seen=5685),
    "AWA2": dict(n_seen=40, n_val=13, n_unseen=10, n_train=23527, n_test_unseen=5882, n_test_seen=7913),
}


class DatasetError(ValueError):
    pass


def _ids(xs) -> np.ndarray:
    return np.asarray(sorted(int(x) for x in xs), dtype=np.int64)


@dataclass(frozen=True, eq=False)
class Dataset:
    visual: np.ndarray          # (N, K)
    labels: np.ndarray          # (N,)
    semantic: np.ndarray        # (C, L), one row per class
    seen_classes: np.ndarray
    unseen_classes: np.ndarray
    train_idx: np.ndarray
    test_seen_idx: np.ndarray
    test_unseen_idx: np.ndarray
    val_classes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @classmethod
    def build(cls, visual, labels, semantic, seen_classes, unseen_classes, train_idx,
              test_seen_idx, test_unseen_idx, val_classes=()) -> "Dataset":
        return cls(
            visual=np.asarray(visual, dtype=np.float64),
            labels=np.asarray(labels, dtype=np.int64),
            semantic=np.asarray(semantic, dtype=np.float64),
            seen_classes=_ids(seen_classes),
            unseen_classes=_ids(unseen_classes),
            train_idx=np.asarray(train_idx, dtype=np.int64),
            test_seen_idx=np.asarray(test_seen_idx, dtype=np.int64),
            test_unseen_idx=np.asarray(test_unseen_idx, dtype=np.int64),
            val_classes=_ids(val_classes),
        )

    @property
    def n_classes(self) -> int:
        return self.semantic.shape[0]

    @property
    def visual_dim(self) -> int:
        return self.visual.shape[1]

    @property
    def semantic_dim(self) -> int:
        return self.semantic.shape[1]

    def class_domains(self) -> dict[int, str]:
        out = {int(c): "seen" for c in self.seen_classes}
        out.update({int(c): "unseen" for c in self.unseen_classes})
        return out

    def describe(self) -> dict[str, int]:
        return dict(
            n_seen=len(self.seen_classes), n_val=len(self.val_classes), n_unseen=len(self.unseen_classes),
            n_train=len(self.train_idx), n_test_unseen=len(self.test_unseen_idx),
            n_test_seen=len(self.test_seen_idx), visual_dim=self.visual_dim, semantic_dim=self.semantic_dim,
        )

    def equals(self, other: "Dataset") -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in self.__dataclass_fields__)


def validate_splits(ds: Dataset) -> list[str]:
    """Every violated dataset invariant, as readable messages. Empty means valid."""
    v: list[str] = []
    n = len(ds.labels)
    C = ds.semantic.shape[0] if ds.semantic.ndim == 2 else 0
    if ds.visual.ndim != 2 or ds.visual.shape[0] != n:
        v.append(f"visual matrix shape {ds.visual.shape} does not match {n} labels")
    if ds.semantic.ndim != 2:
        v.append(f"semantic matrix must be 2-d, got shape {ds.semantic.shape}")
    if not np.all(np.isfinite(ds.visual)) or not np.all(np.isfinite(ds.semantic)):
        v.append("non-finite values in feature matrices")
    bad = np.unique(ds.labels[(ds.labels < 0) | (ds.labels >= C)])
    if bad.size:
        v.append(f"labels out of range [0, {C}): {bad.tolist()}")

    seen, unseen = set(ds.seen_classes.tolist()), set(ds.unseen_classes.tolist())
    both = seen & unseen
    if both:
        v.append(f"classes both seen and unseen: {sorted(both)}")
    if len(ds.seen_classes) != len(seen) or len(ds.unseen_classes) != len(unseen):
        v.append("duplicate entries in class sets")
    classes = seen | unseen
    if classes != set(range(C)):
        missing = sorted(set(range(C)) - classes)
        extra = sorted(classes - set(range(C)))
        v.append(f"class sets must cover exactly one semantic row per class: "
                 f"rows without a class set {missing}, classes without a row {extra}")
    uncovered = sorted(set(np.unique(ds.labels).tolist()) - classes)
    if uncovered:
        v.append(f"labels not assigned to seen or unseen: {uncovered}")
    stray_val = sorted(set(ds.val_classes.tolist()) - seen)
    if stray_val:
        v.append(f"val_classes must be seen classes: {stray_val}")

    splits = {"train_idx": ds.train_idx, "test_seen_idx": ds.test_seen_idx, "test_unseen_idx": ds.test_unseen_idx}
    in_range = {}
    for name, idx in splits.items():
        out = idx[(idx < 0) | (idx >= n)]
        if out.size:
            v.append(f"{name} has indices out of range [0, {n}): {out.tolist()[:10]}")
        uniq, counts = np.unique(idx, return_counts=True)
        if np.any(counts > 1):
            v.append(f"{name} has duplicate indices: {uniq[counts > 1].tolist()[:10]}")
        in_range[name] = idx[(idx >= 0) & (idx < n)]
    names = list(splits)
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            shared = np.intersect1d(splits[names[i]], splits[names[j]])
            for k in shared.tolist()[:10]:
                v.append(f"index {k} appears in both {names[i]} and {names[j]}")

    train_lab = ds.labels[in_range["train_idx"]]
    leaked = sorted(set(train_lab.tolist()) - seen)
    if leaked:
        v.append(f"ZSL constraint violated: train_idx contains visuals of non-seen classes {leaked}")
    wrong = sorted(set(ds.labels[in_range["test_seen_idx"]].tolist()) - seen)
    if wrong:
        v.append(f"test_seen_idx contains non-seen classes {wrong}")
    wrong = sorted(set(ds.labels[in_range["test_unseen_idx"]].tolist()) - unseen)
    if wrong:
        v.append(f"test_unseen_idx contains non-unseen classes {wrong}")
    return v


def class_counts(ds: Dataset, idx=None) -> dict[int, int]:
    """Sample count per class over ``idx`` (all samples if None)."""
    labels = ds.labels if idx is None else ds.labels[np.asarray(idx, dtype=np.int64)]
    counts = np.bincount(labels, minlength=ds.n_classes)
    return {c: int(counts[c]) for c in range(ds.n_classes)}


def check_benchmark_metadata(ds: Dataset, name: str) -> list[str]:
    """Differences between ``ds`` split sizes and the published benchmark table."""
    expected = BENCHMARKS[name.upper()]
    got = ds.describe()
    keys = [k for k in expected if k != "n_val" or len(ds.val_classes)]
    return [f"{k}: expected {expected[k]}, found {got[k]}" for k in keys if got[k] != expected[k]]


def l2_normalize(ds: Dataset) -> Dataset:
    norms = np.linalg.norm(ds.visual, axis=1, keepdims=True)
    return replace(ds, visual=ds.visual / np.maximum(norms, 1e-12))


def with_val_classes(ds: Dataset, seed: int, fraction: float = 0.2) -> Dataset:
    """Hold out a seeded fraction of seen classes as validation classes if none are set."""
    if len(ds.val_classes) or len(ds.seen_classes) < 2:
        return ds
    k = min(len(ds.seen_classes) - 1, max(1, int(round(fraction * len(ds.seen_classes)))))
    perm = Rng(seed).permutation(len(ds.seen_classes))
    return replace(ds, val_classes=np.sort(ds.seen_classes[perm[:k]]))


# --------------------------------------------------------------------- I/O

def _write_matrix(path: Path, m: np.ndarray) -> None:
    m = np.asarray(m)
    with open(path, "wb") as fh:
        fh.write(FEAT_MAGIC + struct.pack("<II", *m.shape))
        fh.write(np.ascontiguousarray(m, dtype="<f4").tobytes())


def _read_matrix(path: Path) -> np.ndarray:
    buf = _read(path)
    if buf[:4] != FEAT_MAGIC:
        raise DatasetError(f"{path.name}: expected magic {FEAT_MAGIC!r}, found {buf[:4]!r}")
    if len(buf) < 12:
        raise DatasetError(f"{path.name}: truncated header")
    rows, cols = struct.unpack_from("<II", buf, 4)
    if len(buf) - 12 != 4 * rows * cols:
        raise DatasetError(f"{path.name}: header says {rows}x{cols} floats but payload has {len(buf) - 12} bytes")
    return np.frombuffer(buf, dtype="<f4", offset=12).astype(np.float64).reshape(rows, cols)


def _read(path: Path) -> bytes:
    if not path.is_file():
        raise DatasetError(f"missing dataset file {path}")
    return path.read_bytes()


def save_dataset(ds: Dataset, path: str | os.PathLike) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    _write_matrix(root / "visual.f32bin", ds.visual)
    _write_matrix(root / "semantic.f32bin", ds.semantic)
    with open(root / "labels.u32bin", "wb") as fh:
        fh.write(LABL_MAGIC + struct.pack("<I", len(ds.labels)))
        fh.write(np.ascontiguousarray(ds.labels, dtype="<u4").tobytes())
    splits = {k: getattr(ds, k).tolist() for k in SPLIT_KEYS}
    if len(ds.val_classes):
        splits["val_classes"] = ds.val_classes.tolist()
    (root / "splits.json").write_text(json.dumps(splits, indent=1) + "\n")


def load_dataset(path: str | os.PathLike) -> Dataset:
    root = Path(path)
    visual = _read_matrix(root / "visual.f32bin")
    semantic = _read_matrix(root / "semantic.f32bin")
    buf = _read(root / "labels.u32bin")
    if buf[:4] != LABL_MAGIC:
        raise DatasetError(f"labels.u32bin: expected magic {LABL_MAGIC!r}, found {buf[:4]!r}")
    (n,) = struct.unpack_from("<I", buf, 4)
    if len(buf) - 8 != 4 * n:
        raise DatasetError(f"labels.u32bin: header says {n} labels but payload has {len(buf) - 8} bytes")
    labels = np.frombuffer(buf, dtype="<u4", offset=8).astype(np.int64)
    if n != visual.shape[0]:
        raise DatasetError(f"visual.f32bin has {visual.shape[0]} rows but labels.u32bin has {n} labels")
    try:
        splits = json.loads(_read(root / "splits.json"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"splits.json: {exc}") from exc
    missing = [k for k in SPLIT_KEYS if k not in splits]
    if missing:
        raise DatasetError(f"splits.json lacks keys {missing}")
    ds = Dataset.build(visual, labels, semantic, **{k: splits[k] for k in SPLIT_KEYS},
                       val_classes=splits.get("val_classes", ()))
    problems = validate_splits(ds)
    if problems:
        raise DatasetError(f"{root}: invalid dataset:\n  " + "\n  ".join(problems))
    return ds


def import_csv(visual_csv, labels_csv, semantic_csv, splits_json) -> Dataset:
    """Read comma-separated features; values are rounded to float32 like the binary form."""
    f32 = lambda a: np.asarray(a, dtype=np.float32).astype(np.float64)  # noqa: E731
    visual = f32(np.loadtxt(visual_csv, delimiter=",", ndmin=2))
    semantic = f32(np.loadtxt(semantic_csv, delimiter=",", ndmin=2))
    labels = np.loadtxt(labels_csv, delimiter=",", dtype=np.int64, ndmin=1)
    splits = json.loads(Path(splits_json).read_text())
    ds = Dataset.build(visual, labels, semantic, **{k: splits[k] for k in SPLIT_KEYS},
                       val_classes=splits.get("val_classes", ()))
    problems = validate_splits(ds)
    if problems:
        raise DatasetError("invalid dataset:\n  " + "\n  ".join(problems))
    return ds


# --------------------------------------------------------------- synthetic

@dataclass(frozen=True)
class SynthSpec:
    n_seen_classes: int = 8
    n_unseen_classes: int = 4
    visual_dim: int = 32
    semantic_dim: int = 8
    samples_per_class: int = 50
    cluster_spread: float = 0.1
    semantic_noise: float = 0.0
    seed: int = 0
    test_per_class: int = 20
    separation: float = 1.0

    def __post_init__(self):
        counts = ("n_seen_classes", "n_unseen_classes", "visual_dim", "semantic_dim",
                  "samples_per_class", "test_per_class")
        for name in counts:
            if int(getattr(self, name)) < 1:
                raise ValueError(f"SynthSpec.{name} must be >= 1")
        if not self.cluster_spread > 0 or not self.separation > 0:
            raise ValueError("SynthSpec.cluster_spread and separation must be positive")
        if self.semantic_noise < 0:
            raise ValueError("SynthSpec.semantic_noise must be >= 0")


def _f32(a: np.ndarray) -> np.ndarray:
    return a.astype(np.float32).astype(np.float64)


def synth_prototypes(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """(semantic rows, visual class means) of the synthetic benchmark."""
    rng = Rng(spec.seed)
    C = spec.n_seen_classes + spec.n_unseen_classes
    protos = rng.normal((C, spec.semantic_dim))
    proj = rng.normal((spec.visual_dim, spec.semantic_dim)) / np.sqrt(spec.semantic_dim)
    means = protos @ proj.T
    if C > 1:
        d = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=2)
        means *= spec.separation / d[np.triu_indices(C, 1)].min()
    # shift into the positive orthant so relu-output generators can reach the features
    means += 4.0 * spec.cluster_spread - means.min()
    semantic = protos + spec.semantic_noise * rng.normal(protos.shape)
    return semantic, means


def synth_benchmark(spec: SynthSpec) -> Dataset:
    """Gaussian clusters around an affine image of per-class semantic prototypes.

    Seen classes get ``samples_per_class`` training and ``test_per_class``
    test samples; unseen classes only get ``test_per_class`` test samples.
    """
    semantic, means = synth_prototypes(spec)
    rng = Rng(spec.seed ^ 0x5EED)
    S, U = spec.n_seen_classes, spec.n_unseen_classes
    rows, labels, train, test_s, test_u = [], [], [], [], []
    n = 0
    for c in range(S + U):
        count = spec.samples_per_class + spec.test_per_class if c < S else spec.test_per_class
        rows.append(means[c] + spec.cluster_spread * rng.normal((count, spec.visual_dim)))
        labels.extend([c] * count)
        idx = list(range(n, n + count))
        if c < S:
            train.extend(idx[:spec.samples_per_class])
            test_s.extend(idx[spec.samples_per_class:])
        else:
            test_u.extend(idx)
        n += count
    return Dataset.build(
        visual=_f32(np.vstack(rows)), labels=labels, semantic=_f32(semantic),
        seen_classes=range(S), unseen_classes=range(S, S + U),
        train_idx=train, test_seen_idx=test_s, test_unseen_idx=test_u,
    )
