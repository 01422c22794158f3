"""Latent class head and the end-to-end prediction pipeline (class head x domain gate)."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import (
    MLP,
    Adam,
    CheckpointError,
    Rng,
    Tensor,
    cross_entropy,
    load_arrays,
    load_into,
    no_grad,
    round_to_f32,
    save_arrays,
    softmax,
    state_dict,
)
from .cada import CadaConfig, CadaModel, train_cada
from .cycle import CycleConfig, CycleModel, train_cycle
from .data import Dataset, with_val_classes
from .gate import (
    SEEN,
    UNSEEN,
    DomainClassifier,
    GateConfig,
    build_dc_training_set,
    calibrate,
    domain_mask,
    domain_prob,
    gate,
    load_dc,
    save_dc,
    train_dc,
)
from .latent import LatentView

log = logging.getLogger(__name__)

MODES = ("gzsl_with_dc", "gzsl_plain", "zsl")
MANIFEST_VERSION = 1


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class HeadConfig:
    hidden: int = 0                  # 0: single linear layer
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 64
    n_unseen_draws_per_class: int = 200
    balance_unseen: bool = False     # draws per unseen class = median seen-class training count
    seed: int = 0

    def __post_init__(self):
        if self.hidden < 0 or self.epochs < 0 or self.batch_size < 1 or not self.lr > 0:
            raise ValueError("HeadConfig needs hidden >= 0, epochs >= 0, batch_size >= 1, lr > 0")
        if self.n_unseen_draws_per_class < 0:
            raise ValueError("HeadConfig.n_unseen_draws_per_class must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ClassHead:
    mlp: MLP

    @classmethod
    def init(cls, latent_dim: int, n_classes: int, hidden: int, rng: Rng) -> "ClassHead":
        sizes = [latent_dim, hidden, n_classes] if hidden else [latent_dim, n_classes]
        return cls(MLP.init(sizes, rng))

    @property
    def n_classes(self) -> int:
        return self.mlp.n_out

    def proba(self, z: np.ndarray) -> np.ndarray:
        with no_grad():
            return softmax(self.mlp(Tensor(np.atleast_2d(z))).data, axis=1)

    def named_parameters(self) -> dict[str, Tensor]:
        return self.mlp.named_parameters("head")


@dataclass
class HeadTrainingSet:
    latents: np.ndarray
    labels: np.ndarray
    from_semantic: np.ndarray   # True where the row was derived from a semantic row only


def build_head_training_set(view: LatentView, ds: Dataset, cfg: HeadConfig) -> HeadTrainingSet:
    """Real visual latents for seen classes, semantic-derived draws for unseen classes."""
    rng = Rng(cfg.seed ^ 0x4EAD)
    idx = ds.train_idx
    n_draws = cfg.n_unseen_draws_per_class
    if cfg.balance_unseen:
        counts = np.bincount(ds.labels[idx], minlength=ds.n_classes)[ds.seen_classes]
        n_draws = max(1, int(np.median(counts)))
    z_real = view.draw_visual(ds.visual[idx], rng)
    z_syn, y_syn = view.draw_semantic(ds.unseen_classes, n_draws, rng)
    return HeadTrainingSet(
        np.vstack([z_real, z_syn]),
        np.concatenate([ds.labels[idx], y_syn]).astype(np.int64),
        np.concatenate([np.zeros(len(idx), dtype=bool), np.ones(len(y_syn), dtype=bool)]),
    )


def train_head(latents: np.ndarray, labels: np.ndarray, n_classes: int, cfg: HeadConfig) -> ClassHead:
    labels = np.asarray(labels, dtype=np.int64)
    absent = sorted(set(range(n_classes)) - set(labels.tolist()))
    if absent:
        raise ValueError(f"class head training set lacks classes {absent}")
    rng = Rng(cfg.seed ^ 0x4EAD0)
    head = ClassHead.init(latents.shape[1], n_classes, cfg.hidden, rng.spawn())
    opt = Adam(head.mlp.parameters(), lr=cfg.lr)
    for _ in range(cfg.epochs):
        perm = rng.permutation(len(latents))
        for start in range(0, len(perm), cfg.batch_size):
            b = perm[start:start + cfg.batch_size]
            opt.zero_grad()
            cross_entropy(head.mlp(Tensor(latents[b])), labels[b]).backward()
            opt.step()
    round_to_f32(head.mlp.parameters())
    opt.zero_grad()
    return head


@dataclass
class Pipeline:
    view: LatentView
    head: ClassHead
    dc: DomainClassifier | None
    class_domains: dict[int, str]
    mode: str = "gzsl_with_dc"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if sorted(self.class_domains) != list(range(self.head.n_classes)):
            raise ValueError("class_domains must cover every class exactly once")
        if self.mode == "gzsl_with_dc" and self.dc is None:
            raise ValueError("mode gzsl_with_dc needs a domain classifier")

    @property
    def seen_mask(self) -> np.ndarray:
        return domain_mask(self.class_domains, self.head.n_classes)

    def with_mode(self, mode: str) -> "Pipeline":
        return Pipeline(self.view, self.head, self.dc, self.class_domains, mode)


def pipeline_scores(pipeline: Pipeline, x: np.ndarray, mode: str | None = None) -> np.ndarray:
    """Per-class scores whose row-wise argmax is the prediction in ``mode``."""
    mode = mode or pipeline.mode
    z = pipeline.view.embed(x)   # delta-function posterior: the encoder mean, no sampling
    p_class = pipeline.head.proba(z)
    if mode == "gzsl_plain":
        return p_class
    if mode == "zsl":
        return np.where(pipeline.seen_mask[None, :], -np.inf, p_class)
    if pipeline.dc is None:
        raise ValueError("mode gzsl_with_dc needs a domain classifier")
    return gate(p_class, domain_prob(pipeline.dc, z), pipeline.class_domains)


def predict(pipeline: Pipeline, x: np.ndarray, mode: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    scores = pipeline_scores(pipeline, x, mode)
    return scores.argmax(axis=1), scores


# ---------------------------------------------------------------- training

@dataclass
class TrainedPipeline:
    pipeline: Pipeline
    latent_history: list[dict[str, float]]
    dataset: Dataset                 # with the validation classes that were used
    calibration: dict = field(default_factory=dict)


def _holdout(ds: Dataset, classes, fraction: float, rng: Rng) -> np.ndarray:
    out = []
    for c in classes:
        idx = ds.train_idx[ds.labels[ds.train_idx] == c]
        k = int(round(fraction * len(idx)))
        if 0 < k < len(idx):
            out.append(idx[rng.permutation(len(idx))[:k]])
    return np.sort(np.concatenate(out)) if out else np.zeros(0, dtype=np.int64)


def fit_domain_classifier(view: LatentView, ds: Dataset, cfg: GateConfig) -> tuple[DomainClassifier, dict]:
    """Train the domain classifier and give it a validation-fitted temperature.

    Validation classes play the unseen domain for a twin classifier that never
    sees them as seen; its temperature is fitted on the encoded visuals of the
    validation classes (unseen) and a held-out fifth of the other seen classes'
    visuals (seen), then transferred to the classifier trained on all seen classes.
    """
    info: dict = {"temperature": 1.0, "val_classes": ds.val_classes.tolist()}
    if len(ds.val_classes):
        rest = np.setdiff1d(ds.seen_classes, ds.val_classes)
        held = _holdout(ds, rest, 0.2, Rng(cfg.seed ^ 0xCA1))
        z_v, d_v = build_dc_training_set(view, ds, cfg, seen_classes=rest,
                                         unseen_classes=np.union1d(ds.unseen_classes, ds.val_classes),
                                         exclude_idx=held)
        twin = train_dc(z_v, d_v, cfg)
        val_idx = ds.train_idx[np.isin(ds.labels[ds.train_idx], ds.val_classes)]
        z_cal = view.embed(ds.visual[np.concatenate([held, val_idx])])
        d_cal = np.concatenate([np.full(len(held), SEEN), np.full(len(val_idx), UNSEEN)])
        info["temperature"] = calibrate(twin, z_cal, d_cal).temperature
        info["n_calibration"] = int(len(d_cal))
    z, d = build_dc_training_set(view, ds, cfg)
    dc = train_dc(z, d, cfg)
    dc.temperature = info["temperature"]
    return dc, info


def train_pipeline(ds: Dataset, family: str, latent_cfg: CadaConfig | CycleConfig, head_cfg: HeadConfig,
                   gate_cfg: GateConfig, mode: str = "gzsl_with_dc", seed: int = 0) -> TrainedPipeline:
    """Latent model, then class head, then (calibrated) domain classifier."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    ds = with_val_classes(ds, seed)
    if family == "cada":
        model, history = train_cada(ds, latent_cfg, exclude_classes=ds.val_classes)
    elif family == "cycle":
        model, history = train_cycle(ds, latent_cfg, exclude_classes=ds.val_classes)
    else:
        raise ValueError(f"unknown model family {family!r}")
    view = LatentView(model, ds.semantic)
    hs = build_head_training_set(view, ds, head_cfg)
    head = train_head(hs.latents, hs.labels, ds.n_classes, head_cfg)
    dc, info = (None, {})
    if mode == "gzsl_with_dc":
        dc, info = fit_domain_classifier(view, ds, gate_cfg)
    return TrainedPipeline(Pipeline(view, head, dc, ds.class_domains(), mode), history, ds, info)


# ------------------------------------------------------------- persistence

def save_pipeline(pipeline: Pipeline, out_dir: str | os.PathLike, latent_cfg, head_cfg: HeadConfig,
                  gate_cfg: GateConfig) -> Path:
    """Write latent/head/dc checkpoints and a JSON manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    family = pipeline.view.family
    ckpts = {"latent": "latent.gzsl", "head": "head.gzsl"}
    save_arrays(out / ckpts["latent"], state_dict(pipeline.view.model.named_parameters()))
    save_arrays(out / ckpts["head"], state_dict(pipeline.head.named_parameters()))
    if pipeline.dc is not None:
        ckpts["dc"] = "dc.gzsl"
        save_dc(pipeline.dc, out / ckpts["dc"])
    model = pipeline.view.model
    manifest = {
        "version": MANIFEST_VERSION,
        "family": family,
        "mode": pipeline.mode,
        "checkpoints": ckpts,
        "class_domains": {str(c): d for c, d in sorted(pipeline.class_domains.items())},
        "dims": {"visual": model.visual_dim, "semantic": model.semantic_dim,
                 "n_classes": pipeline.head.n_classes},
        "config": {"latent": latent_cfg.to_dict(), "head": head_cfg.to_dict(),
                   "gate": gate_cfg.to_dict()},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_pipeline(manifest_path: str | os.PathLike, semantic: np.ndarray | None = None) -> Pipeline:
    path = Path(manifest_path)
    try:
        m = json.loads(path.read_text())
        family, mode, ckpts = m["family"], m["mode"], m["checkpoints"]
        dims, cfg = m["dims"], m["config"]
        class_domains = {int(k): v for k, v in m["class_domains"].items()}
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise ManifestError(f"{path}: unreadable manifest ({exc})") from exc
    root = path.parent
    if family == "cada":
        lcfg = CadaConfig.from_dict(cfg["latent"])
        model = CadaModel.init(dims["visual"], dims["semantic"], lcfg, Rng(0))
    elif family == "cycle":
        lcfg = CycleConfig.from_dict(cfg["latent"])
        model = CycleModel.init(dims["visual"], dims["semantic"], lcfg, Rng(0))
    else:
        raise ManifestError(f"{path}: unknown model family {family!r}")
    load_into(model.named_parameters(), load_arrays(root / ckpts["latent"]), ckpts["latent"])
    hcfg = HeadConfig(**cfg["head"])
    view = LatentView(model, semantic)
    head = ClassHead.init(view.latent_dim, dims["n_classes"], hcfg.hidden, Rng(0))
    load_into(head.named_parameters(), load_arrays(root / ckpts["head"]), ckpts["head"])
    dc = None
    if "dc" in ckpts:
        gcfg = GateConfig(**cfg["gate"])
        dc = load_dc(root / ckpts["dc"], view.latent_dim, gcfg.dc_hidden)
    if len(class_domains) != dims["n_classes"]:
        raise ManifestError(f"{path}: class_domains lists {len(class_domains)} classes, head has {dims['n_classes']}")
    try:
        return Pipeline(view, head, dc, class_domains, mode)
    except ValueError as exc:
        raise ManifestError(f"{path}: {exc}") from exc


__all__ = [
    "CheckpointError", "ClassHead", "HeadConfig", "HeadTrainingSet", "MODES", "ManifestError", "Pipeline",
    "TrainedPipeline", "build_head_training_set", "fit_domain_classifier", "load_pipeline", "pipeline_scores",
    "predict", "save_pipeline", "train_head", "train_pipeline",
]
