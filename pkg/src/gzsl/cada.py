"""Cross- and distribution-aligned VAE over a joint visual/semantic latent space."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import (
    MLP,
    Adam,
    DenseLayer,
    NonFiniteError,
    Rng,
    ShapeError,
    Tensor,
    exp,
    no_grad,
    round_to_f32,
    tabs,
)
from .data import Dataset

log = logging.getLogger(__name__)

MODALITIES = ("visual", "semantic")


class TrainingDivergence(FloatingPointError):
    pass


@dataclass(frozen=True)
class Schedule:
    """Linear warm-up: 0 before ``start``, ``rate * (epoch - start)`` up to ``end``, then held."""

    rate: float
    start: int
    end: int

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"schedule start {self.start} must precede end {self.end}")


def warmup_weight(schedule: Schedule, epoch: float) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if epoch < schedule.start:
        return 0.0
    return schedule.rate * (min(epoch, schedule.end) - schedule.start)


@dataclass(frozen=True)
class CadaConfig:
    latent_dim: int = 64
    enc_hidden_visual: int = 1560
    enc_hidden_semantic: int = 1450
    dec_hidden_visual: int = 1560
    dec_hidden_semantic: int = 660
    epochs: int = 100
    batch_size: int = 52
    lr: float = 1.5e-3
    gamma_schedule: Schedule = field(default_factory=lambda: Schedule(0.044, 21, 75))
    delta_schedule: Schedule = field(default_factory=lambda: Schedule(0.0026, 0, 90))
    kl_schedule: Schedule = field(default_factory=lambda: Schedule(0.0026, 0, 90))
    cross_distance: str = "l1"
    seed: int = 0

    def __post_init__(self):
        for name in ("latent_dim", "enc_hidden_visual", "enc_hidden_semantic", "dec_hidden_visual",
                     "dec_hidden_semantic", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"CadaConfig.{name} must be >= 1")
        if self.epochs < 0 or not self.lr > 0:
            raise ValueError("CadaConfig needs epochs >= 0 and lr > 0")
        if self.cross_distance not in ("l1", "l2"):
            raise ValueError(f"cross_distance must be 'l1' or 'l2', got {self.cross_distance!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CadaConfig":
        d = dict(d)
        for k in ("gamma_schedule", "delta_schedule", "kl_schedule"):
            if k in d and not isinstance(d[k], Schedule):
                d[k] = Schedule(**d[k])
        return cls(**d)


@dataclass
class GaussianLatent:
    mu: Tensor
    log_var: Tensor

    def __post_init__(self):
        if self.mu.shape != self.log_var.shape:
            raise ShapeError(f"mu {self.mu.shape} and log_var {self.log_var.shape} differ")


@dataclass
class GaussianEncoder:
    hidden: DenseLayer
    mu: DenseLayer
    log_var: DenseLayer

    @classmethod
    def init(cls, n_in: int, n_hidden: int, n_latent: int, rng: Rng) -> "GaussianEncoder":
        return cls(DenseLayer.init(n_in, n_hidden, rng, "relu"),
                   DenseLayer.init(n_hidden, n_latent, rng),
                   DenseLayer.init(n_hidden, n_latent, rng))

    def __call__(self, x: Tensor) -> GaussianLatent:
        h = self.hidden(x)
        return GaussianLatent(self.mu(h), self.log_var(h))

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for part in ("hidden", "mu", "log_var"):
            layer = getattr(self, part)
            out[f"{prefix}.{part}.weight"] = layer.weight
            out[f"{prefix}.{part}.bias"] = layer.bias
        return out


@dataclass
class CadaModel:
    enc_visual: GaussianEncoder
    enc_semantic: GaussianEncoder
    dec_visual: MLP
    dec_semantic: MLP

    @classmethod
    def init(cls, visual_dim: int, semantic_dim: int, cfg: CadaConfig, rng: Rng | None = None) -> "CadaModel":
        rng = rng or Rng(cfg.seed)
        Z = cfg.latent_dim
        return cls(
            GaussianEncoder.init(visual_dim, cfg.enc_hidden_visual, Z, rng),
            GaussianEncoder.init(semantic_dim, cfg.enc_hidden_semantic, Z, rng),
            MLP.init([Z, cfg.dec_hidden_visual, visual_dim], rng),
            MLP.init([Z, cfg.dec_hidden_semantic, semantic_dim], rng),
        )

    @property
    def latent_dim(self) -> int:
        return self.enc_visual.mu.n_out

    @property
    def visual_dim(self) -> int:
        return self.enc_visual.hidden.n_in

    @property
    def semantic_dim(self) -> int:
        return self.enc_semantic.hidden.n_in

    def encoder(self, modality: str) -> GaussianEncoder:
        _check_modality(modality)
        return self.enc_visual if modality == "visual" else self.enc_semantic

    def named_parameters(self) -> dict[str, Tensor]:
        return {**self.enc_visual.named_parameters("enc_x"), **self.enc_semantic.named_parameters("enc_a"),
                **self.dec_visual.named_parameters("dec_x"), **self.dec_semantic.named_parameters("dec_a")}

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())


def _check_modality(modality: str) -> None:
    if modality not in MODALITIES:
        raise ValueError(f"unknown modality {modality!r}; expected one of {MODALITIES}")


def encode(model: CadaModel, modality: str, inputs) -> GaussianLatent:
    enc = model.encoder(modality)
    x = inputs if isinstance(inputs, Tensor) else Tensor(np.atleast_2d(inputs))
    if x.data.ndim != 2 or x.shape[1] != enc.hidden.n_in:
        raise ShapeError(f"{modality} input shape {x.shape} does not match encoder input size {enc.hidden.n_in}")
    return enc(x)


def reparameterize(g: GaussianLatent, rng: Rng | None = None, noise: np.ndarray | None = None) -> Tensor:
    """``mu + exp(log_var / 2) * eps``; eps from ``noise``, else ``rng``, else zero."""
    if noise is None:
        noise = rng.normal(g.mu.shape) if rng is not None else np.zeros(g.mu.shape)
    return g.mu + exp(g.log_var * 0.5) * noise


def kl_term(g: GaussianLatent) -> Tensor:
    """Batch mean of KL(N(mu, diag(exp(log_var))) || N(0, I))."""
    per = g.mu * g.mu + exp(g.log_var) - 1.0 - g.log_var
    return per.sum() * (0.5 / g.mu.shape[0])


def l1_distance(a: Tensor, b) -> Tensor:
    """Batch mean of the row-wise L1 distance."""
    return tabs(a - b).sum() * (1.0 / a.shape[0])


def l2sq_distance(a: Tensor, b) -> Tensor:
    d = a - b
    return (d * d).sum() * (1.0 / a.shape[0])


def distribution_alignment_loss(g_visual: GaussianLatent, g_semantic: GaussianLatent) -> Tensor:
    """Batch mean of ||mu_x - mu_a||^2 + ||sigma_x - sigma_a||_F^2 for diagonal covariances."""
    dm = g_visual.mu - g_semantic.mu
    ds = exp(g_visual.log_var * 0.5) - exp(g_semantic.log_var * 0.5)
    return ((dm * dm).sum() + (ds * ds).sum()) * (1.0 / g_visual.mu.shape[0])


@dataclass
class CadaBatch:
    """Visual rows paired with the semantic row of their class."""

    visual: np.ndarray
    semantic: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        if len(self.visual) != len(self.semantic):
            raise ShapeError(f"unpaired batch: {len(self.visual)} visual rows vs {len(self.semantic)} semantic rows")


@dataclass
class CadaForward:
    g_visual: GaussianLatent
    g_semantic: GaussianLatent
    z_visual: Tensor
    z_semantic: Tensor


def _forward(model: CadaModel, batch: CadaBatch, noise) -> CadaForward:
    gx = encode(model, "visual", batch.visual)
    ga = encode(model, "semantic", batch.semantic)
    eps_x, eps_a = noise if noise is not None else (None, None)
    return CadaForward(gx, ga, reparameterize(gx, noise=eps_x), reparameterize(ga, noise=eps_a))


def _dist(name: str):
    return l1_distance if name == "l1" else l2sq_distance


def reconstruction_loss(model: CadaModel, batch: CadaBatch, noise=None, fw: CadaForward | None = None) -> Tensor:
    fw = fw or _forward(model, batch, noise)
    return (l1_distance(model.dec_visual(fw.z_visual), batch.visual)
            + l1_distance(model.dec_semantic(fw.z_semantic), batch.semantic))


def cross_alignment_loss(model: CadaModel, batch: CadaBatch, noise=None, fw: CadaForward | None = None,
                         distance: str = "l1") -> Tensor:
    """Each modality reconstructed from the other modality's latent sample, both directions summed."""
    fw = fw or _forward(model, batch, noise)
    d = _dist(distance)
    return d(model.dec_visual(fw.z_semantic), batch.visual) + d(model.dec_semantic(fw.z_visual), batch.semantic)


@dataclass
class LossBreakdown:
    recon: Tensor
    kl: Tensor
    cross: Tensor
    dist: Tensor
    weighted_total: Tensor

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k).item() for k in ("recon", "kl", "cross", "dist", "weighted_total")}


def total_loss(model: CadaModel, batch: CadaBatch, epoch: float, cfg: CadaConfig, noise=None) -> LossBreakdown:
    fw = _forward(model, batch, noise)
    recon = reconstruction_loss(model, batch, fw=fw)
    kl = kl_term(fw.g_visual) + kl_term(fw.g_semantic)
    cross = cross_alignment_loss(model, batch, fw=fw, distance=cfg.cross_distance)
    dist = distribution_alignment_loss(fw.g_visual, fw.g_semantic)
    beta = warmup_weight(cfg.kl_schedule, epoch)
    gamma = warmup_weight(cfg.gamma_schedule, epoch)
    delta = warmup_weight(cfg.delta_schedule, epoch)
    total = recon + kl * beta + cross * gamma + dist * delta
    return LossBreakdown(recon, kl, cross, dist, total)


def paired_batch(ds: Dataset, idx: np.ndarray) -> CadaBatch:
    labels = ds.labels[idx]
    return CadaBatch(ds.visual[idx], ds.semantic[labels], labels)


def train_cada(ds: Dataset, cfg: CadaConfig, exclude_classes=()) -> tuple[CadaModel, list[dict[str, float]]]:
    """Fit on seen training visuals paired with their class semantics.

    Samples whose class is in ``exclude_classes`` are left out (validation
    classes kept aside as pseudo-unseen). Returns the model, with parameters
    snapped to float32 values, and one averaged loss record per epoch.
    """
    rng = Rng(cfg.seed)
    model = CadaModel.init(ds.visual_dim, ds.semantic_dim, cfg, rng.spawn())
    noise_rng, order_rng = rng.spawn(), rng.spawn()
    idx = ds.train_idx[~np.isin(ds.labels[ds.train_idx], np.asarray(exclude_classes, dtype=np.int64))]
    opt = Adam(model.parameters(), lr=cfg.lr)
    history: list[dict[str, float]] = []
    Z = cfg.latent_dim
    for epoch in range(cfg.epochs):
        perm = idx[order_rng.permutation(len(idx))]
        sums: dict[str, float] = {}
        n_batches = 0
        for b, start in enumerate(range(0, len(perm), cfg.batch_size)):
            batch = paired_batch(ds, perm[start:start + cfg.batch_size])
            n = len(batch.visual)
            noise = (noise_rng.normal((n, Z)), noise_rng.normal((n, Z)))
            opt.zero_grad()
            try:
                parts = total_loss(model, batch, epoch, cfg, noise)
                parts.weighted_total.backward()
            except NonFiniteError as exc:
                raise TrainingDivergence(f"cada: non-finite loss at epoch {epoch}, batch {b}: {exc}") from exc
            opt.step()
            for k, v in parts.values().items():
                sums[k] = sums.get(k, 0.0) + v
            n_batches += 1
        record = {k: v / max(n_batches, 1) for k, v in sums.items()}
        record["epoch"] = epoch
        history.append(record)
        log.debug("cada epoch %d: %s", epoch, record)
    round_to_f32(model.parameters())
    for p in model.parameters():
        p.zero_grad()
    return model, history


def sample_latents(model: CadaModel, modality: str, inputs: np.ndarray, n_per_input: int,
                   rng: Rng | None, labels=None) -> tuple[np.ndarray, np.ndarray]:
    """``n_per_input`` reparameterized draws per input row (consecutive rows per input).

    Returns the latent matrix and, per row, the label of its source input
    (``labels`` if given, else the input row index). ``rng=None`` draws zero noise.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    src = np.arange(len(inputs)) if labels is None else np.asarray(labels)
    if n_per_input == 0 or len(inputs) == 0:
        return np.zeros((0, model.latent_dim)), src[:0]
    with no_grad():
        g = encode(model, modality, np.repeat(inputs, n_per_input, axis=0))
        z = reparameterize(g, rng)
    return z.data, np.repeat(src, n_per_input)


def encode_mean(model: CadaModel, modality: str, inputs: np.ndarray) -> np.ndarray:
    """Deterministic encoding (posterior mean)."""
    with no_grad():
        return encode(model, modality, inputs).mu.data
