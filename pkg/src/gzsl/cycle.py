"""Cycle-consistent conditional Wasserstein GAN producing visual features from semantics."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import (
    MLP,
    Adam,
    NonFiniteError,
    Rng,
    ShapeError,
    Tensor,
    clip_weights,
    concat,
    no_grad,
    round_to_f32,
)
from .cada import TrainingDivergence
from .data import Dataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CycleConfig:
    noise_dim: int | None = None     # None: same as the semantic dimension
    gen_hidden: int = 4096
    critic_hidden: int = 4096
    clip_c: float = 0.01
    n_critic: int = 5
    gamma_cyc: float = 10.0
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-4
    beta1: float = 0.5
    regress_real: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.clip_c > 0:
            raise ValueError("CycleConfig.clip_c must be positive")
        if self.n_critic < 1:
            raise ValueError("CycleConfig.n_critic must be >= 1")
        if self.epochs < 0 or self.batch_size < 1 or not self.lr > 0:
            raise ValueError("CycleConfig needs epochs >= 0, batch_size >= 1, lr > 0")
        if self.noise_dim is not None and self.noise_dim < 1:
            raise ValueError("CycleConfig.noise_dim must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CycleConfig":
        return cls(**d)


@dataclass
class CycleModel:
    generator: MLP   # semantic ++ noise -> hidden (leaky relu) -> features (relu)
    critic: MLP      # features ++ semantic -> hidden (leaky relu) -> scalar
    regressor: MLP   # features -> semantic, linear

    @classmethod
    def init(cls, visual_dim: int, semantic_dim: int, cfg: CycleConfig, rng: Rng | None = None) -> "CycleModel":
        rng = rng or Rng(cfg.seed)
        noise_dim = cfg.noise_dim or semantic_dim
        return cls(
            MLP.init([semantic_dim + noise_dim, cfg.gen_hidden, visual_dim], rng, "leaky_relu", "relu"),
            MLP.init([visual_dim + semantic_dim, cfg.critic_hidden, 1], rng, "leaky_relu", "identity"),
            MLP.init([visual_dim, semantic_dim], rng),
        )

    @property
    def visual_dim(self) -> int:
        return self.generator.n_out

    @property
    def semantic_dim(self) -> int:
        return self.regressor.n_out

    @property
    def noise_dim(self) -> int:
        return self.generator.n_in - self.semantic_dim

    def named_parameters(self) -> dict[str, Tensor]:
        return {**self.generator.named_parameters("gen"), **self.critic.named_parameters("critic"),
                **self.regressor.named_parameters("reg")}

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())


def generate(model: CycleModel, semantic_rows, rng: Rng | None = None, noise: np.ndarray | None = None) -> Tensor:
    """One feature row per semantic row; noise from ``noise``, else ``rng``, else zero."""
    a = semantic_rows if isinstance(semantic_rows, Tensor) else Tensor(np.atleast_2d(semantic_rows))
    if a.data.ndim != 2 or a.shape[1] != model.semantic_dim:
        raise ShapeError(f"semantic input shape {a.shape} does not match generator semantic size {model.semantic_dim}")
    if noise is None:
        shape = (a.shape[0], model.noise_dim)
        noise = rng.normal(shape) if rng is not None else np.zeros(shape)
    return model.generator(concat([a, Tensor(noise)], axis=1))


def critic_score(model: CycleModel, features, semantic) -> Tensor:
    x = features if isinstance(features, Tensor) else Tensor(features)
    a = semantic if isinstance(semantic, Tensor) else Tensor(semantic)
    return model.critic(concat([x, a], axis=1))


@dataclass
class WganLosses:
    critic_loss: Tensor
    generator_loss: Tensor


def wasserstein_losses(critic_real: Tensor, critic_fake: Tensor) -> WganLosses:
    """critic: -(E[D(real)] - E[D(fake)]); generator: -E[D(fake)]."""
    if critic_real.size == 0 or critic_fake.size == 0:
        raise ValueError("empty batch")
    fake_mean = critic_fake.mean()
    return WganLosses(fake_mean - critic_real.mean(), -fake_mean)


def critic_losses(model: CycleModel, real_batch, fake_batch, semantic) -> WganLosses:
    """Both WGAN losses for real and generated features conditioned on the same semantic rows."""
    if np.shape(_data(real_batch))[0] == 0 or np.shape(_data(fake_batch))[0] == 0:
        raise ValueError("empty batch")
    return wasserstein_losses(critic_score(model, real_batch, semantic), critic_score(model, fake_batch, semantic))


def _data(x):
    return x.data if isinstance(x, Tensor) else x


def cycle_loss(semantic_rows, regressed_rows) -> Tensor:
    """Batch mean of the squared L2 distance between semantics and their regressed reconstruction."""
    a = semantic_rows if isinstance(semantic_rows, Tensor) else Tensor(semantic_rows)
    r = regressed_rows if isinstance(regressed_rows, Tensor) else Tensor(regressed_rows)
    if a.shape != r.shape:
        raise ShapeError(f"cycle_loss shape mismatch: {a.shape} vs {r.shape}")
    d = a - r
    return (d * d).sum() * (1.0 / a.shape[0])


def generator_objective(model: CycleModel, semantic, noise: np.ndarray, gamma_cyc: float,
                        real: np.ndarray | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """(total, generator_loss, cycle term) for one generator/regressor update.

    With ``real`` given, the regressor is also fitted to map the real
    features of the batch onto their semantics, which anchors the cycle term.
    """
    fake = generate(model, semantic, noise=noise)
    g_loss = -critic_score(model, fake, semantic).mean()
    cyc = cycle_loss(semantic, model.regressor(fake))
    total = g_loss + cyc * gamma_cyc
    if real is not None:
        total = total + cycle_loss(semantic, model.regressor(Tensor(real))) * gamma_cyc
    return total, g_loss, cyc


def class_mean_gap(model: CycleModel, ds: Dataset, classes, n_per_class: int, rng: Rng) -> float:
    """Mean distance between generated and real class means over ``classes``."""
    gaps = []
    for c in classes:
        real = ds.visual[ds.train_idx[ds.labels[ds.train_idx] == c]]
        if not len(real):
            continue
        with no_grad():
            fake = generate(model, np.repeat(ds.semantic[[c]], n_per_class, axis=0), rng).data
        gaps.append(np.linalg.norm(fake.mean(0) - real.mean(0)))
    return float(np.mean(gaps))


def train_cycle(ds: Dataset, cfg: CycleConfig, exclude_classes=()) -> tuple[CycleModel, list[dict[str, float]]]:
    """Alternate ``n_critic`` clipped critic updates with one generator + regressor update.

    One epoch is one pass of generator updates over the seen training
    samples; every critic update draws its own random real batch.
    """
    rng = Rng(cfg.seed)
    model = CycleModel.init(ds.visual_dim, ds.semantic_dim, cfg, rng.spawn())
    noise_rng, order_rng, probe_rng = rng.spawn(), rng.spawn(), rng.spawn()
    idx = ds.train_idx[~np.isin(ds.labels[ds.train_idx], np.asarray(exclude_classes, dtype=np.int64))]
    classes = np.unique(ds.labels[idx])
    critic_params = model.critic.parameters()
    gen_params = model.generator.parameters() + model.regressor.parameters()
    opt_c = Adam(critic_params, lr=cfg.lr, beta1=cfg.beta1)
    opt_g = Adam(gen_params, lr=cfg.lr, beta1=cfg.beta1)
    history: list[dict[str, float]] = []
    for epoch in range(cfg.epochs):
        perm = idx[order_rng.permutation(len(idx))]
        sums = {"critic_loss": 0.0, "generator_loss": 0.0, "cycle": 0.0}
        n_steps = 0
        for start in range(0, len(perm), cfg.batch_size):
            batch = perm[start:start + cfg.batch_size]
            try:
                for _ in range(cfg.n_critic):
                    cidx = idx[order_rng.integers(len(idx), len(batch))]
                    a = ds.semantic[ds.labels[cidx]]
                    with no_grad():
                        fake = generate(model, a, noise_rng).data
                    for p in critic_params:
                        p.zero_grad()
                    losses = critic_losses(model, ds.visual[cidx], fake, a)
                    losses.critic_loss.backward()
                    opt_c.step()
                    clip_weights(critic_params, cfg.clip_c)
                a = ds.semantic[ds.labels[batch]]
                noise = noise_rng.normal((len(batch), model.noise_dim))
                for p in model.parameters():
                    p.zero_grad()
                total, g_loss, cyc = generator_objective(
                    model, a, noise, cfg.gamma_cyc, ds.visual[batch] if cfg.regress_real else None)
                total.backward()
                opt_g.step()
            except NonFiniteError as exc:
                raise TrainingDivergence(f"cycle: non-finite loss at epoch {epoch}: {exc}") from exc
            sums["critic_loss"] += losses.critic_loss.item()
            sums["generator_loss"] += g_loss.item()
            sums["cycle"] += cyc.item()
            n_steps += 1
        record = {k: v / max(n_steps, 1) for k, v in sums.items()}
        record["class_mean_gap"] = class_mean_gap(model, ds, classes, 20, Rng(probe_rng.state))
        record["epoch"] = epoch
        history.append(record)
        log.debug("cycle epoch %d: %s", epoch, record)
    round_to_f32(model.parameters())
    for p in model.parameters():
        p.zero_grad()
    return model, history


def synth_features(model: CycleModel, semantic: np.ndarray, classes, n_per_class: int,
                   rng: Rng | None) -> tuple[np.ndarray, np.ndarray]:
    """``n_per_class`` generated feature rows per class, with their labels."""
    classes = np.asarray(list(classes), dtype=np.int64)
    if n_per_class == 0 or len(classes) == 0:
        return np.zeros((0, model.visual_dim)), np.zeros(0, dtype=np.int64)
    labels = np.repeat(classes, n_per_class)
    with no_grad():
        feats = generate(model, semantic[labels], rng).data
    return feats, labels
