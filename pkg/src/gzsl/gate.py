"""Seen/unseen domain classifier, its temperature calibration, and the same-domain gate."""
from __future__ import annotations

import logging
import math
import os
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .autodiff import (
    MLP,
    Adam,
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
from .data import Dataset
from .latent import LatentView

log = logging.getLogger(__name__)

SEEN, UNSEEN = 0, 1
DOMAINS = ("seen", "unseen")
T_MIN, T_MAX = 0.05, 20.0


@dataclass(frozen=True)
class GateConfig:
    dc_hidden: int = 64
    dc_epochs: int = 30
    dc_lr: float = 1e-3
    dc_batch_size: int = 64
    n_unseen_draws_per_class: int = 200
    n_seen_draws_per_class: int = 50
    class_balance: bool = True
    roundtrip_fraction: float = 0.0   # share of unseen draws decoded to visual space and re-encoded (cada)
    seed: int = 0

    def __post_init__(self):
        if self.n_unseen_draws_per_class < 1:
            raise ValueError("GateConfig.n_unseen_draws_per_class must be >= 1")
        if self.dc_hidden < 1 or self.dc_epochs < 0 or self.dc_batch_size < 1 or not self.dc_lr > 0:
            raise ValueError("GateConfig needs dc_hidden >= 1, dc_epochs >= 0, dc_batch_size >= 1, dc_lr > 0")
        if self.n_seen_draws_per_class < 0:
            raise ValueError("GateConfig.n_seen_draws_per_class must be >= 0")
        if not 0.0 <= self.roundtrip_fraction <= 1.0:
            raise ValueError("GateConfig.roundtrip_fraction must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DomainClassifier:
    mlp: MLP                   # latent -> hidden -> 2 logits (seen, unseen)
    temperature: float = 1.0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    @classmethod
    def init(cls, latent_dim: int, hidden: int, rng: Rng) -> "DomainClassifier":
        return cls(MLP.init([latent_dim, hidden, 2], rng))

    def logits(self, z: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.mlp(Tensor(np.atleast_2d(z))).data

    def named_parameters(self) -> dict[str, Tensor]:
        return self.mlp.named_parameters("dc")


def build_dc_training_set(view: LatentView, ds: Dataset, cfg: GateConfig, seen_classes=None,
                          unseen_classes=None, exclude_idx=()) -> tuple[np.ndarray, np.ndarray]:
    """Latent rows labelled seen (0) or unseen (1).

    Seen: latents of the seen classes' training visuals plus draws from their
    semantic rows. Unseen: ``n_unseen_draws_per_class`` semantic draws per
    unseen class. With ``class_balance`` the unseen draws per class are raised
    until both domains have equally many rows. A ``roundtrip_fraction`` share
    of each unseen class's draws is passed through the visual decoder and
    encoder instead (see ``LatentView.draw_roundtrip``).
    """
    seen = ds.seen_classes if seen_classes is None else np.asarray(seen_classes, dtype=np.int64)
    unseen = ds.unseen_classes if unseen_classes is None else np.asarray(unseen_classes, dtype=np.int64)
    if len(unseen) == 0:
        raise ValueError("domain classifier needs at least one unseen class")
    rng = Rng(cfg.seed)
    idx = ds.train_idx[np.isin(ds.labels[ds.train_idx], seen)]
    idx = idx[~np.isin(idx, np.asarray(exclude_idx, dtype=np.int64))]
    z_vis = view.draw_visual(ds.visual[idx], rng)
    z_sem, _ = view.draw_semantic(seen, cfg.n_seen_draws_per_class, rng)
    z_seen = np.vstack([z_vis, z_sem])
    n_unseen = len(unseen) * cfg.n_unseen_draws_per_class
    counts = {int(c): cfg.n_unseen_draws_per_class for c in unseen}
    if cfg.class_balance and n_unseen < len(z_seen):
        q, r = divmod(len(z_seen), len(unseen))
        counts = {int(c): q + (i < r) for i, c in enumerate(unseen)}
    if cfg.roundtrip_fraction > 0:
        zs, zr = [], []
        for c, n in counts.items():
            k = int(round(cfg.roundtrip_fraction * n))
            zs.append(view.draw_semantic([c], n - k, rng)[0])
            zr.append(view.draw_roundtrip([c], k, rng)[0])
        z_unseen = np.vstack(zs + zr)
    else:
        z_unseen, _ = view.draw_semantic_counts(counts, rng)
    z = np.vstack([z_seen, z_unseen])
    y = np.concatenate([np.full(len(z_seen), SEEN), np.full(len(z_unseen), UNSEEN)])
    return z, y


def train_dc(latents: np.ndarray, domains: np.ndarray, cfg: GateConfig) -> DomainClassifier:
    """Binary cross-entropy training with Adam."""
    domains = np.asarray(domains, dtype=np.int64)
    if len(np.unique(domains)) < 2:
        raise ValueError("domain classifier training set must contain both seen and unseen examples")
    rng = Rng(cfg.seed ^ 0xD0)
    dc = DomainClassifier.init(latents.shape[1], cfg.dc_hidden, rng.spawn())
    opt = Adam(dc.mlp.parameters(), lr=cfg.dc_lr)
    for _ in range(cfg.dc_epochs):
        perm = rng.permutation(len(latents))
        for start in range(0, len(perm), cfg.dc_batch_size):
            b = perm[start:start + cfg.dc_batch_size]
            opt.zero_grad()
            cross_entropy(dc.mlp(Tensor(latents[b])), domains[b]).backward()
            opt.step()
    round_to_f32(dc.mlp.parameters())
    opt.zero_grad()
    return dc


def _nll(logits: np.ndarray, labels: np.ndarray, t: float) -> float:
    s = logits / t
    s = s - s.max(axis=1, keepdims=True)
    logp = s - np.log(np.exp(s).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(labels)), labels].mean())


def golden_section(f, lo: float, hi: float, tol: float = 1e-7) -> float:
    """Minimiser of a unimodal ``f`` on [lo, hi]."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - inv_phi * (b - a), a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def fit_temperature(logits: np.ndarray, labels: np.ndarray) -> float:
    return golden_section(lambda t: _nll(logits, labels, t), T_MIN, T_MAX)


def calibrate(dc: DomainClassifier, latents: np.ndarray, domains: np.ndarray) -> DomainClassifier:
    """Copy of ``dc`` whose temperature minimises the validation NLL of the domain labels."""
    domains = np.asarray(domains, dtype=np.int64)
    if len(domains) == 0 or len(np.unique(domains)) < 2:
        log.warning("calibration set lacks one of the domains; keeping temperature 1")
        return replace(dc, temperature=1.0)
    return replace(dc, temperature=fit_temperature(dc.logits(latents), domains))


def domain_prob(dc: DomainClassifier, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(p_seen, p_unseen) from temperature-scaled logits."""
    p = softmax(dc.logits(z) / dc.temperature, axis=1)
    return p[:, SEEN], p[:, UNSEEN]


def domain_mask(class_domains, n_classes: int) -> np.ndarray:
    """Boolean mask of seen classes from a class -> 'seen'/'unseen' mapping."""
    mask = np.zeros(n_classes, dtype=bool)
    for c in range(n_classes):
        try:
            d = class_domains[c]
        except (KeyError, IndexError):
            raise ValueError(f"class {c} has no domain assignment") from None
        if d not in DOMAINS:
            raise ValueError(f"class {c} has unknown domain {d!r}")
        mask[c] = d == "seen"
    return mask


def gate(p_class: np.ndarray, p_domain, class_domains) -> np.ndarray:
    """Combined scores: p(y|z) * p(seen|z) for seen y, p(y|z) * p(unseen|z) for unseen y.

    Cross-domain terms are zero, so no class collects mass from the other domain.
    """
    p_class = np.asarray(p_class, dtype=np.float64)
    single = p_class.ndim == 1
    p_class = np.atleast_2d(p_class)
    p_s, p_u = (np.atleast_1d(np.asarray(p, dtype=np.float64)) for p in p_domain)
    seen = domain_mask(class_domains, p_class.shape[1])
    out = np.where(seen[None, :], p_class * p_s[:, None], p_class * p_u[:, None])
    return out[0] if single else out


def save_dc(dc: DomainClassifier, path: str | os.PathLike) -> None:
    save_arrays(path, state_dict(dc.named_parameters()))
    Path(f"{path}.temperature").write_text(f"{dc.temperature:.17g}\n")


def load_dc(path: str | os.PathLike, latent_dim: int, hidden: int) -> DomainClassifier:
    dc = DomainClassifier.init(latent_dim, hidden, Rng(0))
    load_into(dc.named_parameters(), load_arrays(path), str(path))
    dc.temperature = float(Path(f"{path}.temperature").read_text().strip())
    return dc
