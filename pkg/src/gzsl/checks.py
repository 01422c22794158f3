"""Finite-difference checks of every training loss on small seeded instances."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import MLP, Rng, Tensor, cross_entropy, gradcheck
from .cada import (
    CadaBatch,
    CadaConfig,
    CadaModel,
    Schedule,
    cross_alignment_loss,
    distribution_alignment_loss,
    encode,
    kl_term,
    reconstruction_loss,
    total_loss,
)
from .cycle import CycleConfig, CycleModel, critic_losses, cycle_loss, generate

TOLERANCE = 1e-6

# A check builds (loss_builder, named parameters) from a seeded generator.
Check = Callable[[Rng], tuple[Callable[[], Tensor], dict[str, Tensor]]]

_VIS, _SEM, _N = 5, 3, 4


def _toy_cada(rng: Rng) -> tuple[CadaModel, CadaBatch, tuple[np.ndarray, np.ndarray], CadaConfig]:
    cfg = CadaConfig(latent_dim=2, enc_hidden_visual=4, enc_hidden_semantic=4, dec_hidden_visual=4,
                     dec_hidden_semantic=4, gamma_schedule=Schedule(0.5, 0, 2),
                     delta_schedule=Schedule(0.25, 0, 2), kl_schedule=Schedule(0.1, 0, 2))
    model = CadaModel.init(_VIS, _SEM, cfg, rng.spawn())
    batch = CadaBatch(rng.normal((_N, _VIS)), rng.normal((_N, _SEM)))
    noise = (rng.normal((_N, 2)), rng.normal((_N, 2)))
    return model, batch, noise, cfg


def _cada_check(loss: Callable) -> Check:
    def build(rng: Rng):
        model, batch, noise, cfg = _toy_cada(rng)
        return (lambda: loss(model, batch, noise, cfg)), model.named_parameters()
    return build


def _toy_cycle(rng: Rng) -> tuple[CycleModel, np.ndarray, np.ndarray, np.ndarray]:
    cfg = CycleConfig(gen_hidden=4, critic_hidden=4)
    model = CycleModel.init(_VIS, _SEM, cfg, rng.spawn())
    semantic = rng.normal((_N, _SEM))
    real = rng.uniform((_N, _VIS), 0.0, 1.0)
    noise = rng.normal((_N, model.noise_dim))
    return model, semantic, real, noise


def _check_critic(rng: Rng):
    model, semantic, real, noise = _toy_cycle(rng)
    fake = generate(model, semantic, noise=noise).data
    return (lambda: critic_losses(model, real, fake, semantic).critic_loss,
            model.critic.named_parameters("critic"))


def _check_generator(rng: Rng):
    model, semantic, real, noise = _toy_cycle(rng)
    return (lambda: critic_losses(model, real, generate(model, semantic, noise=noise), semantic).generator_loss,
            model.generator.named_parameters("gen"))


def _check_cycle(rng: Rng):
    model, semantic, _, noise = _toy_cycle(rng)
    params = {**model.generator.named_parameters("gen"), **model.regressor.named_parameters("reg")}
    return lambda: cycle_loss(semantic, model.regressor(generate(model, semantic, noise=noise))), params


def _softmax_check(prefix: str, n_out: int, hidden: int) -> Check:
    def build(rng: Rng):
        sizes = [_VIS, hidden, n_out] if hidden else [_VIS, n_out]
        mlp = MLP.init(sizes, rng.spawn())
        z = rng.normal((2 * n_out, _VIS))
        y = np.arange(2 * n_out) % n_out
        return (lambda: cross_entropy(mlp(Tensor(z)), y)), mlp.named_parameters(prefix)
    return build


REGISTRY: dict[str, Check] = {
    "cada.reconstruction": _cada_check(lambda m, b, n, c: reconstruction_loss(m, b, n)),
    "cada.kl": _cada_check(lambda m, b, n, c: kl_term(encode(m, "visual", b.visual))
                           + kl_term(encode(m, "semantic", b.semantic))),
    "cada.cross_alignment": _cada_check(lambda m, b, n, c: cross_alignment_loss(m, b, n)),
    "cada.distribution_alignment": _cada_check(
        lambda m, b, n, c: distribution_alignment_loss(encode(m, "visual", b.visual),
                                                       encode(m, "semantic", b.semantic))),
    "cada.weighted_total": _cada_check(lambda m, b, n, c: total_loss(m, b, 1.0, c, n).weighted_total),
    "cycle.critic": _check_critic,
    "cycle.generator": _check_generator,
    "cycle.cycle": _check_cycle,
    "head.cross_entropy": _softmax_check("head", 3, 0),
    "dc.cross_entropy": _softmax_check("dc", 2, 4),
}


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: float
    passed: bool

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<30s} rel_err={self.error:.3e}"


def run_checks(registry: dict[str, Check] | None = None, seed: int = 0,
               tol: float = TOLERANCE) -> list[CheckResult]:
    """One result per registered loss; every check gets its own generator derived from ``seed``."""
    registry = REGISTRY if registry is None else registry
    out = []
    for i, (name, build) in enumerate(registry.items()):
        loss_builder, params = build(Rng(seed * 1000 + i))
        err = gradcheck(loss_builder, params)
        out.append(CheckResult(name, err, err < tol))
    return out
