from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from .tensor import NonFiniteError, Tensor, backward


class GradcheckError(RuntimeError):
    pass


def _named(params) -> dict[str, Tensor]:
    if isinstance(params, Mapping):
        return dict(params)
    return {f"param[{i}]": p for i, p in enumerate(params)}


def gradcheck(loss_builder: Callable[[], Tensor], params: Mapping[str, Tensor] | Sequence[Tensor],
              eps: float = 1e-5, zero_tol: float = 1e-8) -> float:
    """Largest relative error between analytic and central-difference gradients.

    The error for one parameter tensor is ``|a - n| / max(1e-12, |n|)`` with
    ``|.|`` the Euclidean norm over its entries; the maximum over parameter
    tensors is returned. A tensor whose analytic and numeric gradients both
    have norm below ``zero_tol`` counts as exact: its numeric gradient is pure
    rounding noise around a true zero. ``loss_builder`` must rebuild the loss from the
    current parameter values with any noise held fixed.
    """
    named = _named(params)
    for p in named.values():
        p.zero_grad()
    loss = loss_builder()
    backward(loss)
    analytic = {k: p.grad.copy() for k, p in named.items()}

    worst = 0.0
    for name, p in named.items():
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            try:
                flat[i] = orig + eps
                up = loss_builder().item()
                flat[i] = orig - eps
                down = loss_builder().item()
            except NonFiniteError as exc:
                raise GradcheckError(f"non-finite loss while probing {name}[{i}]") from exc
            finally:
                flat[i] = orig
            num_flat[i] = (up - down) / (2.0 * eps)
        n_norm = np.linalg.norm(numeric)
        if max(n_norm, np.linalg.norm(analytic[name])) < zero_tol:
            continue
        err = np.linalg.norm(analytic[name] - numeric) / max(1e-12, n_norm)
        worst = max(worst, float(err))
    for p in named.values():
        p.zero_grad()
    return worst
