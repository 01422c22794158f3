"""Common view of the two latent model families used by the gate and the class head."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Rng, ShapeError, Tensor, no_grad
from .cada import CadaModel, encode_mean, sample_latents
from .cycle import CycleModel, synth_features


@dataclass
class LatentView:
    """How a trained latent model turns visual and semantic inputs into latent rows.

    * ``embed``: deterministic latent of real visual features (inference).
    * ``draw_visual``: training latents of real visual features.
    * ``draw_semantic``: latents derived from class semantics only.
    """

    model: CadaModel | CycleModel
    semantic: np.ndarray

    @property
    def family(self) -> str:
        return "cada" if isinstance(self.model, CadaModel) else "cycle"

    @property
    def latent_dim(self) -> int:
        return self.model.latent_dim if self.family == "cada" else self.model.visual_dim

    def embed(self, visual: np.ndarray) -> np.ndarray:
        if self.family == "cada":
            return encode_mean(self.model, "visual", visual)
        visual = np.atleast_2d(np.asarray(visual, dtype=np.float64))
        if visual.shape[1] != self.model.visual_dim:
            raise ShapeError(f"visual input shape {visual.shape} does not match feature size {self.model.visual_dim}")
        return visual

    def draw_visual(self, visual: np.ndarray, rng: Rng | None) -> np.ndarray:
        if self.family == "cada":
            return sample_latents(self.model, "visual", visual, 1, rng)[0]
        return np.asarray(visual, dtype=np.float64)

    def draw_semantic(self, classes, n_per_class: int, rng: Rng | None) -> tuple[np.ndarray, np.ndarray]:
        classes = np.asarray(list(classes), dtype=np.int64)
        if self.family == "cada":
            return sample_latents(self.model, "semantic", self.semantic[classes], n_per_class, rng, labels=classes)
        return synth_features(self.model, self.semantic, classes, n_per_class, rng)

    def draw_roundtrip(self, classes, n_per_class: int, rng: Rng | None) -> tuple[np.ndarray, np.ndarray]:
        """Semantic draws decoded to visual features and re-encoded by the visual encoder.

        Gives semantic-only latents the statistics of encoded visuals. For the
        cycle family generated features already live in visual space.
        """
        if self.family != "cada":
            return self.draw_semantic(classes, n_per_class, rng)
        z, y = self.draw_semantic(classes, n_per_class, rng)
        with no_grad():
            x = self.model.dec_visual(Tensor(z)).data
        return sample_latents(self.model, "visual", x, 1, rng)[0], y

    def draw_semantic_counts(self, counts: dict[int, int], rng: Rng | None) -> tuple[np.ndarray, np.ndarray]:
        """Semantic-derived draws with a per-class count."""
        zs, ys = [np.zeros((0, self.latent_dim))], [np.zeros(0, dtype=np.int64)]
        for c, n in counts.items():
            z, y = self.draw_semantic([c], n, rng)
            zs.append(z)
            ys.append(y)
        return np.vstack(zs), np.concatenate(ys)
