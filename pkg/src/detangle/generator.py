"""Image generator backends.

Generators decode latent codes into images. Production stacks bind a
pretrained style-based generator through this interface; the toy linear
generator gives a tiny differentiable stand-in whose "images" are plain
vectors, which keeps every loss analytically checkable.
"""

from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np
import torch


class GeneratorBackend(ABC):
    """Maps (batch, latent_dim) latent codes to (batch, output_dim) images."""

    latent_dim: int
    output_dim: int
    differentiable: bool = False

    @abstractmethod
    def generate(self, latents: torch.Tensor) -> torch.Tensor: ...

    def generate_np(self, latents: np.ndarray) -> np.ndarray:
        latents = np.atleast_2d(np.asarray(latents, dtype=np.float64))
        with torch.no_grad():
            images = self.generate(torch.as_tensor(latents, dtype=torch.float64))
        return images.numpy()

    def check_latents(self, latents: torch.Tensor) -> None:
        if latents.ndim != 2 or latents.shape[1] != self.latent_dim:
            raise ValueError(
                f"expected (batch, {self.latent_dim}) latents, got {tuple(latents.shape)}"
            )


class ToyLinearGenerator(GeneratorBackend):
    """Fixed random linear map from latents to image vectors."""

    differentiable = True

    def __init__(self, latent_dim: int = 32, output_dim: int = 64, seed: int = 0):
        self.latent_dim = int(latent_dim)
        self.output_dim = int(output_dim)
        self.seed = int(seed)
        rng = np.random.default_rng(seed)
        matrix = rng.standard_normal((output_dim, latent_dim)) / np.sqrt(latent_dim)
        self.matrix = matrix
        self._torch_matrix = torch.as_tensor(matrix, dtype=torch.float64)

    def generate(self, latents: torch.Tensor) -> torch.Tensor:
        self.check_latents(latents)
        return latents @ self._torch_matrix.T.to(latents.dtype)
