"""Training losses for disentangled latent mapping.

The command loss pulls the edited image toward the command text in
embedding space; the squared-offset and identity losses keep the edit small
and the person recognizable; the entanglement loss penalizes any change in
the edited image's distance to each predicted entangled attribute:

    L_E = mean_n (d(i, t_n) - d(i', t_n))^2

The total is ``L_C + lambda_l2 * L_2 + lambda_id * L_ID + lambda_e * L_E``.
Loss functions accept torch tensors (gradients flow) or plain arrays and
return the same kind.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .embedding import EmbeddingBackend, EmbeddingVector, clip_distance


@dataclass(frozen=True)
class LossConfig:
    """Coefficients of the composite training loss."""

    lambda_l2: float = 0.8
    lambda_id: float = 0.1
    lambda_e: float = 100.0

    def __post_init__(self) -> None:
        for name in ("lambda_l2", "lambda_id", "lambda_e"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def baseline(self) -> "LossConfig":
        """The same config with the entanglement term switched off."""
        return LossConfig(lambda_l2=self.lambda_l2, lambda_id=self.lambda_id, lambda_e=0.0)


def cosine_distances(embeddings: torch.Tensor, text_vectors: torch.Tensor) -> torch.Tensor:
    """(batch, n_texts) cosine distances between unit embeddings and unit texts."""
    return 1.0 - embeddings @ text_vectors.T


def entanglement_gap(d_before, d_after):
    """Mean squared change of entangled distances; symmetric in its arguments.

    Works on numpy arrays and torch tensors alike; zero iff every distance
    is unchanged.
    """
    diff = d_before - d_after
    return (diff * diff).mean()


def clip_loss(image, command: str, backend: EmbeddingBackend):
    """Cosine distance between one edited image and the command text.

    Torch input keeps the graph alive so gradients reach mapper parameters;
    array input returns a float.
    """
    if isinstance(image, torch.Tensor):
        embedded = backend.embed_image_tensor(image.reshape(1, -1))[0]
        return 1.0 - embedded @ backend.text_tensor(command).to(image.dtype)
    return clip_distance(backend.embed_image(np.asarray(image)), backend.embed_text(command))


def entanglement_loss(image, image_edited, entangled: list[str], backend: EmbeddingBackend):
    """Mean squared change in distance to each entangled attribute text."""
    if not entangled:
        raise ValueError(
            "entangled attribute list is empty; train without the entanglement term instead"
        )
    if isinstance(image, torch.Tensor):
        texts = torch.stack([backend.text_tensor(t).to(image.dtype) for t in entangled])
        d_before = cosine_distances(backend.embed_image_tensor(image.reshape(1, -1)), texts)
        d_after = cosine_distances(backend.embed_image_tensor(image_edited.reshape(1, -1)), texts)
        return entanglement_gap(d_before, d_after)
    before = backend.embed_image(np.asarray(image))
    after = backend.embed_image(np.asarray(image_edited))
    d_before = np.array([clip_distance(before, backend.embed_text(t)) for t in entangled])
    d_after = np.array([clip_distance(after, backend.embed_text(t)) for t in entangled])
    return float(entanglement_gap(d_before, d_after))


def l2_loss(offset):
    """Squared norm of a latent offset (mean over the batch if batched)."""
    if isinstance(offset, torch.Tensor):
        squared = (offset * offset).sum(dim=-1)
        return squared.mean() if squared.ndim else squared
    offset = np.asarray(offset, dtype=np.float64)
    squared = (offset * offset).sum(axis=-1)
    return float(squared.mean()) if squared.ndim else float(squared)


class IdentityBackend:
    """Embeds an image into an identity space; 1 - cosine is the identity loss."""

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError


class LinearIdentityBackend(IdentityBackend):
    """Toy identity embedding: a fixed random projection of the image."""

    def __init__(self, image_dim: int, identity_dim: int = 16, seed: int = 0):
        rng = np.random.default_rng(seed)
        matrix = rng.standard_normal((identity_dim, image_dim)) / np.sqrt(image_dim)
        self._matrix = torch.as_tensor(matrix, dtype=torch.float64)

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        projected = images @ self._matrix.T.to(images.dtype)
        return projected / projected.norm(dim=-1, keepdim=True)


def id_loss(image, image_edited, identity_backend: IdentityBackend):
    """1 - cosine similarity of the two images' identity embeddings."""
    tensor_in = isinstance(image, torch.Tensor)
    img = image if tensor_in else torch.as_tensor(np.asarray(image, dtype=np.float64))
    edited = (
        image_edited
        if isinstance(image_edited, torch.Tensor)
        else torch.as_tensor(np.asarray(image_edited, dtype=np.float64))
    )
    before = identity_backend.embed(img.reshape(1, -1))[0]
    after = identity_backend.embed(edited.reshape(1, -1))[0]
    value = 1.0 - before @ after
    return value if tensor_in else float(value)


def combine_losses(l_c, l_2, l_id, l_e, config: LossConfig):
    """Weighted total; the composition every training trace must satisfy."""
    return l_c + config.lambda_l2 * l_2 + config.lambda_id * l_id + config.lambda_e * l_e
