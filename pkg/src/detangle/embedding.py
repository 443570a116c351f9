"""Joint text-image embedding backends and the cosine distance they induce.

Every backend maps texts and images into one unit-normalized vector space;
the distance between a text and an image is ``1 - dot`` of their embeddings,
which lies in [0, 2] for unit vectors. Real encoder stacks plug in behind
:class:`EmbeddingBackend`; the linear synthetic backend gives a fully
deterministic, differentiable space for desk-scale runs. Image preprocessing
(resizing, normalization) is owned by each backend and must be documented by
it; the synthetic backend consumes plain vectors and applies none.
"""

from __future__ import annotations

import hashlib
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

#: Tolerated deviation from unit norm for stored embeddings.
NORM_TOLERANCE = 1e-6


class BackendError(RuntimeError):
    """An embedding/generator/LM backend is unavailable or failed."""


class ModelMismatchError(ValueError):
    """Vectors from different backends were combined."""


@dataclass(frozen=True)
class EmbeddingVector:
    """A unit-normalized embedding tagged with the backend that produced it."""

    values: np.ndarray
    model_id: str

    def __post_init__(self) -> None:
        values = np.asarray(self.values)
        if values.ndim != 1:
            raise ValueError(f"embedding must be a 1-d vector, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("embedding contains non-finite entries")
        norm = float(np.linalg.norm(values))
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise ValueError(f"embedding norm {norm} deviates from 1 by more than {NORM_TOLERANCE}")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def of(cls, raw: np.ndarray, model_id: str) -> "EmbeddingVector":
        """Normalize a raw vector into an EmbeddingVector."""
        raw = np.asarray(raw, dtype=np.float64)
        norm = np.linalg.norm(raw)
        if not np.isfinite(norm) or norm == 0.0:
            raise ValueError("cannot normalize a zero or non-finite vector")
        return cls(raw / norm, model_id)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def clip_distance(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine distance ``1 - dot`` between two embeddings of the same backend."""
    if a.model_id != b.model_id:
        raise ModelMismatchError(
            f"cannot compare embeddings from {a.model_id!r} and {b.model_id!r}"
        )
    if a.dim != b.dim:
        raise ModelMismatchError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return 1.0 - float(a.values @ b.values)


class EmbeddingBackend(ABC):
    """Maps texts and images into one joint unit-normalized vector space.

    Subclasses implement :meth:`_embed_text` / :meth:`_embed_image` returning
    raw (not necessarily normalized) vectors; the public methods normalize,
    validate, and count calls. Backends must be safe for concurrent embed
    calls or perform their own serialization. ``differentiable`` backends
    additionally expose a torch path through :meth:`embed_image_tensor`.
    """

    model_id: str
    dim: int
    differentiable: bool = False

    def __init__(self) -> None:
        self.text_calls = 0
        self.image_calls = 0

    def embed_text(self, text: str) -> EmbeddingVector:
        if not isinstance(text, str) or not text.strip():
            raise ValueError("text to embed must be a non-empty string")
        self.text_calls += 1
        return EmbeddingVector.of(self._embed_text(text), self.model_id)

    def embed_image(self, image: np.ndarray) -> EmbeddingVector:
        self.image_calls += 1
        return EmbeddingVector.of(self._embed_image(np.asarray(image)), self.model_id)

    @abstractmethod
    def _embed_text(self, text: str) -> np.ndarray: ...

    @abstractmethod
    def _embed_image(self, image: np.ndarray) -> np.ndarray: ...

    # -- differentiable extension ------------------------------------------

    def embed_image_tensor(self, images):
        """Embed a (batch, ...) torch tensor of images, preserving gradients."""
        raise BackendError(
            f"backend {self.model_id!r} does not declare a differentiable image path"
        )

    def text_tensor(self, text: str):
        """The text embedding as a constant torch tensor."""
        import torch

        return torch.from_numpy(np.asarray(self.embed_text(text).values))


def _text_seed(seed: int, text: str) -> list[int]:
    # Stable across processes: no reliance on PYTHONHASHSEED.
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return [seed & 0xFFFFFFFF, int.from_bytes(digest[:8], "little")]


class LinearSyntheticBackend(EmbeddingBackend):
    """Deterministic linear embedding space with registered text directions.

    Texts embed to registered unit directions (unregistered texts fall back
    to a seeded hash-derived direction, so any text embeds reproducibly).
    Images are plain vectors mapped through an optional fixed matrix and
    normalized; with no matrix the image space *is* the embedding space.
    The torch image path makes the backend differentiable end to end.
    """

    differentiable = True

    def __init__(
        self,
        dim: int,
        directions: dict[str, np.ndarray],
        image_matrix: np.ndarray | None = None,
        seed: int = 0,
        model_id: str | None = None,
    ) -> None:
        super().__init__()
        self.dim = int(dim)
        self.seed = int(seed)
        self._directions: dict[str, np.ndarray] = {}
        for text, direction in directions.items():
            direction = np.asarray(direction, dtype=np.float64)
            if direction.shape != (self.dim,):
                raise ValueError(
                    f"direction for {text!r} has shape {direction.shape}, expected ({self.dim},)"
                )
            norm = np.linalg.norm(direction)
            if abs(norm - 1.0) > NORM_TOLERANCE:
                raise ValueError(f"direction for {text!r} is not unit length (norm {norm})")
            self._directions[text] = direction
        if image_matrix is not None:
            image_matrix = np.asarray(image_matrix, dtype=np.float64)
            if image_matrix.shape[0] != self.dim:
                raise ValueError(
                    f"image matrix maps into {image_matrix.shape[0]} dims, expected {self.dim}"
                )
        self.image_matrix = image_matrix
        self.input_dim = self.dim if image_matrix is None else image_matrix.shape[1]
        self.model_id = model_id if model_id is not None else f"synthetic:{self._fingerprint()}"
        self._torch_matrix = None

    def _fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.dim).encode())
        h.update(str(self.seed).encode())
        for text in sorted(self._directions):
            h.update(text.encode())
            h.update(self._directions[text].tobytes())
        if self.image_matrix is not None:
            h.update(self.image_matrix.tobytes())
        return h.hexdigest()[:12]

    @property
    def registered_texts(self) -> tuple[str, ...]:
        return tuple(self._directions)

    def direction_for(self, text: str) -> np.ndarray:
        """The raw unit direction a text embeds to (registered or derived)."""
        known = self._directions.get(text)
        if known is not None:
            return known
        rng = np.random.default_rng(_text_seed(self.seed, text))
        vec = rng.standard_normal(self.dim)
        return vec / np.linalg.norm(vec)

    def _embed_text(self, text: str) -> np.ndarray:
        return self.direction_for(text)

    def _embed_image(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.shape != (self.input_dim,):
            raise ValueError(
                f"image must be a vector of length {self.input_dim}, got shape {image.shape}"
            )
        if self.image_matrix is None:
            return image
        return self.image_matrix @ image

    def embed_image_tensor(self, images):
        import torch

        if images.ndim != 2 or images.shape[-1] != self.input_dim:
            raise ValueError(
                f"expected (batch, {self.input_dim}) tensor, got {tuple(images.shape)}"
            )
        self.image_calls += int(images.shape[0])
        if self.image_matrix is not None:
            if self._torch_matrix is None or self._torch_matrix.dtype != images.dtype:
                self._torch_matrix = torch.as_tensor(self.image_matrix, dtype=images.dtype)
            mapped = images @ self._torch_matrix.T
        else:
            mapped = images
        return mapped / mapped.norm(dim=-1, keepdim=True)

    def text_tensor(self, text: str):
        import torch

        return torch.as_tensor(self.direction_for(text), dtype=torch.float64)
