"""Embedded image corpora and the synthetic worlds that generate them.

An :class:`EmbeddedCorpus` is an ordered set of item ids with their cached
unit embeddings. A :class:`SyntheticWorldSpec` describes a constructed
embedding space: one unit direction per attribute plus a pairwise
co-occurrence structure; sampling it yields a corpus together with the
ground-truth attribute assignments, which is what the predictor recall
tests and the pipeline's desk-scale mode run against.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from statistics import NormalDist

import numpy as np

from .embedding import NORM_TOLERANCE, EmbeddingVector, LinearSyntheticBackend


class CorpusError(ValueError):
    """A corpus or world specification is malformed."""


class InfeasibleCorrelationError(CorpusError):
    """The requested co-occurrence structure is not a valid correlation matrix."""


@dataclass
class EmbeddedCorpus:
    """Ordered item ids with their unit-normalized embeddings."""

    item_ids: list[str]
    embeddings: np.ndarray  # (count, dim)
    model_id: str
    provenance: list[str]
    _fingerprint: str | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2:
            raise CorpusError(f"embeddings must be 2-d, got shape {self.embeddings.shape}")
        if len(self.item_ids) != self.embeddings.shape[0]:
            raise CorpusError(
                f"{len(self.item_ids)} item ids but {self.embeddings.shape[0]} embedding rows"
            )
        if len(set(self.item_ids)) != len(self.item_ids):
            raise CorpusError("item ids are not unique")
        if len(self.provenance) != len(self.item_ids):
            raise CorpusError("provenance must list one source per item")
        if not np.all(np.isfinite(self.embeddings)):
            raise CorpusError("embeddings contain non-finite entries")
        norms = np.linalg.norm(self.embeddings, axis=1)
        if self.embeddings.shape[0] and np.max(np.abs(norms - 1.0)) > NORM_TOLERANCE:
            raise CorpusError("embedding rows must be unit-normalized")

    def __len__(self) -> int:
        return len(self.item_ids)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def fingerprint(self) -> str:
        if self._fingerprint is None:
            h = hashlib.sha256()
            h.update(self.model_id.encode())
            for item_id in self.item_ids:
                h.update(item_id.encode())
                h.update(b"\x00")
            h.update(np.ascontiguousarray(self.embeddings).tobytes())
            self._fingerprint = h.hexdigest()
        return self._fingerprint

    def distances_to(self, vector: EmbeddingVector) -> np.ndarray:
        """Cosine distances of every item to one embedding, in corpus order."""
        if vector.model_id != self.model_id:
            raise CorpusError(
                f"corpus holds {self.model_id!r} embeddings, got {vector.model_id!r}"
            )
        return 1.0 - self.embeddings @ vector.values

    def row(self, item_id: str) -> np.ndarray:
        return self.embeddings[self.item_ids.index(item_id)]

    def save(self, path: str | Path) -> None:
        np.savez(
            path,
            item_ids=np.array(self.item_ids),
            embeddings=self.embeddings,
            model_id=np.array(self.model_id),
            provenance=np.array(self.provenance),
        )

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddedCorpus":
        with np.load(path, allow_pickle=False) as data:
            embeddings = np.asarray(data["embeddings"], dtype=np.float64)
            # Kill float32 round-off from storage before the norm check.
            norms = np.linalg.norm(embeddings, axis=1, keepdims=True)
            return cls(
                item_ids=[str(s) for s in data["item_ids"]],
                embeddings=embeddings / norms,
                model_id=str(data["model_id"]),
                provenance=[str(s) for s in data["provenance"]],
            )


def _canonical_pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


@dataclass
class SyntheticWorldSpec:
    """A constructed embedding world with known attribute structure.

    ``attribute_directions`` maps attribute text to a unit direction;
    ``co_occurrence`` maps unordered attribute pairs to a latent correlation
    in [-1, 1] (unlisted pairs are uncorrelated). ``base_rates`` sets
    marginal presence probabilities, ``noise_scale`` the per-coordinate
    noise added before normalization. Attributes listed together in an
    ``exclusive_groups`` entry behave like one real-world category: exactly
    one of them is present per item (the one whose latent score clears its
    threshold by the most), which also keeps the per-item attribute count
    constant instead of letting it drift with the sampled presences.
    """

    dim: int
    attribute_directions: dict[str, np.ndarray]
    co_occurrence: dict[tuple[str, str], float] = field(default_factory=dict)
    seed: int = 0
    base_rates: dict[str, float] = field(default_factory=dict)
    default_base_rate: float = 0.5
    noise_scale: float = 0.05
    exclusive_groups: list[tuple[str, ...]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise CorpusError("dim must be positive")
        if not self.attribute_directions:
            raise CorpusError("world needs at least one attribute direction")
        fixed: dict[str, np.ndarray] = {}
        for text, direction in self.attribute_directions.items():
            direction = np.asarray(direction, dtype=np.float64)
            if direction.shape != (self.dim,):
                raise CorpusError(
                    f"direction for {text!r} has shape {direction.shape}, expected ({self.dim},)"
                )
            norm = np.linalg.norm(direction)
            if abs(norm - 1.0) > NORM_TOLERANCE:
                raise CorpusError(f"direction for {text!r} is not unit length")
            fixed[text] = direction
        self.attribute_directions = fixed
        canonical: dict[tuple[str, str], float] = {}
        for (a, b), rho in self.co_occurrence.items():
            for name in (a, b):
                if name not in self.attribute_directions:
                    raise CorpusError(f"co-occurrence names unknown attribute {name!r}")
            if a == b:
                raise CorpusError(f"co-occurrence pair ({a!r}, {b!r}) repeats an attribute")
            if not -1.0 <= rho <= 1.0:
                raise CorpusError(f"correlation {rho} for ({a!r}, {b!r}) outside [-1, 1]")
            key = _canonical_pair(a, b)
            if key in canonical and canonical[key] != rho:
                raise CorpusError(f"conflicting correlations for pair {key}")
            canonical[key] = float(rho)
        self.co_occurrence = canonical
        for text, rate in self.base_rates.items():
            if text not in self.attribute_directions:
                raise CorpusError(f"base rate names unknown attribute {text!r}")
            if not 0.0 < rate < 1.0:
                raise CorpusError(f"base rate for {text!r} must lie strictly in (0, 1)")
        if not 0.0 < self.default_base_rate < 1.0:
            raise CorpusError("default base rate must lie strictly in (0, 1)")
        if self.noise_scale < 0:
            raise CorpusError("noise scale must be nonnegative")
        normalized_groups: list[tuple[str, ...]] = []
        grouped: set[str] = set()
        for group in self.exclusive_groups:
            members = tuple(group)
            if len(members) < 2:
                raise CorpusError(f"exclusive group {members} needs at least 2 members")
            for name in members:
                if name not in self.attribute_directions:
                    raise CorpusError(f"exclusive group names unknown attribute {name!r}")
                if name in grouped:
                    raise CorpusError(f"attribute {name!r} appears in two exclusive groups")
                grouped.add(name)
            normalized_groups.append(members)
        self.exclusive_groups = normalized_groups

    @property
    def attribute_texts(self) -> tuple[str, ...]:
        return tuple(self.attribute_directions)

    @property
    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.dim).encode())
        h.update(str(self.seed).encode())
        h.update(repr(self.noise_scale).encode())
        h.update(repr(self.default_base_rate).encode())
        for text in self.attribute_texts:
            h.update(text.encode())
            h.update(self.attribute_directions[text].tobytes())
            h.update(repr(self.base_rates.get(text)).encode())
        for pair in sorted(self.co_occurrence):
            h.update(repr((pair, self.co_occurrence[pair])).encode())
        for group in self.exclusive_groups:
            h.update(repr(group).encode())
        return h.hexdigest()[:12]

    @property
    def model_id(self) -> str:
        return f"synthetic:{self.fingerprint}"

    def rate_of(self, text: str) -> float:
        return self.base_rates.get(text, self.default_base_rate)

    def correlation_matrix(self) -> np.ndarray:
        texts = self.attribute_texts
        index = {t: i for i, t in enumerate(texts)}
        corr = np.eye(len(texts))
        for (a, b), rho in self.co_occurrence.items():
            corr[index[a], index[b]] = rho
            corr[index[b], index[a]] = rho
        return corr

    def backend(self, image_matrix: np.ndarray | None = None) -> LinearSyntheticBackend:
        """An embedding backend sharing this world's directions and identity."""
        return LinearSyntheticBackend(
            dim=self.dim,
            directions=self.attribute_directions,
            image_matrix=image_matrix,
            seed=self.seed,
            model_id=self.model_id,
        )

    @classmethod
    def with_random_directions(
        cls,
        texts: list[str],
        dim: int,
        seed: int = 0,
        orthonormal: bool = False,
        **kwargs,
    ) -> "SyntheticWorldSpec":
        """Draw one random unit direction per attribute from the seed.

        With ``orthonormal=True`` the directions are mutually orthogonal
        (requires ``dim >= len(texts)``), which removes geometric cross-talk
        between attributes: distances then reflect presence alone, making
        the world a clean oracle for co-occurrence statistics.
        """
        rng = np.random.default_rng(seed)
        if orthonormal:
            if dim < len(texts):
                raise CorpusError(
                    f"need dim >= {len(texts)} for orthonormal directions, got {dim}"
                )
            basis, _ = np.linalg.qr(rng.standard_normal((dim, len(texts))))
            directions = {t: basis[:, i] for i, t in enumerate(texts)}
        else:
            directions = {}
            for text in texts:
                vec = rng.standard_normal(dim)
                directions[text] = vec / np.linalg.norm(vec)
        return cls(dim=dim, attribute_directions=directions, seed=seed, **kwargs)

    def to_json_dict(self) -> dict:
        return {
            "dim": self.dim,
            "seed": self.seed,
            "noise_scale": self.noise_scale,
            "default_base_rate": self.default_base_rate,
            "attribute_directions": {
                t: [float(x) for x in v] for t, v in self.attribute_directions.items()
            },
            "base_rates": dict(self.base_rates),
            "co_occurrence": [[a, b, rho] for (a, b), rho in sorted(self.co_occurrence.items())],
            "exclusive_groups": [list(g) for g in self.exclusive_groups],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SyntheticWorldSpec":
        data = json.loads(Path(path).read_text())
        return cls(
            dim=data["dim"],
            attribute_directions={
                t: np.asarray(v, dtype=np.float64)
                for t, v in data["attribute_directions"].items()
            },
            co_occurrence={(a, b): rho for a, b, rho in data.get("co_occurrence", [])},
            seed=data.get("seed", 0),
            base_rates=data.get("base_rates", {}),
            default_base_rate=data.get("default_base_rate", 0.5),
            noise_scale=data.get("noise_scale", 0.05),
            exclusive_groups=[tuple(g) for g in data.get("exclusive_groups", [])],
        )


def generate_synthetic_corpus(
    spec: SyntheticWorldSpec, count: int
) -> tuple[EmbeddedCorpus, dict[str, frozenset[str]]]:
    """Sample a corpus from a synthetic world, returning ground truth too.

    Attribute presence follows a Gaussian-copula model: latent scores are
    drawn from N(0, C) with C the spec's correlation matrix, and attribute k
    is present when its score clears the quantile set by its base rate. Each
    item's embedding is the normalized sum of its present directions plus
    isotropic noise. Fixed seeds give bit-identical corpora.
    """
    if count < 1:
        raise CorpusError("count must be positive")
    texts = spec.attribute_texts
    corr = spec.correlation_matrix()
    try:
        chol = np.linalg.cholesky(corr)
    except np.linalg.LinAlgError as exc:
        raise InfeasibleCorrelationError(
            "co-occurrence structure is not positive definite; reduce the "
            "pairwise correlations or make them mutually consistent"
        ) from exc

    # Presence iff the latent score clears the base-rate quantile.
    thresholds = np.array(
        [NormalDist().inv_cdf(1.0 - spec.rate_of(t)) for t in texts]
    )
    rng = np.random.default_rng(spec.seed)
    scores = rng.standard_normal((count, len(texts))) @ chol.T
    present = scores > thresholds
    index = {t: i for i, t in enumerate(texts)}
    for group in spec.exclusive_groups:
        cols = [index[name] for name in group]
        margins = scores[:, cols] - thresholds[cols]
        winners = np.argmax(margins, axis=1)
        present[:, cols] = False
        present[np.arange(count), [cols[w] for w in winners]] = True

    direction_matrix = np.stack([spec.attribute_directions[t] for t in texts])
    raw = present.astype(np.float64) @ direction_matrix
    if spec.noise_scale > 0:
        raw = raw + spec.noise_scale * rng.standard_normal((count, spec.dim))

    embeddings = np.empty_like(raw)
    width = int(math.log10(max(count - 1, 1))) + 1
    item_ids = [f"item-{i:0{width}d}" for i in range(count)]
    truth: dict[str, frozenset[str]] = {}
    for i in range(count):
        vec = raw[i]
        norm = np.linalg.norm(vec)
        if norm < 1e-12:
            # No attributes and no noise: fall back to a seeded random point.
            vec = rng.standard_normal(spec.dim)
            norm = np.linalg.norm(vec)
        embeddings[i] = vec / norm
        truth[item_ids[i]] = frozenset(t for t, p in zip(texts, present[i]) if p)

    corpus = EmbeddedCorpus(
        item_ids=item_ids,
        embeddings=embeddings,
        model_id=spec.model_id,
        provenance=[f"synthetic:seed={spec.seed}"] * count,
    )
    return corpus, truth
