"""Disentanglement measurement for trained edits.

For a command edit, the manipulation effect is the drop in cosine distance
to the command text, ``delta_c = d(i, t_cmd) - d(i', t_cmd)``; each
predicted entangled attribute gets the analogous ``delta_e``. Deltas are
averaged over the test latents, then normalized by that attribute's
distance range over the reference corpus, and summarized as

    indicator = mean(|normalized delta_e|) / normalized delta_c

Lower is better: the edit moved toward the command without dragging the
entangled attributes along. An edit with no positive command effect cannot
be scored and is reported as invalid instead.
"""

from __future__ import annotations

import csv
import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .corpus import EmbeddedCorpus
from .embedding import EmbeddingBackend, clip_distance
from .generator import GeneratorBackend
from .predictor import EntanglementPrediction

INVALID_REASON_NO_EFFECT = "no manipulation effect"


class EvaluationError(ValueError):
    """Evaluation inputs are unusable (degenerate range, too few items, ...)."""


class ZeroRangeError(EvaluationError):
    """An attribute's distance range over the corpus has zero width."""


class InvalidIndicatorError(EvaluationError):
    """The command delta is not positive, so the ratio is meaningless."""


@dataclass(frozen=True)
class AttributeRange:
    """Min and max distance of a text to the reference corpus."""

    attribute: str
    d_min: float
    d_max: float

    def __post_init__(self) -> None:
        if self.d_max < self.d_min:
            raise EvaluationError(
                f"range for {self.attribute!r} has max {self.d_max} < min {self.d_min}"
            )

    @property
    def width(self) -> float:
        return self.d_max - self.d_min


_RANGE_CACHE: dict[tuple[str, str, str], AttributeRange] = {}
_RANGE_LOCK = threading.Lock()


def attribute_range(
    corpus: EmbeddedCorpus, attribute: str, backend: EmbeddingBackend
) -> AttributeRange:
    """Exact distance min/max of an attribute over the corpus, memoized."""
    if len(corpus) < 2:
        raise EvaluationError(
            f"need at least 2 corpus items to compute a range, got {len(corpus)}"
        )
    key = (corpus.fingerprint, attribute, backend.model_id)
    with _RANGE_LOCK:
        cached = _RANGE_CACHE.get(key)
    if cached is not None:
        return cached
    distances = corpus.distances_to(backend.embed_text(attribute))
    result = AttributeRange(
        attribute=attribute, d_min=float(distances.min()), d_max=float(distances.max())
    )
    if result.width == 0.0:
        raise ZeroRangeError(
            f"zero normalization range for {attribute!r}: every corpus item is "
            f"equidistant from it (degenerate backend?)"
        )
    with _RANGE_LOCK:
        _RANGE_CACHE[key] = result
    return result


def delta_command(image, image_edited, command: str, backend: EmbeddingBackend) -> float:
    """Distance drop toward the command; positive means the edit worked."""
    before = backend.embed_image(np.asarray(image))
    after = backend.embed_image(np.asarray(image_edited))
    text = backend.embed_text(command)
    return clip_distance(before, text) - clip_distance(after, text)


def delta_entangled(image, image_edited, attribute: str, backend: EmbeddingBackend) -> float:
    """Distance drop toward an entangled attribute; should stay near zero."""
    return delta_command(image, image_edited, attribute, backend)


def normalize_delta(delta: float, value_range: AttributeRange) -> float:
    """Scale a raw delta by the attribute's corpus-wide distance range."""
    if value_range.width == 0.0:
        raise ZeroRangeError(f"zero normalization range for {value_range.attribute!r}")
    return delta / value_range.width


def indicator(delta_c_norm: float, delta_e_norms: Sequence[float]) -> float:
    """Mean absolute normalized entanglement delta over the command delta."""
    if not len(delta_e_norms):
        raise EvaluationError("need at least one entangled delta")
    if delta_c_norm <= 0:
        raise InvalidIndicatorError(
            f"command delta {delta_c_norm} is not positive: {INVALID_REASON_NO_EFFECT}"
        )
    return float(np.mean(np.abs(np.asarray(delta_e_norms, dtype=np.float64)))) / delta_c_norm


@dataclass(frozen=True)
class EntangledDelta:
    attribute: str
    raw: float
    normalized: float


@dataclass(frozen=True)
class EvaluationReport:
    """One command's evaluation, shaped like a published comparison row."""

    command: str
    delta_c_raw: float
    delta_c_norm: float
    entangled: tuple[EntangledDelta, ...]
    indicator: float | None
    valid: bool
    invalid_reason: str | None
    item_count: int
    strength: float
    config_hash: str
    tool_version: str

    def to_json_dict(self) -> dict:
        return {
            "command": self.command,
            "delta_c_raw": self.delta_c_raw,
            "delta_c_norm": self.delta_c_norm,
            "entangled": [
                {"attribute": e.attribute, "raw": e.raw, "normalized": e.normalized}
                for e in self.entangled
            ],
            "indicator": self.indicator,
            "valid": self.valid,
            "invalid_reason": self.invalid_reason,
            "item_count": self.item_count,
            "strength": self.strength,
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "EvaluationReport":
        return cls(
            command=data["command"],
            delta_c_raw=data["delta_c_raw"],
            delta_c_norm=data["delta_c_norm"],
            entangled=tuple(
                EntangledDelta(e["attribute"], e["raw"], e["normalized"])
                for e in data["entangled"]
            ),
            indicator=data["indicator"],
            valid=data["valid"],
            invalid_reason=data.get("invalid_reason"),
            item_count=data["item_count"],
            strength=data.get("strength", 1.0),
            config_hash=data.get("config_hash", ""),
            tool_version=data.get("tool_version", ""),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"
        )

    @classmethod
    def load(cls, path: str | Path) -> "EvaluationReport":
        return cls.from_json_dict(json.loads(Path(path).read_text()))

    def save_csv(self, path: str | Path) -> None:
        """Reference-table layout: indicator, command delta, one attribute per row."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "attribute", "value"])
            writer.writerow(["indicator", "", "" if self.indicator is None else repr(self.indicator)])
            writer.writerow(["delta_c_norm", "", repr(self.delta_c_norm)])
            for e in self.entangled:
                writer.writerow(["delta_e_norm", e.attribute, repr(e.normalized)])


def evaluate_run(
    test_latents: np.ndarray,
    generator: GeneratorBackend,
    mapper: nn.Module,
    command: str,
    prediction: EntanglementPrediction,
    backend: EmbeddingBackend,
    corpus: EmbeddedCorpus,
    strength: float = 1.0,
    config_hash: str = "",
    tool_version: str = "",
) -> EvaluationReport:
    """Score one trained mapper over a set of test latents.

    Raw deltas are averaged over the test set first; normalization then uses
    each attribute's corpus-wide range once, so the report matches what a
    per-attribute table would print.
    """
    test_latents = np.asarray(test_latents, dtype=np.float64)
    if test_latents.ndim != 2 or test_latents.shape[0] < 1:
        raise EvaluationError(f"test latents must be (count, dim), got {test_latents.shape}")
    latents = torch.as_tensor(test_latents)
    with torch.no_grad():
        originals = generator.generate(latents)
        edited = generator.generate(latents + strength * mapper(latents))
        original_emb = backend.embed_image_tensor(originals).numpy()
        edited_emb = backend.embed_image_tensor(edited).numpy()

    texts = [command, *prediction.entangled]
    text_matrix = np.stack([backend.embed_text(t).values for t in texts])
    d_before = (1.0 - original_emb @ text_matrix.T).mean(axis=0)
    d_after = (1.0 - edited_emb @ text_matrix.T).mean(axis=0)
    deltas = d_before - d_after

    ranges = [attribute_range(corpus, t, backend) for t in texts]
    normalized = [normalize_delta(float(d), r) for d, r in zip(deltas, ranges)]

    delta_c_raw, delta_c_norm = float(deltas[0]), normalized[0]
    entangled_rows = tuple(
        EntangledDelta(attribute=t, raw=float(d), normalized=n)
        for t, d, n in zip(texts[1:], deltas[1:], normalized[1:])
    )
    try:
        value = indicator(delta_c_norm, [e.normalized for e in entangled_rows])
        valid, reason = True, None
    except InvalidIndicatorError:
        value, valid, reason = None, False, INVALID_REASON_NO_EFFECT
    return EvaluationReport(
        command=command,
        delta_c_raw=delta_c_raw,
        delta_c_norm=delta_c_norm,
        entangled=entangled_rows,
        indicator=value,
        valid=valid,
        invalid_reason=reason,
        item_count=test_latents.shape[0],
        strength=strength,
        config_hash=config_hash,
        tool_version=tool_version,
    )
