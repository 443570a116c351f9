"""Entanglement prediction: which attributes ride along with an edit command.

Pipeline over an embedded corpus and the attribute vocabulary:

1. rank every image by cosine distance to the command text (closest first);
2. keep, in ranked order, the images a zero-shot classifier assigns to the
   command among its category's labels, up to a size cap;
3. score every attribute outside the command's category by its summed
   distance to the kept images and to the full corpus, convert both sums to
   1-indexed ranks (rank 1 = smallest sum = most co-occurring), and combine
   them as ``r_comd / min(r_full, R)``.

The cap ``R`` discounts attributes that are common everywhere: such an
attribute earns a small full-corpus rank, hence a small denominator and a
large final score, pushing it out of the prediction. The attributes with
the *smallest* final scores are the predicted entanglements.

All steps are pure given a corpus; ranking ties break by item id, scoring
ties by attribute text, so predictions are deterministic end to end.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import EmbeddedCorpus
from .embedding import EmbeddingBackend
from .hierarchy import Attribute, AttributeHierarchy, labels_for_command, resolve_command

DEFAULT_N_ENTANGLED = 10
DEFAULT_RANK_CAP = 40
DEFAULT_TOP_IMAGES = 100
DEFAULT_MIN_IMAGES = 5


class PredictionError(RuntimeError):
    """The prediction pipeline cannot proceed on the given inputs."""


class NoRelevantImagesError(PredictionError):
    """The zero-shot filter rejected (almost) every ranked image."""


@dataclass(frozen=True)
class PredictorConfig:
    n_entangled: int = DEFAULT_N_ENTANGLED
    rank_cap: int = DEFAULT_RANK_CAP
    top_images: int = DEFAULT_TOP_IMAGES
    min_images: int = DEFAULT_MIN_IMAGES

    def __post_init__(self) -> None:
        if self.n_entangled < 1:
            raise ValueError("n_entangled must be at least 1")
        if self.rank_cap < 1:
            raise ValueError("rank cap R must be at least 1")
        if self.top_images < 1:
            raise ValueError("top_images must be at least 1")
        if self.min_images < 1:
            raise ValueError("min_images must be at least 1")


@dataclass(frozen=True)
class ImageRanking:
    """Corpus items ordered by ascending distance to the command."""

    command_text: str
    item_ids: tuple[str, ...]
    scores: tuple[float, ...]

    def __post_init__(self) -> None:
        if any(b < a for a, b in zip(self.scores, self.scores[1:])):
            raise ValueError("ranking scores must be non-decreasing")


@dataclass(frozen=True)
class RelevantImageSet:
    """Ranked images the zero-shot filter kept for the command."""

    command_text: str
    item_ids: tuple[str, ...]
    filter_labels: tuple[str, ...]
    predicted_labels: dict[str, str]

    def __post_init__(self) -> None:
        for item_id in self.item_ids:
            if self.predicted_labels.get(item_id) != self.command_text:
                raise ValueError(
                    f"retained item {item_id!r} is not classified as the command"
                )


@dataclass(frozen=True)
class AttributeScore:
    attribute: str
    sum_comd: float
    sum_full: float
    r_comd: int
    r_full: int
    score_final: float


@dataclass(frozen=True)
class AttributeScores:
    """Per-attribute score table, ordered by ascending final score."""

    command_text: str
    excluded_category: str | None
    rank_cap: int
    rows: tuple[AttributeScore, ...]
    _by_attr: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_by_attr", {r.attribute: r for r in self.rows})

    def row(self, attribute: str) -> AttributeScore:
        return self._by_attr[attribute]

    def attributes(self) -> tuple[str, ...]:
        return tuple(r.attribute for r in self.rows)


@dataclass(frozen=True)
class EntanglementPrediction:
    """Top-N predicted entangled attributes plus the full score table."""

    command_text: str
    entangled: tuple[str, ...]
    scores: AttributeScores
    excluded_category: str | None
    relevant_item_ids: tuple[str, ...]
    config: PredictorConfig

    def to_json_dict(self) -> dict:
        return {
            "command": self.command_text,
            "config": {
                "n_entangled": self.config.n_entangled,
                "rank_cap": self.config.rank_cap,
                "top_images": self.config.top_images,
                "min_images": self.config.min_images,
            },
            "excluded_category": self.excluded_category,
            "entangled": [
                {
                    "attribute": r.attribute,
                    "sum_comd": r.sum_comd,
                    "sum_full": r.sum_full,
                    "r_comd": r.r_comd,
                    "r_full": r.r_full,
                    "score_final": r.score_final,
                }
                for r in self.scores.rows
            ],
            "relevant_item_ids": list(self.relevant_item_ids),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "EntanglementPrediction":
        config = PredictorConfig(**data["config"])
        rows = tuple(
            AttributeScore(
                attribute=e["attribute"],
                sum_comd=e["sum_comd"],
                sum_full=e["sum_full"],
                r_comd=e["r_comd"],
                r_full=e["r_full"],
                score_final=e["score_final"],
            )
            for e in data["entangled"]
        )
        scores = AttributeScores(
            command_text=data["command"],
            excluded_category=data.get("excluded_category"),
            rank_cap=config.rank_cap,
            rows=rows,
        )
        return cls(
            command_text=data["command"],
            entangled=tuple(r.attribute for r in rows[: config.n_entangled]),
            scores=scores,
            excluded_category=data.get("excluded_category"),
            relevant_item_ids=tuple(data.get("relevant_item_ids", [])),
            config=config,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"
        )

    @classmethod
    def load(cls, path: str | Path) -> "EntanglementPrediction":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def rank_images(
    corpus: EmbeddedCorpus, command: Attribute | str, backend: EmbeddingBackend
) -> ImageRanking:
    """Order corpus items by ascending distance to the command text."""
    if len(corpus) == 0:
        raise PredictionError("cannot rank an empty corpus")
    text = command.text if isinstance(command, Attribute) else command
    distances = corpus.distances_to(backend.embed_text(text))
    ids = np.asarray(corpus.item_ids)
    order = np.lexsort((ids, distances))  # distance first, item id breaks ties
    return ImageRanking(
        command_text=text,
        item_ids=tuple(ids[order]),
        scores=tuple(float(d) for d in distances[order]),
    )


def _classify(
    embedding: np.ndarray, label_vectors: np.ndarray, labels: Sequence[str]
) -> str:
    distances = 1.0 - label_vectors @ embedding
    return labels[int(np.argmin(distances))]  # argmin keeps first label on ties


def aggregate_relevant(
    ranking: ImageRanking,
    corpus: EmbeddedCorpus,
    hierarchy: AttributeHierarchy,
    command: Attribute | str,
    backend: EmbeddingBackend,
    top_images: int = DEFAULT_TOP_IMAGES,
    min_images: int = DEFAULT_MIN_IMAGES,
) -> RelevantImageSet:
    """Keep the best-ranked images the zero-shot filter agrees are on-command.

    Images are classified over the command category's labels (the binary
    pair for binary commands); an image survives only when its predicted
    label is the command itself. The first ``top_images`` survivors, in
    ranked order, form the relevant set.
    """
    command = resolve_command(hierarchy, command) if isinstance(command, str) else command
    labels = labels_for_command(hierarchy, command)
    label_vectors = np.stack([backend.embed_text(t).values for t in labels])
    index = {item_id: i for i, item_id in enumerate(corpus.item_ids)}

    kept: list[str] = []
    predicted: dict[str, str] = {}
    for item_id in ranking.item_ids:
        label = _classify(corpus.embeddings[index[item_id]], label_vectors, labels)
        if label == command.text:
            kept.append(item_id)
            predicted[item_id] = label
            if len(kept) >= top_images:
                break
    if len(kept) < min_images:
        raise NoRelevantImagesError(
            f"only {len(kept)} of {len(ranking.item_ids)} ranked images were "
            f"classified as {command.text!r} (minimum {min_images}); inspect "
            f"the label set {list(labels)} for a mismatched category"
        )
    return RelevantImageSet(
        command_text=command.text,
        item_ids=tuple(kept),
        filter_labels=labels,
        predicted_labels=predicted,
    )


def _rank_ascending(sums: dict[str, float]) -> dict[str, int]:
    """1-indexed ranks by ascending sum; ties break by attribute text."""
    ordered = sorted(sums, key=lambda t: (sums[t], t))
    return {text: i + 1 for i, text in enumerate(ordered)}


def combine_ranks(r_comd: int, r_full: int, rank_cap: int) -> float:
    """Final score ``r_comd / min(r_full, R)``; smaller = more entangled."""
    return r_comd / min(r_full, rank_cap)


# Full-corpus distance sums depend only on (corpus, attribute set, model);
# they are shared across commands, so memoize them per fingerprint.
_FULL_SUMS_CACHE: dict[tuple[str, str, str], dict[str, float]] = {}
_FULL_SUMS_LOCK = threading.Lock()


def _distance_sums(
    embeddings: np.ndarray, attribute_vectors: np.ndarray, texts: Sequence[str]
) -> dict[str, float]:
    sums = (1.0 - embeddings @ attribute_vectors.T).sum(axis=0)
    return {t: float(s) for t, s in zip(texts, sums)}


def _full_corpus_sums(
    corpus: EmbeddedCorpus,
    hierarchy: AttributeHierarchy,
    backend: EmbeddingBackend,
) -> dict[str, float]:
    key = (corpus.fingerprint, hierarchy.fingerprint, backend.model_id)
    with _FULL_SUMS_LOCK:
        cached = _FULL_SUMS_CACHE.get(key)
    if cached is not None:
        return cached
    texts = hierarchy.all_texts()
    vectors = np.stack([backend.embed_text(t).values for t in texts])
    sums = _distance_sums(corpus.embeddings, vectors, texts)
    with _FULL_SUMS_LOCK:
        _FULL_SUMS_CACHE[key] = sums
    return sums


def _excluded_texts(
    hierarchy: AttributeHierarchy, command: Attribute
) -> tuple[set[str], str | None]:
    """The command, its negation, and its whole category are never candidates."""
    excluded = {command.text}
    if command.negation_text:
        excluded.add(command.negation_text)
    category = hierarchy.category_by_id(command.category_id)
    if category is None:
        return excluded, None
    excluded.update(category.texts)
    return excluded, category.name


def score_attributes(
    relevant: RelevantImageSet,
    corpus: EmbeddedCorpus,
    hierarchy: AttributeHierarchy,
    command: Attribute | str,
    backend: EmbeddingBackend,
    rank_cap: int = DEFAULT_RANK_CAP,
) -> AttributeScores:
    """Rank-adjusted co-occurrence scores for every out-of-category attribute."""
    if rank_cap < 1:
        raise ValueError("rank cap R must be at least 1")
    if not relevant.item_ids:
        raise PredictionError("relevant image set is empty")
    command = resolve_command(hierarchy, command) if isinstance(command, str) else command
    excluded, excluded_category = _excluded_texts(hierarchy, command)
    texts = [t for t in hierarchy.all_texts() if t not in excluded]
    if not texts:
        raise PredictionError("no attributes left to score outside the command category")

    index = {item_id: i for i, item_id in enumerate(corpus.item_ids)}
    rows_subset = corpus.embeddings[[index[i] for i in relevant.item_ids]]
    vectors = np.stack([backend.embed_text(t).values for t in texts])
    sums_comd = _distance_sums(rows_subset, vectors, texts)
    sums_full_all = _full_corpus_sums(corpus, hierarchy, backend)
    sums_full = {t: sums_full_all[t] for t in texts}

    r_comd = _rank_ascending(sums_comd)
    r_full = _rank_ascending(sums_full)
    rows = [
        AttributeScore(
            attribute=t,
            sum_comd=sums_comd[t],
            sum_full=sums_full[t],
            r_comd=r_comd[t],
            r_full=r_full[t],
            score_final=combine_ranks(r_comd[t], r_full[t], rank_cap),
        )
        for t in texts
    ]
    rows.sort(key=lambda r: (r.score_final, r.attribute))
    return AttributeScores(
        command_text=command.text,
        excluded_category=excluded_category,
        rank_cap=rank_cap,
        rows=tuple(rows),
    )


def predict_entangled(
    command: Attribute | str,
    corpus: EmbeddedCorpus,
    hierarchy: AttributeHierarchy,
    backend: EmbeddingBackend,
    config: PredictorConfig | None = None,
) -> EntanglementPrediction:
    """Full Predict pipeline: rank, filter, score, take the top N."""
    config = config or PredictorConfig()
    command = resolve_command(hierarchy, command) if isinstance(command, str) else command
    ranking = rank_images(corpus, command, backend)
    relevant = aggregate_relevant(
        ranking,
        corpus,
        hierarchy,
        command,
        backend,
        top_images=config.top_images,
        min_images=config.min_images,
    )
    scores = score_attributes(
        relevant, corpus, hierarchy, command, backend, rank_cap=config.rank_cap
    )
    entangled = scores.attributes()[: config.n_entangled]  # clamps when N > available
    return EntanglementPrediction(
        command_text=command.text,
        entangled=entangled,
        scores=scores,
        excluded_category=scores.excluded_category,
        relevant_item_ids=relevant.item_ids,
        config=config,
    )


@dataclass(frozen=True)
class MultiPrediction:
    """Per-command predictions plus their deduplicated union."""

    predictions: dict[str, EntanglementPrediction]
    union: tuple[str, ...]


def predict_multi(
    commands: Iterable[Attribute | str],
    corpus: EmbeddedCorpus,
    hierarchy: AttributeHierarchy,
    backend: EmbeddingBackend,
    config: PredictorConfig | None = None,
) -> MultiPrediction:
    """Treat several commands as independent predictions and group the result.

    The union drops duplicates and anything belonging to any command's
    category, ordered by each attribute's best final score across commands
    (ties by text) so downstream loss construction is deterministic.
    """
    commands = [
        resolve_command(hierarchy, c) if isinstance(c, str) else c for c in commands
    ]
    if not commands:
        raise PredictionError("need at least one command")
    predictions: dict[str, EntanglementPrediction] = {}
    for command in commands:
        predictions[command.text] = predict_entangled(
            command, corpus, hierarchy, backend, config=config
        )
    all_excluded: set[str] = set()
    for command in commands:
        excluded, _ = _excluded_texts(hierarchy, command)
        all_excluded.update(excluded)
    best_score: dict[str, float] = {}
    for prediction in predictions.values():
        for text in prediction.entangled:
            if text in all_excluded:
                continue
            score = prediction.scores.row(text).score_final
            if text not in best_score or score < best_score[text]:
                best_score[text] = score
    union = tuple(sorted(best_score, key=lambda t: (best_score[t], t)))
    return MultiPrediction(predictions=predictions, union=union)
