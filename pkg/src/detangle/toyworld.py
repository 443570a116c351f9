"""Planted-entanglement worlds for desk-scale runs.

Two constructions back the test and demo surfaces:

* a sampled corpus world: attribute directions plus a co-occurrence
  structure, so the predictor's recall can be checked against ground truth;
* a trainable stack: a toy linear generator and embedder whose command
  direction is geometrically correlated with the planted entangled
  directions, so a plain text-driven mapper drags them along while an
  entanglement-penalized one can steer around them.

The pipeline world combines both over one embedding space, which is what
``detangle make-toy-world`` writes out for the end-to-end demo.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import EmbeddedCorpus, SyntheticWorldSpec, generate_synthetic_corpus
from .embedding import LinearSyntheticBackend
from .generator import ToyLinearGenerator
from .hierarchy import Attribute, AttributeHierarchy, hierarchy_from_json_dict
from .losses import LinearIdentityBackend

COMMAND_TEXT = "grey hair"
SIBLING_TEXTS = ("black hair", "blond hair", "brown hair", "red hair")


def _paired_categories(texts: list[str], prefix: str) -> list[dict]:
    """Group attribute texts into two-member categories."""
    cats = []
    for i in range(0, len(texts), 2):
        pair = texts[i : i + 2]
        if len(pair) == 1:  # odd leftover joins the previous category
            cats[-1]["attributes"].append(pair[0])
        else:
            cats.append({"name": f"{prefix} {i // 2}", "attributes": pair})
    return cats


def build_world_hierarchy(
    planted: list[str], distractors: list[str], version: str = "toy_world_v1"
) -> AttributeHierarchy:
    categories = [{"name": "hair color", "attributes": [COMMAND_TEXT, *SIBLING_TEXTS]}]
    categories += _paired_categories(planted, "planted")
    categories += _paired_categories(distractors, "filler")
    return hierarchy_from_json_dict({"version": version, "categories": categories})


@dataclass
class CorpusWorld:
    """A sampled corpus with known attribute assignments."""

    spec: SyntheticWorldSpec
    corpus: EmbeddedCorpus
    truth: dict[str, frozenset[str]]
    hierarchy: AttributeHierarchy
    command: Attribute
    planted: tuple[str, ...]
    distractors: tuple[str, ...]

    def backend(self) -> LinearSyntheticBackend:
        return self.spec.backend()


def build_corpus_world(
    seed: int = 0,
    count: int = 2000,
    dim: int = 128,
    n_planted: int = 10,
    n_distractors: int = 30,
    planted_correlation: float = 0.9,
    noise_scale: float = 0.05,
    directions: dict[str, np.ndarray] | None = None,
) -> CorpusWorld:
    """Sample a corpus where ``n_planted`` attributes co-occur with the command.

    Planted co-occurrence follows a one-factor design: every planted
    attribute correlates with the command at ``planted_correlation`` and
    with its peers at the squared value, which keeps the correlation matrix
    valid. Categories are exclusive groups (one hair color per face, one
    member per pair category), so every item carries the same number of
    attributes and cosine ranking reflects presence, not attribute count.
    Each planted attribute is paired with an independent distractor; the
    remaining distractor pairs get a smooth spread of base rates, whose
    common end is exactly the kind of everywhere-frequent attribute the
    full-corpus rank discount is there to suppress.
    """
    if n_distractors < n_planted:
        raise ValueError("need at least one distractor per planted attribute")
    planted = [f"trait {i:02d}" for i in range(n_planted)]
    distractors = [f"filler {i:02d}" for i in range(n_distractors)]
    texts = [COMMAND_TEXT, *SIBLING_TEXTS, *planted, *distractors]

    base_rates: dict[str, float] = {}
    free = distractors[n_planted:]
    spread = np.linspace(0.85, 0.15, max(len(free) // 2, 1))
    for k in range(0, len(free) - 1, 2):
        rate = float(spread[k // 2])
        base_rates[free[k]] = rate
        base_rates[free[k + 1]] = 1.0 - rate

    co_occurrence: dict[tuple[str, str], float] = {}
    for text in planted:
        co_occurrence[(COMMAND_TEXT, text)] = planted_correlation
    for i, a in enumerate(planted):
        for b in planted[i + 1 :]:
            co_occurrence[(a, b)] = planted_correlation**2

    # One hair color per item; each planted trait competes against its own
    # independent partner so the group winner tracks the planted latent.
    groups: list[tuple[str, ...]] = [(COMMAND_TEXT, *SIBLING_TEXTS)]
    groups += [(planted[i], distractors[i]) for i in range(n_planted)]
    groups += [tuple(free[i : i + 2]) for i in range(0, len(free) - 1, 2)]

    if directions is None:
        spec = SyntheticWorldSpec.with_random_directions(
            texts,
            dim=dim,
            seed=seed,
            orthonormal=True,
            co_occurrence=co_occurrence,
            base_rates=base_rates,
            noise_scale=noise_scale,
            exclusive_groups=groups,
        )
    else:
        spec = SyntheticWorldSpec(
            dim=dim,
            attribute_directions={t: directions[t] for t in texts},
            co_occurrence=co_occurrence,
            seed=seed,
            base_rates=base_rates,
            noise_scale=noise_scale,
            exclusive_groups=groups,
        )
    corpus, truth = generate_synthetic_corpus(spec, count)
    hierarchy = build_world_hierarchy(planted, distractors)
    return CorpusWorld(
        spec=spec,
        corpus=corpus,
        truth=truth,
        hierarchy=hierarchy,
        command=hierarchy.attribute(COMMAND_TEXT),
        planted=tuple(planted),
        distractors=tuple(distractors),
    )


@dataclass
class TrainingStack:
    """Toy differentiable stack with a planted command->entangled correlation."""

    generator: ToyLinearGenerator
    backend: LinearSyntheticBackend
    identity_backend: LinearIdentityBackend
    command_text: str
    entangled: tuple[str, ...]
    train_latents: np.ndarray
    test_latents: np.ndarray
    corpus: EmbeddedCorpus  # reference corpus for range normalization


def _reachable_unit(
    matrix: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """A unit vector inside the column space of ``matrix``."""
    vec = matrix @ rng.standard_normal(matrix.shape[1])
    return vec / np.linalg.norm(vec)


def _orthogonalize(vec: np.ndarray, against: np.ndarray) -> np.ndarray:
    vec = vec - (vec @ against) * against
    return vec / np.linalg.norm(vec)


def build_training_stack(
    seed: int = 0,
    latent_dim: int = 32,
    image_dim: int = 64,
    embed_dim: int = 64,
    n_entangled: int = 4,
    entangle_cos: float = 0.7,
    n_train: int = 256,
    n_test: int = 64,
    n_reference: int = 512,
    directions: dict[str, np.ndarray] | None = None,
) -> TrainingStack:
    """Build the toy generator/embedder pair with planted entanglement.

    Every planted entangled direction keeps cosine ``entangle_cos`` with the
    command direction, and both live inside the embedder's reachable
    subspace, so the entanglement is real but avoidable. Pass ``directions``
    to reuse the geometry of an existing world.
    """
    rng = np.random.default_rng(seed)
    generator = ToyLinearGenerator(latent_dim=latent_dim, output_dim=image_dim, seed=seed + 1)
    embed_matrix = rng.standard_normal((embed_dim, image_dim)) / np.sqrt(image_dim)
    reach = embed_matrix @ generator.matrix  # embed_dim x latent_dim

    if directions is None:
        directions = plant_directions(
            reach, rng, n_entangled=n_entangled, entangle_cos=entangle_cos
        )
    entangled = tuple(t for t in directions if t not in (COMMAND_TEXT, *SIBLING_TEXTS))

    backend = LinearSyntheticBackend(
        dim=embed_dim,
        directions=directions,
        image_matrix=embed_matrix,
        seed=seed,
    )
    identity_backend = LinearIdentityBackend(image_dim=image_dim, seed=seed + 2)

    train_latents = rng.standard_normal((n_train, latent_dim))
    test_latents = rng.standard_normal((n_test, latent_dim))
    reference_latents = rng.standard_normal((n_reference, latent_dim))
    reference_images = reference_latents @ generator.matrix.T
    reference_embeddings = reference_images @ embed_matrix.T
    reference_embeddings /= np.linalg.norm(reference_embeddings, axis=1, keepdims=True)
    corpus = EmbeddedCorpus(
        item_ids=[f"ref-{i:04d}" for i in range(n_reference)],
        embeddings=reference_embeddings,
        model_id=backend.model_id,
        provenance=[f"toy:seed={seed}"] * n_reference,
    )
    return TrainingStack(
        generator=generator,
        backend=backend,
        identity_backend=identity_backend,
        command_text=COMMAND_TEXT,
        entangled=entangled,
        train_latents=train_latents,
        test_latents=test_latents,
        corpus=corpus,
    )


def plant_directions(
    reach: np.ndarray,
    rng: np.random.Generator,
    n_entangled: int,
    entangle_cos: float,
    entangled_names: list[str] | None = None,
) -> dict[str, np.ndarray]:
    """Command, sibling, and correlated entangled directions, all reachable."""
    if not 0.0 < entangle_cos < 1.0:
        raise ValueError("entangle_cos must lie strictly between 0 and 1")
    command_dir = _reachable_unit(reach, rng)
    directions = {COMMAND_TEXT: command_dir}
    for sibling in SIBLING_TEXTS:
        directions[sibling] = _orthogonalize(_reachable_unit(reach, rng), command_dir)
    names = entangled_names or [f"trait {i:02d}" for i in range(n_entangled)]
    sin_part = np.sqrt(1.0 - entangle_cos**2)
    for name in names:
        ortho = _orthogonalize(_reachable_unit(reach, rng), command_dir)
        directions[name] = entangle_cos * command_dir + sin_part * ortho
    return directions
