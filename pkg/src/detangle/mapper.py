"""Latent mapper training and strength-scaled inference.

A mapper turns a latent code into a latent offset; decoding
``w + strength * M(w)`` through the frozen generator realizes the edit.
Training minimizes the composite loss from :mod:`detangle.losses` with Adam
over mini-batches of latents, logging every loss component per step.
Strength is an inference-time dial only and is never trained.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .embedding import BackendError, EmbeddingBackend
from .generator import GeneratorBackend
from .losses import (
    IdentityBackend,
    LossConfig,
    combine_losses,
    cosine_distances,
    entanglement_gap,
)
from .predictor import EntanglementPrediction

log = logging.getLogger(__name__)

DEFAULT_BATCH_SIZE = 32
DEFAULT_LEARNING_RATE = 0.5
#: Fraction of training after which the learning rate is halved.
LR_HALVING_POINT = 0.75


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the offending step index."""

    def __init__(self, step: int, message: str | None = None):
        super().__init__(message or f"training loss became non-finite at step {step}")
        self.step = step


class MapperArchitectureError(ValueError):
    """Checkpoint or constructor asked for an unknown mapper architecture."""


class MLPMapper(nn.Module):
    """Fully-connected latent-to-offset network.

    The final layer starts at zero so the mapper begins as the identity
    edit (no offset), which keeps early training stable.
    """

    def __init__(self, latent_dim: int, hidden: tuple[int, ...] = (64, 64)):
        super().__init__()
        self.latent_dim = int(latent_dim)
        self.hidden = tuple(int(h) for h in hidden)
        layers: list[nn.Module] = []
        width = self.latent_dim
        for h in self.hidden:
            layers.append(nn.Linear(width, h, dtype=torch.float64))
            layers.append(nn.LeakyReLU(0.2))
            width = h
        final = nn.Linear(width, self.latent_dim, dtype=torch.float64)
        nn.init.zeros_(final.weight)
        nn.init.zeros_(final.bias)
        layers.append(final)
        self.net = nn.Sequential(*layers)

    def forward(self, latents: torch.Tensor) -> torch.Tensor:
        return self.net(latents)

    def descriptor(self) -> dict:
        return {"kind": "mlp", "latent_dim": self.latent_dim, "hidden": list(self.hidden)}


class LinearCombinationMapper(nn.Module):
    """Offset as a learned combination of fixed latent directions.

    With two directions this is the two-parameter mapper used for finite
    difference gradient checks.
    """

    def __init__(self, directions: np.ndarray):
        super().__init__()
        directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
        self.latent_dim = directions.shape[1]
        self.register_buffer("directions", torch.as_tensor(directions))
        self.weights = nn.Parameter(torch.zeros(directions.shape[0], dtype=torch.float64))

    def forward(self, latents: torch.Tensor) -> torch.Tensor:
        offset = self.weights @ self.directions.to(latents.dtype)
        return offset.expand(latents.shape[0], -1)

    def descriptor(self) -> dict:
        return {
            "kind": "linear_combination",
            "latent_dim": self.latent_dim,
            "n_directions": int(self.directions.shape[0]),
        }


def build_mapper(latent_dim: int, hidden: tuple[int, ...] = (64, 64), seed: int = 0) -> MLPMapper:
    """Deterministically initialized MLP mapper."""
    torch.manual_seed(seed)
    return MLPMapper(latent_dim, hidden)


@dataclass(frozen=True)
class TraceStep:
    step: int
    l_c: float
    l_2: float
    l_id: float
    l_e: float
    total: float


@dataclass
class TrainingTrace:
    """Per-step loss components; total always equals the weighted sum."""

    seed: int
    config: LossConfig
    steps: list[TraceStep] = field(default_factory=list)

    @property
    def step_count(self) -> int:
        return len(self.steps)

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "lambda_l2": self.config.lambda_l2,
            "lambda_id": self.config.lambda_id,
            "lambda_e": self.config.lambda_e,
            "steps": [
                {
                    "step": s.step,
                    "l_c": s.l_c,
                    "l_2": s.l_2,
                    "l_id": s.l_id,
                    "l_e": s.l_e,
                    "total": s.total,
                }
                for s in self.steps
            ],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n")


def manipulate(
    generator: GeneratorBackend,
    mapper: nn.Module,
    latents: np.ndarray | torch.Tensor,
    strength: float = 1.0,
) -> np.ndarray:
    """Decode ``w + strength * M(w)``; strength 0 reproduces G(w) exactly."""
    single = False
    array = np.asarray(latents, dtype=np.float64) if not isinstance(latents, torch.Tensor) else None
    if array is not None:
        if array.ndim == 1:
            single = True
            array = array[None, :]
        tensor = torch.as_tensor(array)
    else:
        tensor = latents.to(torch.float64)
        if tensor.ndim == 1:
            single = True
            tensor = tensor.unsqueeze(0)
    if tensor.shape[1] != generator.latent_dim:
        raise ValueError(
            f"latent dim {tensor.shape[1]} does not match generator dim {generator.latent_dim}"
        )
    with torch.no_grad():
        images = generator.generate(tensor + strength * mapper(tensor))
    result = images.numpy()
    return result[0] if single else result


def _entangled_from_prediction(
    command_text: str, prediction: EntanglementPrediction | None, config: LossConfig
) -> tuple[str, ...]:
    if config.lambda_e == 0:
        return ()
    if prediction is None:
        raise ValueError(
            "lambda_e > 0 needs an entanglement prediction; pass one or use "
            "the baseline config"
        )
    if prediction.command_text != command_text:
        raise ValueError(
            f"prediction was made for {prediction.command_text!r}, not {command_text!r}"
        )
    if not prediction.entangled:
        raise ValueError(
            "prediction holds no entangled attributes; train without the "
            "entanglement term instead"
        )
    return tuple(prediction.entangled)


def train_mapper(
    generator: GeneratorBackend,
    backend: EmbeddingBackend,
    command: str,
    prediction: EntanglementPrediction | None,
    latents: np.ndarray,
    config: LossConfig,
    steps: int,
    seed: int,
    batch_size: int = DEFAULT_BATCH_SIZE,
    learning_rate: float = DEFAULT_LEARNING_RATE,
    hidden: tuple[int, ...] = (64, 64),
    identity_backend: IdentityBackend | None = None,
) -> tuple[MLPMapper, TrainingTrace]:
    """Train a latent mapper for one command.

    With ``lambda_e = 0`` this is the plain text-driven baseline; with a
    prediction and ``lambda_e > 0`` the entanglement term keeps the edit
    away from the predicted co-occurring attributes. Deterministic per seed
    on the synthetic stack.
    """
    if not generator.differentiable:
        raise BackendError("generator does not declare differentiability; cannot train")
    if not backend.differentiable:
        raise BackendError("embedding backend does not declare differentiability; cannot train")
    if steps < 1:
        raise ValueError("steps must be at least 1")
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or latents.shape[1] != generator.latent_dim:
        raise ValueError(
            f"latent corpus must be (count, {generator.latent_dim}), got {latents.shape}"
        )
    entangled = _entangled_from_prediction(command, prediction, config)
    if identity_backend is None and config.lambda_id > 0:
        log.info(
            "no identity backend bound; treating lambda_id=%.3g as 0 for this run",
            config.lambda_id,
        )

    mapper = build_mapper(generator.latent_dim, hidden=hidden, seed=seed)
    optimizer = torch.optim.Adam(mapper.parameters(), lr=learning_rate)
    halve_at = int(LR_HALVING_POINT * steps)
    shuffler = np.random.default_rng(seed)

    command_vec = backend.text_tensor(command)
    entangled_mat = (
        torch.stack([backend.text_tensor(t) for t in entangled]) if entangled else None
    )

    all_latents = torch.as_tensor(latents)
    trace = TrainingTrace(seed=seed, config=config)
    for step in range(steps):
        batch_idx = shuffler.choice(latents.shape[0], size=min(batch_size, latents.shape[0]), replace=False)
        batch = all_latents[batch_idx]

        with torch.no_grad():
            originals = generator.generate(batch)
            original_emb = backend.embed_image_tensor(originals)
        offsets = mapper(batch)
        edited = generator.generate(batch + offsets)
        edited_emb = backend.embed_image_tensor(edited)

        l_c = (1.0 - edited_emb @ command_vec).mean()
        l_2 = (offsets * offsets).sum(dim=-1).mean()
        if identity_backend is not None:
            id_before = identity_backend.embed(originals)
            id_after = identity_backend.embed(edited)
            l_id = (1.0 - (id_before * id_after).sum(dim=-1)).mean()
        else:
            l_id = torch.zeros((), dtype=torch.float64)
        if entangled_mat is not None:
            d_before = cosine_distances(original_emb, entangled_mat)
            d_after = cosine_distances(edited_emb, entangled_mat)
            l_e = entanglement_gap(d_before, d_after)
        else:
            l_e = torch.zeros((), dtype=torch.float64)
        total = combine_losses(l_c, l_2, l_id, l_e, config)

        if not torch.isfinite(total):
            raise TrainingDivergedError(step)

        optimizer.zero_grad()
        total.backward()
        optimizer.step()
        if halve_at and step + 1 == halve_at:
            for group in optimizer.param_groups:
                group["lr"] *= 0.5

        trace.steps.append(
            TraceStep(
                step=step,
                l_c=float(l_c),
                l_2=float(l_2),
                l_id=float(l_id),
                l_e=float(l_e),
                total=float(total),
            )
        )
    return mapper, trace


def save_checkpoint(
    mapper: nn.Module, path: str | Path, metadata: dict | None = None
) -> None:
    """Parameter blob next to a JSON metadata sidecar."""
    path = Path(path)
    torch.save({"descriptor": mapper.descriptor(), "state": mapper.state_dict()}, path)
    sidecar = path.with_suffix(path.suffix + ".meta.json")
    sidecar.write_text(json.dumps(metadata or {}, sort_keys=True, indent=2) + "\n")


def load_checkpoint(path: str | Path) -> tuple[nn.Module, dict]:
    path = Path(path)
    blob = torch.load(path, weights_only=True)
    descriptor = blob["descriptor"]
    if descriptor["kind"] == "mlp":
        mapper: nn.Module = MLPMapper(descriptor["latent_dim"], tuple(descriptor["hidden"]))
    elif descriptor["kind"] == "linear_combination":
        mapper = LinearCombinationMapper(
            np.zeros((descriptor["n_directions"], descriptor["latent_dim"]))
        )
    else:
        raise MapperArchitectureError(f"unknown mapper architecture {descriptor['kind']!r}")
    mapper.load_state_dict(blob["state"])
    sidecar = path.with_suffix(path.suffix + ".meta.json")
    metadata = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return mapper, metadata
