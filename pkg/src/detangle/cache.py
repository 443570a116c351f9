"""Content-addressed embedding cache.

Embeddings are keyed by SHA-256 of (item content bytes, model id) and stored
append-only as little-endian float32 payloads (``<key>.f32``) next to a JSON
sidecar (``<key>.json``) recording ``{dim, model_id, created_at}``. Corrupt
records are skipped and recomputed with a logged warning. Reads need no
coordination; writes are serialized per process and land via atomic rename,
so concurrent readers never observe half-written payloads.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import EmbeddedCorpus
from .embedding import EmbeddingBackend

log = logging.getLogger(__name__)

#: Environment variable overriding the cache root chosen in configs.
CACHE_DIR_ENV = "DETANGLE_CACHE_DIR"


class ItemReadError(OSError):
    """A corpus item could not be read; the message names the item."""


@dataclass(frozen=True)
class CorpusItem:
    """One embeddable item: stable id, hashable content bytes, decoded array."""

    item_id: str
    content: bytes
    array: np.ndarray
    source: str = "array"


def item_from_array(item_id: str, array: np.ndarray, source: str = "array") -> CorpusItem:
    buf = io.BytesIO()
    np.save(buf, np.asarray(array))
    return CorpusItem(item_id=item_id, content=buf.getvalue(), array=np.asarray(array), source=source)


def item_from_path(path: str | Path, item_id: str | None = None) -> CorpusItem:
    """Load a ``.npy`` vector item from disk; raises naming the item on failure."""
    path = Path(path)
    item_id = item_id if item_id is not None else path.stem
    try:
        content = path.read_bytes()
        array = np.load(io.BytesIO(content), allow_pickle=False)
    except Exception as exc:
        raise ItemReadError(f"cannot read corpus item {item_id!r} from {path}: {exc}") from exc
    return CorpusItem(item_id=item_id, content=content, array=array, source=str(path))


def cache_key(content: bytes, model_id: str) -> str:
    h = hashlib.sha256()
    h.update(model_id.encode("utf-8"))
    h.update(b"\x00")
    h.update(content)
    return h.hexdigest()


class EmbeddingCache:
    """Filesystem-backed memoization of image embeddings."""

    def __init__(self, root: str | Path):
        env_root = os.environ.get(CACHE_DIR_ENV)
        self.root = Path(env_root) if env_root else Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._write_lock = threading.Lock()

    def _paths(self, key: str) -> tuple[Path, Path]:
        return self.root / f"{key}.f32", self.root / f"{key}.json"

    def lookup(self, key: str, model_id: str) -> np.ndarray | None:
        """Return the cached vector, or None (warning logged) if absent/corrupt."""
        payload_path, sidecar_path = self._paths(key)
        if not payload_path.exists() or not sidecar_path.exists():
            return None
        try:
            sidecar = json.loads(sidecar_path.read_text())
            dim = int(sidecar["dim"])
            if sidecar["model_id"] != model_id:
                raise ValueError("sidecar model id mismatch")
            values = np.frombuffer(payload_path.read_bytes(), dtype="<f4")
            if values.shape[0] != dim:
                raise ValueError(f"payload holds {values.shape[0]} floats, sidecar says {dim}")
            if not np.all(np.isfinite(values)):
                raise ValueError("payload contains non-finite values")
            return values.astype(np.float64)
        except Exception as exc:
            log.warning("skipping corrupt cache record %s (%s); recomputing", key, exc)
            return None

    def store(self, key: str, values: np.ndarray, model_id: str) -> None:
        payload_path, sidecar_path = self._paths(key)
        payload = np.asarray(values, dtype="<f4").tobytes()
        sidecar = json.dumps(
            {
                "dim": int(np.asarray(values).shape[0]),
                "model_id": model_id,
                "created_at": datetime.now(timezone.utc).isoformat(),
            }
        )
        with self._write_lock:
            tmp_payload = payload_path.with_suffix(".f32.tmp")
            tmp_sidecar = sidecar_path.with_suffix(".json.tmp")
            tmp_payload.write_bytes(payload)
            tmp_sidecar.write_text(sidecar)
            os.replace(tmp_payload, payload_path)
            os.replace(tmp_sidecar, sidecar_path)

    def get_or_embed(self, backend: EmbeddingBackend, item: CorpusItem) -> np.ndarray:
        key = cache_key(item.content, backend.model_id)
        cached = self.lookup(key, backend.model_id)
        if cached is not None:
            return cached
        vector = backend.embed_image(item.array).values
        self.store(key, vector, backend.model_id)
        return np.asarray(vector)


def build_cache(
    backend: EmbeddingBackend,
    items: Sequence[CorpusItem],
    cache: EmbeddingCache,
) -> EmbeddedCorpus:
    """Embed every item exactly once per (content hash, model id).

    Re-running over an unchanged corpus performs zero backend calls; results
    with and without the cache are identical because the cache is a pure
    memoization of ``embed_image``.
    """
    rows = []
    for item in items:
        vector = cache.get_or_embed(backend, item)
        # Re-normalize: float32 storage nudges norms by ~1e-8.
        rows.append(vector / np.linalg.norm(vector))
    embeddings = (
        np.stack(rows) if rows else np.zeros((0, backend.dim), dtype=np.float64)
    )
    return EmbeddedCorpus(
        item_ids=[item.item_id for item in items],
        embeddings=embeddings,
        model_id=backend.model_id,
        provenance=[item.source for item in items],
    )
