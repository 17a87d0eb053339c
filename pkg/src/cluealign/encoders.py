"""Frozen encoder adapters and per-post feature bundles.

Fixture encoders map input bytes to pseudo-random unit vectors through a
seeded hash, giving stable, collision-resistant embeddings with no model
downloads. Live pretrained adapters (see ``cluealign.pretrained``) implement
the same interfaces behind optional dependencies.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .clues import ClueSet
from .data import NewsPost
from .images import NormalizedImage, VisualAssetError, load_visual_asset

ENCODER_FAMILIES = ("joint", "semantic", "manipulation")

ENTITY_SEPARATOR = " ; "

GAP_SCALE_DAYS = 365.25


class EncodingError(RuntimeError):
    pass


def hash_to_unit_vector(tag: str, payload: bytes, dim: int, seed: int = 0) -> np.ndarray:
    """Expand a seeded hash of ``payload`` into a deterministic unit vector.

    Rule (stable across platforms, reimplementable for verification):

    1. ``root = sha256(tag_utf8 + 0x1f + seed_uint64_be + 0x1f + payload)``
    2. block ``k`` contributes ``sha256(root + k_uint32_be)``: 32 bytes read as
       four big-endian uint64 words, each mapped to ``u / 2**64 * 2 - 1``
    3. the first ``dim`` values, L2-normalized, form the vector (float32)
    """
    material = tag.encode("utf-8") + b"\x1f" + seed.to_bytes(8, "big") + b"\x1f" + payload
    root = hashlib.sha256(material).digest()
    values = []
    block = 0
    while len(values) < dim:
        chunk = hashlib.sha256(root + block.to_bytes(4, "big")).digest()
        for offset in range(0, 32, 8):
            word = int.from_bytes(chunk[offset : offset + 8], "big")
            values.append(word / 2.0**64 * 2.0 - 1.0)
        block += 1
    vector = np.asarray(values[:dim], dtype=np.float64)
    norm = float(np.linalg.norm(vector))
    return (vector / norm).astype(np.float32)


class EncoderAdapter(ABC):
    """Base adapter over a frozen encoder; parameters never change in a run."""

    family: str = ""

    def __init__(self, name: str, dim: int, seed: int = 0):
        self.name = name
        self.dim = int(dim)
        self.seed = int(seed)
        self.frozen = True

    def describe(self) -> dict:
        return {"name": self.name, "family": self.family, "dim": self.dim, "seed": self.seed}

    @abstractmethod
    def _probe(self) -> bytes:
        """Bytes that change iff the adapter's effective parameters change."""

    def fingerprint(self) -> str:
        header = json.dumps(self.describe(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(header + self._probe()).hexdigest()


class JointEncoderAdapter(EncoderAdapter):
    """Text and image mapped into a shared space of equal dimensionality."""

    family = "joint"

    @abstractmethod
    def encode_text(self, text: str) -> np.ndarray:
        ...

    @abstractmethod
    def encode_image(self, image: NormalizedImage) -> np.ndarray:
        ...


class SemanticEncoderAdapter(EncoderAdapter):
    family = "semantic"

    @abstractmethod
    def encode(self, text: str) -> np.ndarray:
        ...


class ManipulationEncoderAdapter(EncoderAdapter):
    family = "manipulation"

    @abstractmethod
    def extract(self, image: NormalizedImage) -> np.ndarray:
        ...


class FixtureJointEncoder(JointEncoderAdapter):
    def __init__(self, dim: int = 512, seed: int = 0, name: str = "fixture-joint"):
        super().__init__(name=name, dim=dim, seed=seed)

    def encode_text(self, text: str) -> np.ndarray:
        return hash_to_unit_vector("joint-text", text.encode("utf-8"), self.dim, self.seed)

    def encode_image(self, image: NormalizedImage) -> np.ndarray:
        return hash_to_unit_vector("joint-image", image.pixels.tobytes(), self.dim, self.seed)

    def _probe(self) -> bytes:
        return self.encode_text("probe").tobytes()


class FixtureSemanticEncoder(SemanticEncoderAdapter):
    def __init__(self, dim: int = 768, seed: int = 0, name: str = "fixture-semantic"):
        super().__init__(name=name, dim=dim, seed=seed)

    def encode(self, text: str) -> np.ndarray:
        return hash_to_unit_vector("semantic", text.encode("utf-8"), self.dim, self.seed)

    def _probe(self) -> bytes:
        return self.encode("probe").tobytes()


class FixtureManipulationEncoder(ManipulationEncoderAdapter):
    def __init__(self, dim: int = 256, seed: int = 0, name: str = "fixture-manipulation"):
        super().__init__(name=name, dim=dim, seed=seed)

    def extract(self, image: NormalizedImage) -> np.ndarray:
        return hash_to_unit_vector("manipulation", image.pixels.tobytes(), self.dim, self.seed)

    def _probe(self) -> bytes:
        return self.extract(
            NormalizedImage(pixels=np.zeros((224, 224, 3), dtype=np.uint8))
        ).tobytes()


@dataclass
class AdapterRegistry:
    joint: JointEncoderAdapter
    semantic: SemanticEncoderAdapter
    manipulation: ManipulationEncoderAdapter

    def names(self) -> dict:
        return {
            "joint": self.joint.name,
            "semantic": self.semantic.name,
            "manipulation": self.manipulation.name,
        }

    def dims(self) -> dict:
        return {
            "d_joint": self.joint.dim,
            "d_sem": self.semantic.dim,
            "d_manip": self.manipulation.dim,
        }

    def fingerprints(self) -> dict:
        return {
            "joint": self.joint.fingerprint(),
            "semantic": self.semantic.fingerprint(),
            "manipulation": self.manipulation.fingerprint(),
        }


def build_fixture_adapters(
    d_joint: int = 512, d_sem: int = 768, d_manip: int = 256, seed: int = 0
) -> AdapterRegistry:
    return AdapterRegistry(
        joint=FixtureJointEncoder(dim=d_joint, seed=seed),
        semantic=FixtureSemanticEncoder(dim=d_sem, seed=seed),
        manipulation=FixtureManipulationEncoder(dim=d_manip, seed=seed),
    )


def serialize_entities(entities) -> str:
    return ENTITY_SEPARATOR.join(entities)


def encode_semantic(text: Union[str, list, None], adapter: SemanticEncoderAdapter) -> np.ndarray:
    """Encode text or an entity list; empty input yields the zero vector."""
    if isinstance(text, (list, tuple)):
        text = serialize_entities(text)
    if not text:
        return np.zeros(adapter.dim, dtype=np.float32)
    return adapter.encode(text)


def encode_joint(text: str, image: Optional[NormalizedImage], adapter: JointEncoderAdapter):
    text_vec = adapter.encode_text(text)
    if image is None:
        image_vec = np.zeros(adapter.dim, dtype=np.float32)
    else:
        image_vec = adapter.encode_image(image)
    return text_vec, image_vec


def extract_manipulation_features(
    image: Optional[NormalizedImage], adapter: ManipulationEncoderAdapter
) -> np.ndarray:
    if image is None:
        return np.zeros(adapter.dim, dtype=np.float32)
    return adapter.extract(image)


def normalize_gap(gap_days: Optional[int]) -> float:
    """Scale a day gap to O(1) units; absent gaps map to 0."""
    if gap_days is None:
        return 0.0
    return gap_days / GAP_SCALE_DAYS


FEATURE_FIELDS = (
    "text_joint",
    "image_joint",
    "text_semantic",
    "entities_text",
    "entities_visual",
    "event",
    "retrieved",
    "manipulation",
)


@dataclass
class FeatureBundle:
    """All encoded vectors for one post plus the normalized temporal gap."""

    post_id: str
    text_joint: np.ndarray
    image_joint: np.ndarray
    text_semantic: np.ndarray
    entities_text: np.ndarray
    entities_visual: np.ndarray
    event: np.ndarray
    retrieved: np.ndarray
    manipulation: np.ndarray
    gap: float
    validity: dict = field(default_factory=dict)

    def vectors(self) -> dict:
        return {name: getattr(self, name) for name in FEATURE_FIELDS}

    def check_finite(self) -> None:
        for name, vector in self.vectors().items():
            if not np.all(np.isfinite(vector)):
                raise EncodingError(f"encoder produced non-finite values in {name}")
        if not np.isfinite(self.gap):
            raise EncodingError("encoder produced non-finite values in gap")


def build_feature_bundle(
    post: NewsPost,
    clues: ClueSet,
    adapters: AdapterRegistry,
    image: Optional[NormalizedImage] = None,
    cache: Optional["FeatureCache"] = None,
) -> FeatureBundle:
    """Encode one post's text, image, and clues into a FeatureBundle.

    Absent clues become zero vectors with validity False; any non-finite
    encoder output raises EncodingError naming the feature.
    """
    if cache is not None:
        cached = cache.get(post.id)
        if cached is not None:
            return cached

    if image is None:
        try:
            image = load_visual_asset(post.visual_ref)
        except VisualAssetError:
            image = None

    text_joint, image_joint = encode_joint(post.text, image, adapters.joint)
    text_semantic = encode_semantic(post.text, adapters.semantic)
    entities_text = encode_semantic(clues.textual_entities, adapters.semantic)
    entities_visual = encode_semantic(clues.visual_entities, adapters.semantic)
    event = encode_semantic(clues.image_event, adapters.semantic)
    retrieved = encode_semantic(clues.retrieved_title, adapters.semantic)
    manipulation = extract_manipulation_features(image, adapters.manipulation)
    gap = normalize_gap(clues.temporal_gap_days)

    bundle = FeatureBundle(
        post_id=post.id,
        text_joint=text_joint,
        image_joint=image_joint,
        text_semantic=text_semantic,
        entities_text=entities_text,
        entities_visual=entities_visual,
        event=event,
        retrieved=retrieved,
        manipulation=manipulation,
        gap=gap,
        validity={
            "text_joint": True,
            "image_joint": image is not None,
            "text_semantic": True,
            "entities_text": bool(clues.textual_entities),
            "entities_visual": bool(clues.visual_entities),
            "event": bool(clues.image_event),
            "retrieved": bool(clues.retrieved_title),
            "manipulation": image is not None,
            "gap": clues.temporal_gap_days is not None,
        },
    )
    bundle.check_finite()
    if cache is not None:
        cache.put(bundle)
    return bundle


class FeatureCacheError(RuntimeError):
    pass


class FeatureCache:
    """Binary per-post feature store with a JSON manifest of dims and adapters.

    One ``.npz`` per post; writes go through a temp file and an atomic rename.
    Opening a cache whose manifest disagrees with the adapter registry raises.
    """

    MANIFEST = "manifest.json"

    def __init__(self, directory, adapters: AdapterRegistry):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.adapters = adapters
        self._lock = threading.Lock()
        manifest_path = self.directory / self.MANIFEST
        expected = {**adapters.dims(), "adapters": adapters.names()}
        if manifest_path.exists():
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
            stored = {k: manifest.get(k) for k in ("d_joint", "d_sem", "d_manip")}
            stored["adapters"] = manifest.get("adapters")
            if stored != expected:
                raise FeatureCacheError(
                    f"feature cache at {self.directory} was built with {stored}, "
                    f"requested {expected}"
                )
        else:
            self._write_manifest(0)

    def _write_manifest(self, count: int) -> None:
        manifest = {**self.adapters.dims(), "adapters": self.adapters.names(), "count": count}
        path = self.directory / self.MANIFEST
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            json.dump(manifest, handle, indent=2, sort_keys=True)
        os.replace(tmp, path)

    def _record_path(self, post_id: str) -> Path:
        safe = hashlib.sha256(post_id.encode("utf-8")).hexdigest()[:24]
        return self.directory / f"{safe}.npz"

    def __contains__(self, post_id: str) -> bool:
        return self._record_path(post_id).exists()

    def __len__(self) -> int:
        return len(list(self.directory.glob("*.npz")))

    def get(self, post_id: str) -> Optional[FeatureBundle]:
        path = self._record_path(post_id)
        if not path.exists():
            return None
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            if meta["post_id"] != post_id:
                raise FeatureCacheError(f"feature cache hash collision for {post_id!r}")
            return FeatureBundle(
                post_id=post_id,
                gap=float(data["gap"]),
                validity=meta["validity"],
                **{name: data[name] for name in FEATURE_FIELDS},
            )

    def put(self, bundle: FeatureBundle) -> None:
        path = self._record_path(bundle.post_id)
        meta = json.dumps({"post_id": bundle.post_id, "validity": bundle.validity})
        with self._lock:
            if path.exists():
                return
            fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
            os.close(fd)
            with open(tmp, "wb") as handle:
                np.savez(
                    handle,
                    meta=np.asarray(meta),
                    gap=np.float64(bundle.gap),
                    **bundle.vectors(),
                )
            os.replace(tmp, path)
            self._write_manifest(len(self))
