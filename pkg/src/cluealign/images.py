"""Visual asset loading: video middle-frame extraction and 224x224 normalization."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

TARGET_SIZE = 224

VIDEO_SUFFIXES = {".mp4", ".avi", ".mov", ".mkv", ".webm", ".m4v"}


class VisualAssetError(ValueError):
    pass


def _frames_via_pil(path: Path):
    image = Image.open(path)
    count = getattr(image, "n_frames", 1)
    return image, count


def _middle_frame_via_cv2(path: Path) -> Image.Image:
    try:
        import cv2
    except ImportError as exc:  # video extra not installed
        raise VisualAssetError(
            f"visual asset unreadable: {path} (opencv required for video containers)"
        ) from exc
    capture = cv2.VideoCapture(str(path))
    frames = []
    while True:
        ok, frame = capture.read()
        if not ok:
            break
        frames.append(frame)
    capture.release()
    if not frames:
        raise VisualAssetError(f"visual asset unreadable: {path}")
    middle = frames[len(frames) // 2]
    return Image.fromarray(middle[:, :, ::-1])  # BGR -> RGB


def extract_middle_frame(video_ref) -> Image.Image:
    """Return frame floor(F/2) of an F-frame asset; still images pass through.

    Multi-frame assets PIL can decode (GIF and friends) are treated as frame
    sequences; common video containers go through opencv when available.
    """
    path = Path(video_ref)
    if not path.is_file():
        raise VisualAssetError(f"visual asset unreadable: {path}")
    if path.suffix.lower() in VIDEO_SUFFIXES:
        return _middle_frame_via_cv2(path)
    try:
        image, count = _frames_via_pil(path)
    except (UnidentifiedImageError, OSError) as exc:
        raise VisualAssetError(f"visual asset unreadable: {path}") from exc
    if count > 1:
        image.seek(count // 2)
    return image.convert("RGB")


@dataclass(frozen=True)
class NormalizedImage:
    """Canonical 224x224 RGB image held as uint8; adapters scale as they need.

    Keeping the canonical form integer-valued makes the content hash (used to
    key fixture lookup tables) stable across adapters and platforms.
    """

    pixels: np.ndarray  # uint8, shape (224, 224, 3)

    def __post_init__(self):
        if self.pixels.dtype != np.uint8 or self.pixels.shape != (TARGET_SIZE, TARGET_SIZE, 3):
            raise VisualAssetError(
                f"normalized image must be uint8 {TARGET_SIZE}x{TARGET_SIZE}x3, "
                f"got {self.pixels.dtype} {self.pixels.shape}"
            )

    def to_float(self, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        scaled = self.pixels.astype(np.float32) / 255.0
        return low + scaled * (high - low)

    def content_hash(self) -> str:
        return hashlib.sha256(self.pixels.tobytes()).hexdigest()

    def channel_means(self) -> np.ndarray:
        return self.pixels.reshape(-1, 3).mean(axis=0)


def normalize_image(image) -> NormalizedImage:
    """Resize to 224x224 RGB; grayscale inputs are replicated to 3 channels."""
    if isinstance(image, (str, Path)):
        image = extract_middle_frame(image)
    if not isinstance(image, Image.Image):
        raise VisualAssetError(f"expected a PIL image or path, got {type(image)!r}")
    if image.width == 0 or image.height == 0:
        raise VisualAssetError("zero-area image")
    rgb = image.convert("RGB")
    if rgb.size != (TARGET_SIZE, TARGET_SIZE):
        rgb = rgb.resize((TARGET_SIZE, TARGET_SIZE), Image.BILINEAR)
    return NormalizedImage(pixels=np.asarray(rgb, dtype=np.uint8))


def load_visual_asset(visual_ref) -> NormalizedImage:
    """Resolve a post's visual_ref (image or video) to its normalized form."""
    return normalize_image(extract_middle_frame(visual_ref))
