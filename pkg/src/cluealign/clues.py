"""Multi-view clue collection: entities, image event, reverse search, temporal logic.

External clue services are modeled as provider interfaces; deterministic
fixture implementations live in ``cluealign.providers`` so the whole pipeline
runs offline.
"""

from __future__ import annotations

import json
import re
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Optional, Tuple

from .data import NewsPost
from .images import NormalizedImage, VisualAssetError, load_visual_asset

CLUE_KINDS = ("textual_entity", "visual_entity", "image_event", "reverse_search")

# Default instruction for live captioning adapters; fixture providers ignore it.
DEFAULT_CAPTION_PROMPT = "describe the event of the image breifly"


class ClueProvider(ABC):
    """Base for pluggable clue services; fixtures must be deterministic."""

    kind: str = ""

    def __init__(self, name: str, deterministic: bool = True):
        self.name = name
        self.deterministic = deterministic
        self.calls = 0


class TextualEntityProvider(ClueProvider):
    kind = "textual_entity"

    @abstractmethod
    def extract(self, text: str) -> list:
        ...


class VisualEntityProvider(ClueProvider):
    kind = "visual_entity"

    @abstractmethod
    def extract(self, image: NormalizedImage) -> list:
        ...


class ImageEventProvider(ClueProvider):
    kind = "image_event"

    @abstractmethod
    def describe(self, image: NormalizedImage) -> str:
        ...


class ReverseSearchProvider(ClueProvider):
    kind = "reverse_search"

    @abstractmethod
    def search(self, image: NormalizedImage) -> Tuple[Optional[date], Optional[str]]:
        ...


@dataclass
class ProviderRegistry:
    textual_entity: TextualEntityProvider
    visual_entity: VisualEntityProvider
    image_event: ImageEventProvider
    reverse_search: ReverseSearchProvider

    def names(self) -> dict:
        return {
            "textual_entity": self.textual_entity.name,
            "visual_entity": self.visual_entity.name,
            "image_event": self.image_event.name,
            "reverse_search": self.reverse_search.name,
        }


CLUE_FIELDS = (
    "textual_entities",
    "visual_entities",
    "image_event",
    "retrieved_title",
    "visual_time",
    "textual_time",
    "temporal_gap",
)


@dataclass
class ClueSet:
    """Extracted evidence for one post; absent clues carry validity=False."""

    post_id: str
    textual_entities: list = field(default_factory=list)
    visual_entities: list = field(default_factory=list)
    image_event: str = ""
    retrieved_title: Optional[str] = None
    visual_time: Optional[date] = None
    textual_time: Optional[date] = None
    temporal_gap_days: Optional[int] = None

    @property
    def validity(self) -> dict:
        return {
            "textual_entities": bool(self.textual_entities),
            "visual_entities": bool(self.visual_entities),
            "image_event": bool(self.image_event),
            "retrieved_title": bool(self.retrieved_title),
            "visual_time": self.visual_time is not None,
            "textual_time": self.textual_time is not None,
            "temporal_gap": self.temporal_gap_days is not None,
        }

    def to_record(self) -> dict:
        return {
            "id": self.post_id,
            "E_p": list(self.textual_entities),
            "E_v": list(self.visual_entities),
            "S": self.image_event,
            "R": self.retrieved_title,
            "T_v": self.visual_time.isoformat() if self.visual_time else None,
            "T_p": self.textual_time.isoformat() if self.textual_time else None,
            "T_g_days": self.temporal_gap_days,
            "validity": self.validity,
        }

    @classmethod
    def from_record(cls, record: dict) -> "ClueSet":
        return cls(
            post_id=record["id"],
            textual_entities=list(record.get("E_p", [])),
            visual_entities=list(record.get("E_v", [])),
            image_event=record.get("S") or "",
            retrieved_title=record.get("R"),
            visual_time=date.fromisoformat(record["T_v"]) if record.get("T_v") else None,
            textual_time=date.fromisoformat(record["T_p"]) if record.get("T_p") else None,
            temporal_gap_days=record.get("T_g_days"),
        )


# --- date mention parsing -----------------------------------------------

_MONTHS = {
    name: i + 1
    for i, name in enumerate(
        "january february march april may june july august "
        "september october november december".split()
    )
}
for _name, _num in list(_MONTHS.items()):
    _MONTHS[_name[:3]] = _num

_ISO_RE = re.compile(r"\b(\d{4})-(\d{2})-(\d{2})\b")
_MONTH_YEAR_RE = re.compile(
    r"\b(" + "|".join(sorted(_MONTHS, key=len, reverse=True)) + r")\.?\s+(\d{4})\b",
    re.IGNORECASE,
)
_YEAR_RE = re.compile(r"\b(19\d{2}|20\d{2})\b")


def parse_date_mentions(text: str) -> list:
    """Find date mentions: ISO dates, month-plus-year, and bare years.

    Month-only mentions anchor to day 1, year-only to Jan 1. Spans already
    consumed by a more specific pattern are masked out for the coarser ones.
    """
    mentions = []
    masked = text

    def consume(match) -> str:
        return " " * (match.end() - match.start())

    for match in _ISO_RE.finditer(masked):
        year, month, day = (int(g) for g in match.groups())
        try:
            mentions.append(date(year, month, day))
        except ValueError:
            continue
    masked = _ISO_RE.sub(consume, masked)

    for match in _MONTH_YEAR_RE.finditer(masked):
        month = _MONTHS[match.group(1).lower()]
        year = int(match.group(2))
        mentions.append(date(year, month, 1))
    masked = _MONTH_YEAR_RE.sub(consume, masked)

    for match in _YEAR_RE.finditer(masked):
        mentions.append(date(int(match.group(1)), 1, 1))

    return mentions


def extract_textual_time(text: str, published_at: date) -> date:
    """Earlier of the publication date and the earliest date mentioned in text."""
    mentions = parse_date_mentions(text)
    if not mentions:
        return published_at
    return min(published_at, min(mentions))


def compute_temporal_gap(textual_time: date, visual_time: Optional[date]) -> Optional[int]:
    """Signed day difference textual_time - visual_time; None when no visual time."""
    if visual_time is None:
        return None
    return (textual_time - visual_time).days


# --- provider-wrapped operations ----------------------------------------


def extract_textual_entities(text: str, provider: TextualEntityProvider) -> list:
    """Ordered, deduplicated entities from text; provider failure yields []."""
    provider.calls += 1
    try:
        entities = provider.extract(text)
    except Exception:
        return []
    return _dedup(entities)


def extract_visual_entities(image: Optional[NormalizedImage], provider: VisualEntityProvider) -> list:
    provider.calls += 1
    if image is None:
        return []
    try:
        entities = provider.extract(image)
    except Exception:
        return []
    return _dedup(entities)


def describe_image_event(image: Optional[NormalizedImage], provider: ImageEventProvider) -> str:
    provider.calls += 1
    if image is None:
        return ""
    try:
        return provider.describe(image) or ""
    except Exception:
        return ""


def reverse_search(
    image: Optional[NormalizedImage], provider: ReverseSearchProvider
) -> Tuple[Optional[date], Optional[str]]:
    provider.calls += 1
    if image is None:
        return None, None
    try:
        found_time, title = provider.search(image)
    except Exception:
        return None, None
    return found_time, title or None


def _dedup(items) -> list:
    seen = set()
    output = []
    for item in items:
        if item and item not in seen:
            seen.add(item)
            output.append(item)
    return output


def collect_clues(
    post: NewsPost,
    providers: ProviderRegistry,
    cache: Optional["ClueCache"] = None,
    image: Optional[NormalizedImage] = None,
) -> ClueSet:
    """Assemble the full ClueSet for one post, degrading gracefully per clue.

    Provider exceptions never escape; a failed clue is simply absent. Results
    are cached keyed by post id once the cache has been bound to this provider
    registry.
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

    textual_entities = extract_textual_entities(post.text, providers.textual_entity)
    visual_entities = extract_visual_entities(image, providers.visual_entity)
    event = describe_image_event(image, providers.image_event)
    visual_time, title = reverse_search(image, providers.reverse_search)
    textual_time = extract_textual_time(post.text, post.published_at)
    gap = compute_temporal_gap(textual_time, visual_time)

    clue_set = ClueSet(
        post_id=post.id,
        textual_entities=textual_entities,
        visual_entities=visual_entities,
        image_event=event,
        retrieved_title=title,
        visual_time=visual_time,
        textual_time=textual_time,
        temporal_gap_days=gap,
    )
    if cache is not None:
        cache.put(clue_set)
    return clue_set


class ClueCacheError(RuntimeError):
    pass


class ClueCache:
    """JSONL clue store keyed by post id, bound to one provider registry.

    Records follow the wire schema of ``ClueSet.to_record``. A sidecar meta
    file pins the provider names; opening the cache under a different registry
    raises rather than serving stale clues. Reads are lock-free after load;
    writes append under a lock.
    """

    def __init__(self, path, provider_names: dict):
        self.path = Path(path)
        self.meta_path = self.path.with_suffix(self.path.suffix + ".meta.json")
        self.provider_names = dict(provider_names)
        self._records: dict = {}
        self._lock = threading.Lock()
        self._load()

    def _load(self) -> None:
        if self.meta_path.exists():
            meta = json.loads(self.meta_path.read_text(encoding="utf-8"))
            if meta.get("providers") != self.provider_names:
                raise ClueCacheError(
                    f"clue cache {self.path} was built with providers "
                    f"{meta.get('providers')}, requested {self.provider_names}"
                )
        else:
            self.meta_path.parent.mkdir(parents=True, exist_ok=True)
            self.meta_path.write_text(
                json.dumps({"providers": self.provider_names}, indent=2), encoding="utf-8"
            )
        if self.path.exists():
            with self.path.open("r", encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    record = json.loads(line)
                    self._records[record["id"]] = record

    def __contains__(self, post_id: str) -> bool:
        return post_id in self._records

    def __len__(self) -> int:
        return len(self._records)

    def get(self, post_id: str) -> Optional[ClueSet]:
        record = self._records.get(post_id)
        if record is None:
            return None
        return ClueSet.from_record(record)

    def put(self, clue_set: ClueSet) -> None:
        record = clue_set.to_record()
        with self._lock:
            if clue_set.post_id in self._records:
                return
            self._records[clue_set.post_id] = record
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(json.dumps(record) + "\n")
