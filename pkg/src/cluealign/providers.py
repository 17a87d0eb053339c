"""Deterministic fixture clue providers backed by committed lookup tables.

Every provider here is a hermetic stand-in for an external service: the
entity gazetteer replaces an LLM extractor, and the image-keyed tables replace
vision APIs, reverse image search, and captioning models. Live adapters can
implement the same interfaces and be registered under different names.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import date
from importlib import resources
from pathlib import Path
from typing import Optional, Tuple

from .clues import (
    ImageEventProvider,
    ProviderRegistry,
    ReverseSearchProvider,
    TextualEntityProvider,
    VisualEntityProvider,
)
from .images import NormalizedImage

_WORD_RE = re.compile(r"[A-Za-z]+")


def load_default_gazetteer() -> frozenset:
    text = resources.files("cluealign").joinpath("resources/gazetteer.txt").read_text("utf-8")
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


class GazetteerEntityProvider(TextualEntityProvider):
    """Capitalized-token gazetteer: a token is an entity iff it starts with an
    uppercase letter and appears verbatim in the gazetteer."""

    def __init__(self, gazetteer=None, name: str = "fixture-gazetteer"):
        super().__init__(name=name, deterministic=True)
        self.gazetteer = frozenset(gazetteer) if gazetteer is not None else load_default_gazetteer()

    def extract(self, text: str) -> list:
        entities = []
        for match in _WORD_RE.finditer(text):
            token = match.group(0)
            if token[0].isupper() and token in self.gazetteer:
                entities.append(token)
        return entities


@dataclass
class FixtureClueTable:
    """Content-hash keyed lookup tables for the image-side fixture providers."""

    visual_entities: dict = field(default_factory=dict)  # hash -> [entity, ...]
    image_events: dict = field(default_factory=dict)  # hash -> description
    reverse_search: dict = field(default_factory=dict)  # hash -> {"time": iso|None, "title": str|None}

    def to_json(self, path) -> None:
        payload = {
            "visual_entities": self.visual_entities,
            "image_events": self.image_events,
            "reverse_search": self.reverse_search,
        }
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")

    @classmethod
    def from_json(cls, path) -> "FixtureClueTable":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            visual_entities=payload.get("visual_entities", {}),
            image_events=payload.get("image_events", {}),
            reverse_search=payload.get("reverse_search", {}),
        )

    def register(
        self,
        image_hash: str,
        entities=None,
        event: Optional[str] = None,
        found_time: Optional[date] = None,
        title: Optional[str] = None,
    ) -> None:
        if entities is not None:
            self.visual_entities[image_hash] = list(entities)
        if event is not None:
            self.image_events[image_hash] = event
        if found_time is not None or title is not None:
            self.reverse_search[image_hash] = {
                "time": found_time.isoformat() if found_time else None,
                "title": title,
            }


class TableVisualEntityProvider(VisualEntityProvider):
    """Lookup of person/landmark/organization names by image content hash."""

    def __init__(self, table: FixtureClueTable, name: str = "fixture-visual-entities"):
        super().__init__(name=name, deterministic=True)
        self.table = table

    def extract(self, image: NormalizedImage) -> list:
        return list(self.table.visual_entities.get(image.content_hash(), []))


class TableImageEventProvider(ImageEventProvider):
    def __init__(self, table: FixtureClueTable, name: str = "fixture-image-events"):
        super().__init__(name=name, deterministic=True)
        self.table = table

    def describe(self, image: NormalizedImage) -> str:
        return self.table.image_events.get(image.content_hash(), "")


class TableReverseSearchProvider(ReverseSearchProvider):
    def __init__(self, table: FixtureClueTable, name: str = "fixture-reverse-search"):
        super().__init__(name=name, deterministic=True)
        self.table = table

    def search(self, image: NormalizedImage) -> Tuple[Optional[date], Optional[str]]:
        entry = self.table.reverse_search.get(image.content_hash())
        if entry is None:
            return None, None
        found = date.fromisoformat(entry["time"]) if entry.get("time") else None
        return found, entry.get("title")


def build_fixture_registry(table=None, gazetteer=None) -> ProviderRegistry:
    """Provider registry running entirely off committed fixtures."""
    if table is None:
        table = FixtureClueTable()
    elif isinstance(table, (str, Path)):
        table = FixtureClueTable.from_json(table)
    return ProviderRegistry(
        textual_entity=GazetteerEntityProvider(gazetteer=gazetteer),
        visual_entity=TableVisualEntityProvider(table),
        image_event=TableImageEventProvider(table),
        reverse_search=TableReverseSearchProvider(table),
    )
