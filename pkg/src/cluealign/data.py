"""Post schema, JSONL dataset ingestion, and stratified splitting."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from itertools import combinations
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

REAL_CLASS = 0
ATTRIBUTION_CLASSES = (0, 1, 2, 3, 4, 5)
ATTRIBUTION_NAMES = {
    0: "real",
    1: "image_fabrication",
    2: "non_evidential_image",
    3: "entity_inconsistency",
    4: "event_inconsistency",
    5: "time_inconsistency",
}


class Platform(str, Enum):
    INSTAGRAM = "instagram"
    TWITTER = "twitter"
    FACEBOOK = "facebook"
    OTHER = "other"

    @classmethod
    def coerce(cls, value: str) -> "Platform":
        try:
            return cls(value.strip().lower())
        except ValueError:
            return cls.OTHER


@dataclass(frozen=True)
class NewsPost:
    """One multimodal news item: text, a visual asset, and labels."""

    id: str
    text: str
    visual_ref: str
    published_at: date
    platform: Platform = Platform.OTHER
    label_binary: Optional[int] = None
    label_attribution: Optional[int] = None

    def is_fake(self) -> Optional[bool]:
        if self.label_binary is None:
            return None
        return self.label_binary == 1


class DatasetError(ValueError):
    pass


def _normalize_whitespace(text: str) -> str:
    return " ".join(text.split())


def validate_labels(label_binary: Optional[int], label_attribution: Optional[int]) -> None:
    """Reject label pairs that violate the real/fake <-> attribution coupling."""
    if label_binary is not None and label_binary not in (0, 1):
        raise DatasetError(f"label_binary must be 0 or 1, got {label_binary!r}")
    if label_attribution is not None and label_attribution not in ATTRIBUTION_CLASSES:
        raise DatasetError(
            f"label_attribution must be in 0..5, got {label_attribution!r}"
        )
    if label_binary is None or label_attribution is None:
        return
    if label_binary == 0 and label_attribution != REAL_CLASS:
        raise DatasetError("label inconsistency: real news must have attribution 0")
    if label_binary == 1 and label_attribution == REAL_CLASS:
        raise DatasetError("label inconsistency: fake news must have attribution in 1..5")


def post_from_record(record: dict, base_dir: Optional[Path] = None) -> NewsPost:
    """Build a NewsPost from one JSONL record, raising DatasetError on bad fields."""
    try:
        post_id = str(record["id"])
        text = str(record["text"])
        visual_ref = str(record["visual_ref"])
        published_raw = record["published_at"]
    except KeyError as exc:
        raise DatasetError(f"missing required field {exc.args[0]!r}") from exc

    text = _normalize_whitespace(text)
    if not text:
        raise DatasetError("text is empty after whitespace normalization")
    try:
        published_at = date.fromisoformat(str(published_raw))
    except ValueError as exc:
        raise DatasetError(f"published_at is not a YYYY-MM-DD date: {published_raw!r}") from exc

    label_binary = record.get("label_binary")
    label_attribution = record.get("label_attribution")
    if label_binary is not None:
        if not isinstance(label_binary, int) or isinstance(label_binary, bool):
            raise DatasetError(f"label_binary must be an integer, got {label_binary!r}")
    if label_attribution is not None:
        if not isinstance(label_attribution, int) or isinstance(label_attribution, bool):
            raise DatasetError(
                f"label_attribution must be an integer, got {label_attribution!r}"
            )
    validate_labels(label_binary, label_attribution)

    if base_dir is not None and not Path(visual_ref).is_absolute():
        visual_ref = str(base_dir / visual_ref)

    return NewsPost(
        id=post_id,
        text=text,
        visual_ref=visual_ref,
        published_at=published_at,
        platform=Platform.coerce(str(record.get("platform", "other"))),
        label_binary=label_binary,
        label_attribution=label_attribution,
    )


def post_to_record(post: NewsPost, relative_to: Optional[Path] = None) -> dict:
    visual_ref = post.visual_ref
    if relative_to is not None:
        try:
            visual_ref = str(Path(visual_ref).relative_to(relative_to))
        except ValueError:
            pass
    record = {
        "id": post.id,
        "text": post.text,
        "visual_ref": visual_ref,
        "published_at": post.published_at.isoformat(),
        "platform": post.platform.value,
    }
    if post.label_binary is not None:
        record["label_binary"] = post.label_binary
    if post.label_attribution is not None:
        record["label_attribution"] = post.label_attribution
    return record


@dataclass
class IngestReport:
    accepted: int = 0
    rejected: list = field(default_factory=list)  # (line_number, reason) pairs
    flagged: list = field(default_factory=list)  # post ids with unresolvable assets

    @property
    def rejected_count(self) -> int:
        return len(self.rejected)

    def to_dict(self) -> dict:
        return {
            "accepted": self.accepted,
            "rejected": [{"line": line, "reason": reason} for line, reason in self.rejected],
            "flagged": list(self.flagged),
        }


@dataclass
class IngestResult:
    posts: list
    report: IngestReport

    def __iter__(self):
        return iter(self.posts)

    def __len__(self) -> int:
        return len(self.posts)


def _asset_resolves(visual_ref: str) -> bool:
    return Path(visual_ref).is_file()


def ingest_dataset(path, schema_check: bool = True) -> IngestResult:
    """Read a JSONL dataset of posts, rejecting malformed or inconsistent records.

    With ``schema_check`` the visual asset must exist on disk; without it,
    posts with missing assets are kept but flagged in the report (corpus
    audit mode).
    """
    path = Path(path)
    base_dir = path.parent
    posts = []
    report = IngestReport()
    seen_ids = set()
    with path.open("r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                report.rejected.append((line_number, f"malformed JSON: {exc.msg}"))
                continue
            try:
                post = post_from_record(record, base_dir=base_dir)
            except DatasetError as exc:
                report.rejected.append((line_number, str(exc)))
                continue
            if post.id in seen_ids:
                report.rejected.append((line_number, f"duplicate id {post.id!r}"))
                continue
            if not _asset_resolves(post.visual_ref):
                if schema_check:
                    report.rejected.append(
                        (line_number, f"unresolvable visual_ref {post.visual_ref!r}")
                    )
                    continue
                report.flagged.append(post.id)
            seen_ids.add(post.id)
            posts.append(post)
            report.accepted += 1
    return IngestResult(posts=posts, report=report)


def write_dataset(posts: Iterable[NewsPost], path, relative_to: Optional[Path] = None) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for post in posts:
            handle.write(json.dumps(post_to_record(post, relative_to=relative_to)) + "\n")


@dataclass
class DatasetSplit:
    """Disjoint train/val/test id lists plus per-class counts for auditing."""

    train: list
    val: list
    test: list
    seed: int
    strata: dict  # class -> {"train": n, "val": n, "test": n}

    def sizes(self) -> tuple:
        return (len(self.train), len(self.val), len(self.test))

    def subset(self, name: str) -> list:
        if name not in ("train", "val", "test"):
            raise ValueError(f"unknown split {name!r}, expected train, val or test")
        return getattr(self, name)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "train": self.train, "val": self.val, "test": self.test}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "DatasetSplit":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            train=list(data["train"]),
            val=list(data["val"]),
            test=list(data["test"]),
            seed=int(data.get("seed", 0)),
            strata={},
        )


def _assign_extras(row_deficits, col_deficits, allowed):
    """Place +1 units so row c gets row_deficits[c] and column s gets col_deficits[s].

    Cells outside ``allowed`` must stay at their floor (their quota was integral).
    Small backtracking search; the instance is at most n_classes x 3.
    """
    n_rows = len(row_deficits)
    n_cols = len(col_deficits)
    placements = [[] for _ in range(n_rows)]
    cols_left = list(col_deficits)

    def backtrack(row: int) -> bool:
        if row == n_rows:
            return all(c == 0 for c in cols_left)
        need = row_deficits[row]
        candidates = [s for s in range(n_cols) if (row, s) in allowed and cols_left[s] > 0]
        if need == 0:
            return backtrack(row + 1)
        if len(candidates) < need:
            return False
        for combo in combinations(candidates, need):
            for s in combo:
                cols_left[s] -= 1
            placements[row] = list(combo)
            if backtrack(row + 1):
                return True
            for s in combo:
                cols_left[s] += 1
            placements[row] = []
        return False

    if not backtrack(0):
        raise DatasetError("could not balance stratified split allocation")
    return placements


def stratified_split(
    posts: Sequence[NewsPost],
    ratios: Sequence[float] = (0.7, 0.1, 0.2),
    seed: int = 0,
) -> DatasetSplit:
    """Split posts into train/val/test preserving per-class proportions.

    Split sizes are the ratio targets rounded to nearest, remainder going to
    train. Within each class, every split receives its proportional share to
    within one sample (controlled rounding of the class-by-split table).
    Deterministic for a fixed seed.
    """
    if len(ratios) != 3:
        raise DatasetError("ratios must be a (train, val, test) triple")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DatasetError(f"ratios must sum to 1, got {sum(ratios)!r}")

    by_class: dict = {}
    for post in posts:
        if post.label_attribution is None:
            raise DatasetError(f"post {post.id!r} has no attribution label")
        by_class.setdefault(post.label_attribution, []).append(post)

    if not by_class:
        raise DatasetError("no posts to split")
    for cls, members in sorted(by_class.items()):
        if len(members) < 3:
            raise DatasetError(
                f"class {cls} too small to stratify ({len(members)} < 3 members)"
            )

    total = len(posts)
    r_train, r_val, r_test = ratios
    n_val = round(total * r_val)
    n_test = round(total * r_test)
    n_train = total - n_val - n_test
    targets = {"train": n_train, "val": n_val, "test": n_test}
    columns = ("train", "val", "test")

    classes = sorted(by_class)
    # Real-valued quota table: rows sum to class counts, columns to split sizes.
    quotas = {
        (cls, s): len(by_class[cls]) * targets[s] / total for cls in classes for s in columns
    }
    floors = {key: int(q) for key, q in quotas.items()}
    allowed = {
        (ci, si)
        for ci, cls in enumerate(classes)
        for si, s in enumerate(columns)
        if quotas[(cls, s)] > floors[(cls, s)]
    }
    row_deficits = [
        len(by_class[cls]) - sum(floors[(cls, s)] for s in columns) for cls in classes
    ]
    col_deficits = [
        targets[s] - sum(floors[(cls, s)] for cls in classes) for s in columns
    ]
    placements = _assign_extras(row_deficits, col_deficits, allowed)

    counts = {}
    for ci, cls in enumerate(classes):
        row = {s: floors[(cls, s)] for s in columns}
        for si in placements[ci]:
            row[columns[si]] += 1
        counts[cls] = row

    rng = random.Random(seed)
    split_ids: dict = {s: [] for s in columns}
    strata: dict = {}
    for cls in classes:
        members = sorted(post.id for post in by_class[cls])
        rng.shuffle(members)
        row = counts[cls]
        cursor = 0
        for s in columns:
            split_ids[s].extend(members[cursor : cursor + row[s]])
            cursor += row[s]
        strata[cls] = dict(row)

    return DatasetSplit(
        train=split_ids["train"],
        val=split_ids["val"],
        test=split_ids["test"],
        seed=seed,
        strata=strata,
    )
