"""Labeled screening corpus: ingestion, validation, and train/test partitioning.

A corpus is an ordered collection of title/abstract records, each carrying a
human include/exclude decision. Partitioning supports a plain stratified split
and an "enriched" split that targets a chosen include proportion in the
training set.
"""

from __future__ import annotations

import csv
import json
import math
import random
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import IntEnum
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator

from .errors import ScreenKitError

REQUIRED_FIELDS = ("id", "title", "abstract", "label")


class CorpusError(ScreenKitError):
    """Raised for unreadable, malformed, or inconsistent corpus files."""


class SplitError(ScreenKitError):
    """Raised for infeasible or invalid partition specifications."""


class ScreeningLabel(IntEnum):
    """Binary screening decision; include (1) is the positive class."""

    EXCLUDE = 0
    INCLUDE = 1

    @classmethod
    def parse(cls, token: object) -> "ScreeningLabel":
        """Parse "0"/"1" or case-insensitive "exclude"/"include"."""
        text = str(token).strip().lower()
        if text in ("0", "exclude"):
            return cls.EXCLUDE
        if text in ("1", "include"):
            return cls.INCLUDE
        raise ValueError(f"invalid label token {token!r} (expected 0/1 or include/exclude)")


@dataclass(frozen=True)
class StudyRecord:
    """One title/abstract item with its human screening decision."""

    id: str
    title: str
    abstract: str
    human_label: ScreeningLabel

    def __post_init__(self) -> None:
        if not str(self.id).strip():
            raise CorpusError("study id must be nonempty")
        if not self.title.strip():
            raise CorpusError(f"study {self.id!r}: title must be nonempty")

    @property
    def abstract_missing(self) -> bool:
        return not self.abstract.strip()


@dataclass(frozen=True)
class Provenance:
    source: str
    ingested_at: str


@dataclass(frozen=True)
class Corpus:
    """Immutable ordered collection of study records with unique ids."""

    records: tuple[StudyRecord, ...]
    provenance: Provenance

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for record in self.records:
            if record.id in seen:
                raise CorpusError(f"duplicate study id {record.id!r}")
            seen.add(record.id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[StudyRecord]:
        return iter(self.records)

    def ids(self) -> tuple[str, ...]:
        return tuple(record.id for record in self.records)

    def by_id(self) -> dict[str, StudyRecord]:
        return {record.id: record for record in self.records}

    @property
    def n_include(self) -> int:
        return sum(1 for r in self.records if r.human_label is ScreeningLabel.INCLUDE)

    @property
    def n_exclude(self) -> int:
        return len(self.records) - self.n_include

    @property
    def inclusion_rate(self) -> float:
        if not self.records:
            return 0.0
        return self.n_include / len(self.records)


def _records_from_rows(rows: Iterable[tuple[str, dict]], source: str) -> list[StudyRecord]:
    """Build records from (location, row-dict) pairs, collecting every bad row."""
    records: list[StudyRecord] = []
    problems: list[str] = []
    seen: set[str] = set()
    for where, row in rows:
        missing = [f for f in REQUIRED_FIELDS if f not in row or row[f] is None]
        if missing:
            problems.append(f"{where}: missing field(s) {', '.join(missing)}")
            continue
        rid = str(row["id"]).strip()
        if not rid:
            problems.append(f"{where}: empty id")
            continue
        if rid in seen:
            problems.append(f"{where}: duplicate id {rid!r}")
            continue
        seen.add(rid)
        try:
            label = ScreeningLabel.parse(row["label"])
        except ValueError as exc:
            problems.append(f"{where} (id {rid!r}): {exc}")
            continue
        title = str(row["title"])
        if not title.strip():
            problems.append(f"{where} (id {rid!r}): title must be nonempty")
            continue
        records.append(StudyRecord(id=rid, title=title, abstract=str(row["abstract"]), human_label=label))
    if problems:
        raise CorpusError(f"invalid corpus rows in {source}:\n  " + "\n  ".join(problems))
    return records


def _detect_format(path: Path) -> str:
    if path.suffix.lower() in (".jsonl", ".ndjson"):
        return "jsonl"
    return "csv"


def ingest_corpus(path: str | Path, format: str = "auto") -> Corpus:
    """Read a corpus file (comma-delimited table or JSON record lines).

    Every row must carry id, title, abstract, and label; labels accept
    0/1 and case-insensitive include/exclude. All offending rows are
    reported together, named by id or line number.
    """
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"corpus file not found: {path}")
    fmt = _detect_format(path) if format == "auto" else format
    if fmt not in ("csv", "jsonl"):
        raise CorpusError(f"unknown corpus format {fmt!r} (expected csv or jsonl)")

    rows: list[tuple[str, dict]] = []
    if fmt == "csv":
        with path.open(newline="", encoding="utf-8") as handle:
            reader = csv.DictReader(handle)
            header = reader.fieldnames or []
            missing = [f for f in REQUIRED_FIELDS if f not in header]
            if missing:
                raise CorpusError(f"{path}: missing column(s) {', '.join(missing)}")
            for row in reader:
                rows.append((f"line {reader.line_num}", row))
    else:
        with path.open(encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorpusError(f"{path}: line {lineno}: invalid JSON ({exc})") from exc
                if not isinstance(obj, dict):
                    raise CorpusError(f"{path}: line {lineno}: expected a JSON object")
                rows.append((f"line {lineno}", obj))

    records = _records_from_rows(rows, str(path))
    provenance = Provenance(source=str(path), ingested_at=datetime.now(timezone.utc).isoformat())
    return Corpus(records=tuple(records), provenance=provenance)


def write_corpus(corpus: Corpus, path: str | Path, format: str = "auto") -> Path:
    """Serialize a corpus so that re-ingesting reproduces identical records."""
    path = Path(path)
    fmt = _detect_format(path) if format == "auto" else format
    if fmt == "csv":
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(REQUIRED_FIELDS)
            for r in corpus.records:
                writer.writerow([r.id, r.title, r.abstract, int(r.human_label)])
    elif fmt == "jsonl":
        with path.open("w", encoding="utf-8") as handle:
            for r in corpus.records:
                row = {"id": r.id, "title": r.title, "abstract": r.abstract, "label": int(r.human_label)}
                handle.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
    else:
        raise CorpusError(f"unknown corpus format {fmt!r} (expected csv or jsonl)")
    return path


@dataclass(frozen=True)
class SplitSpec:
    """How to partition a corpus into train/test.

    In enriched mode the training set's include count is the nearest
    achievable integer to enrichment_target * train_size.
    """

    train_size: int
    seed: int
    mode: str = "stratified"
    enrichment_target: float | None = None

    def validate(self, corpus: Corpus) -> None:
        if self.mode not in ("stratified", "enriched"):
            raise SplitError(f"unknown split mode {self.mode!r}")
        if not 0 < self.train_size < len(corpus):
            raise SplitError(
                f"train_size must satisfy 0 < train_size < corpus size "
                f"(got {self.train_size} for corpus of {len(corpus)})"
            )
        if self.mode == "enriched":
            if self.enrichment_target is None:
                raise SplitError("enriched mode requires enrichment_target")
            if not 0.0 <= self.enrichment_target <= 1.0:
                raise SplitError(f"enrichment_target must be in [0,1], got {self.enrichment_target}")
        elif self.enrichment_target is not None:
            raise SplitError("enrichment_target only applies to enriched mode")


@dataclass(frozen=True)
class SplitCounts:
    total: int
    n_exclude: int
    n_include: int

    @property
    def inclusion_rate(self) -> float:
        return self.n_include / self.total if self.total else 0.0


@dataclass(frozen=True)
class PartitionResult:
    """Disjoint train/test id sets with per-split class counts."""

    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    train_counts: SplitCounts
    test_counts: SplitCounts
    seed: int
    mode: str


def _largest_remainder_takes(class_sizes: list[int], take_total: int) -> list[int]:
    """Proportional integer allocation: floor the quotas, then hand out the
    leftover to the largest fractional remainders (ties to the earlier class)."""
    total = sum(class_sizes)
    quotas = [Fraction(take_total * size, total) for size in class_sizes]
    takes = [int(q) for q in quotas]
    leftover = take_total - sum(takes)
    order = sorted(range(len(class_sizes)), key=lambda i: (-(quotas[i] - takes[i]), i))
    for i in order[:leftover]:
        takes[i] += 1
    return takes


def partition(corpus: Corpus, spec: SplitSpec) -> PartitionResult:
    """Deterministically split a corpus per the given spec.

    Per-class record lists are shuffled with a seeded generator, then the
    training quota for each class is taken from the front. Identical
    (corpus, spec) inputs always produce the identical partition.
    """
    spec.validate(corpus)
    exclude_ids = [r.id for r in corpus.records if r.human_label is ScreeningLabel.EXCLUDE]
    include_ids = [r.id for r in corpus.records if r.human_label is ScreeningLabel.INCLUDE]

    rng = random.Random(spec.seed)
    rng.shuffle(exclude_ids)
    rng.shuffle(include_ids)

    if spec.mode == "stratified":
        take_exclude, take_include = _largest_remainder_takes(
            [len(exclude_ids), len(include_ids)], spec.train_size
        )
    else:
        assert spec.enrichment_target is not None
        take_include = int(math.floor(spec.enrichment_target * spec.train_size + 0.5))
        take_exclude = spec.train_size - take_include
        if take_include > len(include_ids):
            raise SplitError(
                f"enrichment_target {spec.enrichment_target} needs {take_include} include "
                f"records but only {len(include_ids)} are available"
            )
        if take_exclude > len(exclude_ids):
            raise SplitError(
                f"enrichment_target {spec.enrichment_target} leaves {take_exclude} exclude "
                f"slots but only {len(exclude_ids)} records are available"
            )

    train_set = set(exclude_ids[:take_exclude]) | set(include_ids[:take_include])
    # Report ids in corpus order so manifests are stable and auditable.
    train_ids = tuple(r.id for r in corpus.records if r.id in train_set)
    test_ids = tuple(r.id for r in corpus.records if r.id not in train_set)

    by_id = corpus.by_id()

    def counts(ids: tuple[str, ...]) -> SplitCounts:
        n_inc = sum(1 for i in ids if by_id[i].human_label is ScreeningLabel.INCLUDE)
        return SplitCounts(total=len(ids), n_exclude=len(ids) - n_inc, n_include=n_inc)

    return PartitionResult(
        train_ids=train_ids,
        test_ids=test_ids,
        train_counts=counts(train_ids),
        test_counts=counts(test_ids),
        seed=spec.seed,
        mode=spec.mode,
    )


def write_partition_manifest(result: PartitionResult, spec: SplitSpec, path: str | Path) -> Path:
    """Write a replayable JSON manifest: seed, spec, per-split ids and counts."""
    path = Path(path)
    payload = {
        "kind": "partition-manifest",
        "seed": spec.seed,
        "mode": spec.mode,
        "train_size": spec.train_size,
        "enrichment_target": spec.enrichment_target,
        "train": {
            "ids": list(result.train_ids),
            "total": result.train_counts.total,
            "n_exclude": result.train_counts.n_exclude,
            "n_include": result.train_counts.n_include,
        },
        "test": {
            "ids": list(result.test_ids),
            "total": result.test_counts.total,
            "n_exclude": result.test_counts.n_exclude,
            "n_include": result.test_counts.n_include,
        },
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_partition_manifest(path: str | Path) -> PartitionResult:
    path = Path(path)
    if not path.is_file():
        raise SplitError(f"partition manifest not found: {path}")
    payload = json.loads(path.read_text(encoding="utf-8"))
    if payload.get("kind") != "partition-manifest":
        raise SplitError(f"{path} is not a partition manifest")

    def counts(side: dict) -> SplitCounts:
        return SplitCounts(total=side["total"], n_exclude=side["n_exclude"], n_include=side["n_include"])

    result = PartitionResult(
        train_ids=tuple(payload["train"]["ids"]),
        test_ids=tuple(payload["test"]["ids"]),
        train_counts=counts(payload["train"]),
        test_counts=counts(payload["test"]),
        seed=payload["seed"],
        mode=payload["mode"],
    )
    if set(result.train_ids) & set(result.test_ids):
        raise SplitError(f"{path}: train and test ids overlap")
    for ids, side in ((result.train_ids, result.train_counts), (result.test_ids, result.test_counts)):
        if len(ids) != side.total or side.n_exclude + side.n_include != side.total:
            raise SplitError(f"{path}: split counts do not sum to split size")
    return result
