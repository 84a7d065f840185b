"""Single- and multi-pass screening inference with pluggable transports.

Model output is turned into a decision by a three-step chain: the first '0'
or '1' character wins (digit route); otherwise the earliest case-insensitive
decision keyword wins (keyword route); otherwise the configured majority
class is used (fallback route).

Transports hide the endpoint: a live chat-completion HTTP client, a recording
wrapper that captures request/response pairs, and a replay store that serves
recorded responses so tests and evaluations never need a live model.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import requests

from .corpus import ScreeningLabel
from .errors import ScreenKitError

DEFAULT_KEYWORDS: tuple[tuple[str, ScreeningLabel], ...] = (
    ("include", ScreeningLabel.INCLUDE),
    ("exclude", ScreeningLabel.EXCLUDE),
)

API_KEY_ENV = "SCREENKIT_API_KEY"


class TransportError(ScreenKitError):
    """A request failed; retried, then recorded as a fallback decision."""


class EndpointUnreachable(TransportError):
    """The endpoint cannot be reached at all; the run aborts."""


class ReplayMiss(TransportError):
    """Replay mode has no recorded response; never falls through to a live call."""


class LedgerError(ScreenKitError):
    """Raised for malformed, mismatched, or incomplete run ledgers."""


@dataclass(frozen=True)
class InferenceConfig:
    """Decoding, parsing, and transport policy for screening passes."""

    temperatures: tuple[float, ...] = (0.1, 0.4, 0.8)
    max_new_tokens: int = 8
    greedy: bool = False
    majority_class: ScreeningLabel = ScreeningLabel.EXCLUDE
    request_timeout: float = 30.0
    max_retries: int = 3
    retry_backoff: float = 0.5
    concurrency_limit: int = 4
    keywords: tuple[tuple[str, ScreeningLabel], ...] = DEFAULT_KEYWORDS

    def __post_init__(self) -> None:
        if not self.temperatures:
            raise ScreenKitError("at least one temperature is required")
        if any(t < 0 for t in self.temperatures):
            raise ScreenKitError("temperatures must be nonnegative")
        if self.max_new_tokens < 1:
            raise ScreenKitError("max_new_tokens must be at least 1")
        if self.max_retries < 1:
            raise ScreenKitError("max_retries must be at least 1")
        if self.concurrency_limit < 1:
            raise ScreenKitError("concurrency_limit must be at least 1")

    def snapshot(self) -> dict:
        return {
            "temperatures": list(self.temperatures),
            "max_new_tokens": self.max_new_tokens,
            "greedy": self.greedy,
            "majority_class": int(self.majority_class),
            "request_timeout": self.request_timeout,
            "max_retries": self.max_retries,
            "concurrency_limit": self.concurrency_limit,
            "keywords": [[word, int(label)] for word, label in self.keywords],
        }


def parse_decision(
    raw_text: str,
    majority_class: ScreeningLabel = ScreeningLabel.EXCLUDE,
    keywords: tuple[tuple[str, ScreeningLabel], ...] = DEFAULT_KEYWORDS,
) -> tuple[ScreeningLabel, str]:
    """Total parsing chain: digit, then keyword, then majority-class fallback."""
    for ch in raw_text:
        if ch == "0":
            return ScreeningLabel.EXCLUDE, "digit"
        if ch == "1":
            return ScreeningLabel.INCLUDE, "digit"
    lowered = raw_text.lower()
    best: tuple[int, ScreeningLabel] | None = None
    for word, label in keywords:
        pos = lowered.find(word.lower())
        if pos >= 0 and (best is None or pos < best[0]):
            best = (pos, label)
    if best is not None:
        return best[1], "keyword"
    return majority_class, "fallback"


@dataclass(frozen=True)
class PredictionRecord:
    """One model decision for one study at one temperature."""

    study_id: str
    temperature: float
    raw_text: str
    decision: ScreeningLabel
    parse_route: str
    latency: float
    attempt_count: int
    error: str | None = None

    def to_json(self) -> str:
        payload = {
            "kind": "prediction",
            "study_id": self.study_id,
            "temperature": self.temperature,
            "raw_text": self.raw_text,
            "decision": int(self.decision),
            "parse_route": self.parse_route,
            "latency": self.latency,
            "attempt_count": self.attempt_count,
            "error": self.error,
        }
        return json.dumps(payload, sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_payload(cls, payload: dict) -> "PredictionRecord":
        return cls(
            study_id=payload["study_id"],
            temperature=payload["temperature"],
            raw_text=payload["raw_text"],
            decision=ScreeningLabel(payload["decision"]),
            parse_route=payload["parse_route"],
            latency=payload["latency"],
            attempt_count=payload["attempt_count"],
            error=payload.get("error"),
        )


def fingerprint(prompt: str, temperature: float) -> str:
    """Stable request identity: prompt hash plus the requested temperature."""
    digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()
    return f"{digest}:{temperature:g}"


class Transport(Protocol):
    """Anything that can answer a prompt at a temperature."""

    identity: str

    def complete(self, prompt: str, temperature: float, max_new_tokens: int) -> tuple[str, float]:
        """Return (response text, latency in seconds)."""
        ...


class ChatCompletionTransport:
    """Live client for a chat-completion HTTP endpoint.

    Credentials come from the SCREENKIT_API_KEY environment variable; the
    request carries a single user message, the temperature, and the token cap.
    """

    def __init__(self, endpoint: str, model: str, timeout: float = 30.0) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.timeout = timeout
        self.identity = f"{self.endpoint}#{model}"

    def complete(self, prompt: str, temperature: float, max_new_tokens: int) -> tuple[str, float]:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "max_tokens": max_new_tokens,
        }
        start = time.perf_counter()
        try:
            response = requests.post(
                f"{self.endpoint}/chat/completions",
                headers=headers,
                json=payload,
                timeout=self.timeout,
            )
        except requests.exceptions.ConnectionError as exc:
            raise EndpointUnreachable(f"endpoint unreachable: {exc}") from exc
        except requests.exceptions.RequestException as exc:
            raise TransportError(f"request failed: {exc}") from exc
        latency = time.perf_counter() - start
        if response.status_code != 200:
            raise TransportError(f"endpoint returned HTTP {response.status_code}")
        try:
            text = response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise TransportError(f"malformed completion response: {exc}") from exc
        return str(text), latency


class RecordingTransport:
    """Pass-through wrapper that appends every reply to a replayable store."""

    def __init__(self, inner: Transport, path: str | Path) -> None:
        self.inner = inner
        self.path = Path(path)
        self.identity = inner.identity

    def complete(self, prompt: str, temperature: float, max_new_tokens: int) -> tuple[str, float]:
        text, latency = self.inner.complete(prompt, temperature, max_new_tokens)
        row = {"fingerprint": fingerprint(prompt, temperature), "response": text}
        with self.path.open("a", encoding="utf-8") as handle:
            handle.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
        return text, latency


class ReplayTransport:
    """Serves recorded responses; a missing fingerprint is an error, never a live call."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        if not self.path.is_file():
            raise ReplayMiss(f"replay miss: transport record file not found: {self.path}")
        self.responses: dict[str, str] = {}
        with self.path.open(encoding="utf-8") as handle:
            for line in handle:
                if not line.strip():
                    continue
                row = json.loads(line)
                self.responses[row["fingerprint"]] = row["response"]
        self.identity = f"replay:{self.path.name}"
        self.queried: list[str] = []

    def complete(self, prompt: str, temperature: float, max_new_tokens: int) -> tuple[str, float]:
        key = fingerprint(prompt, temperature)
        self.queried.append(key)
        if key not in self.responses:
            raise ReplayMiss(f"replay miss: no recorded response for fingerprint {key}")
        return self.responses[key], 0.0


def record_response(path: str | Path, prompt: str, temperature: float, response: str) -> None:
    """Append one synthetic transport record (useful for building replay fixtures)."""
    row = {"fingerprint": fingerprint(prompt, temperature), "response": response}
    with Path(path).open("a", encoding="utf-8") as handle:
        handle.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


@dataclass
class RunLedger:
    """Everything a completed run produced, keyed by (study id, temperature)."""

    run_id: str
    endpoint: str
    config: dict
    records: list[PredictionRecord] = field(default_factory=list)
    complete: bool = False

    @property
    def temperatures(self) -> tuple[float, ...]:
        return tuple(self.config["temperatures"])

    def item_ids(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for record in self.records:
            seen.setdefault(record.study_id, None)
        return tuple(seen)

    def validate_complete(self) -> None:
        """Every (study_id, temperature) pair must appear exactly once."""
        counts: dict[tuple[str, float], int] = {}
        for record in self.records:
            key = (record.study_id, record.temperature)
            counts[key] = counts.get(key, 0) + 1
        duplicates = [k for k, c in counts.items() if c > 1]
        if duplicates:
            raise LedgerError(f"duplicate ledger records for {duplicates[:5]}")
        ids = self.item_ids()
        missing = [
            (sid, t) for sid in ids for t in self.temperatures if (sid, t) not in counts
        ]
        if missing:
            raise LedgerError(f"incomplete ledger: missing {len(missing)} records, e.g. {missing[:5]}")

    def records_for(self, temperature: float) -> list[PredictionRecord]:
        return [r for r in self.records if r.temperature == temperature]

    def decision_columns(self, item_ids: Sequence[str]) -> dict[str, list[int]]:
        """Per-temperature decision vectors aligned to item_ids (complete runs only)."""
        self.validate_complete()
        by_key = {(r.study_id, r.temperature): r for r in self.records}
        columns: dict[str, list[int]] = {}
        for t in self.temperatures:
            try:
                columns[f"T={t:g}"] = [int(by_key[(sid, t)].decision) for sid in item_ids]
            except KeyError as exc:
                raise LedgerError(f"ledger has no record for {exc.args[0]}") from None
        return columns


class LedgerWriter:
    """Append-only JSONL writer; each record is flushed so aborts keep progress."""

    def __init__(self, path: str | Path, append: bool = False) -> None:
        self.path = Path(path)
        self._handle = self.path.open("a" if append else "w", encoding="utf-8")

    def _write(self, payload: dict) -> None:
        self._handle.write(json.dumps(payload, sort_keys=True, ensure_ascii=False) + "\n")
        self._handle.flush()

    def write_header(self, run_id: str, endpoint: str, config: dict) -> None:
        self._write({"kind": "header", "run_id": run_id, "endpoint": endpoint, "config": config})

    def write_record(self, record: PredictionRecord) -> None:
        self._handle.write(record.to_json() + "\n")
        self._handle.flush()

    def write_complete(self, run_id: str, n_records: int) -> None:
        self._write({"kind": "complete", "run_id": run_id, "n_records": n_records})

    def close(self) -> None:
        self._handle.close()


def load_ledger(path: str | Path) -> RunLedger:
    path = Path(path)
    if not path.is_file():
        raise LedgerError(f"ledger not found: {path}")
    header = None
    records: list[PredictionRecord] = []
    complete = False
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            payload = json.loads(line)
            kind = payload.get("kind")
            if kind == "header":
                header = payload
            elif kind == "prediction":
                records.append(PredictionRecord.from_payload(payload))
            elif kind == "complete":
                complete = True
            else:
                raise LedgerError(f"{path}: line {lineno}: unknown ledger line kind {kind!r}")
    if header is None:
        raise LedgerError(f"{path}: ledger has no header line")
    return RunLedger(
        run_id=header["run_id"],
        endpoint=header["endpoint"],
        config=header["config"],
        records=records,
        complete=complete,
    )


def compute_run_id(item_ids: Sequence[str], config: InferenceConfig, endpoint: str) -> str:
    """Deterministic run identity from the items, config, and endpoint."""
    basis = json.dumps(
        {"items": list(item_ids), "config": config.snapshot(), "endpoint": endpoint},
        sort_keys=True,
    )
    return hashlib.sha256(basis.encode("utf-8")).hexdigest()[:12]


def _query_one(
    study_id: str,
    prompt: str,
    pass_temperature: float,
    request_temperature: float,
    config: InferenceConfig,
    transport: Transport,
) -> PredictionRecord:
    last_error: TransportError | None = None
    for attempt in range(1, config.max_retries + 1):
        try:
            text, latency = transport.complete(prompt, request_temperature, config.max_new_tokens)
        except ReplayMiss:
            raise
        except EndpointUnreachable:
            if attempt == config.max_retries:
                raise
            time.sleep(config.retry_backoff * 2 ** (attempt - 1))
        except TransportError as exc:
            last_error = exc
            if attempt == config.max_retries:
                break
            time.sleep(config.retry_backoff * 2 ** (attempt - 1))
        else:
            decision, route = parse_decision(text, config.majority_class, config.keywords)
            return PredictionRecord(
                study_id=study_id,
                temperature=pass_temperature,
                raw_text=text,
                decision=decision,
                parse_route=route,
                latency=latency,
                attempt_count=attempt,
            )
    return PredictionRecord(
        study_id=study_id,
        temperature=pass_temperature,
        raw_text="",
        decision=config.majority_class,
        parse_route="fallback",
        latency=0.0,
        attempt_count=config.max_retries,
        error=str(last_error),
    )


def run_pass(
    items: Sequence[tuple[str, str]],
    temperature: float,
    config: InferenceConfig,
    transport: Transport,
    on_record: Callable[[PredictionRecord], None] | None = None,
) -> list[PredictionRecord]:
    """Query every (study_id, prompt) item once at one temperature.

    Requests run concurrently up to the configured limit, but records are
    emitted in item order so output is deterministic. Exhausted retries turn
    into majority-class fallback records with an error annotation; an
    unreachable endpoint or a replay miss aborts the pass.
    """
    if not items:
        return []
    request_temperature = 0.0 if config.greedy else temperature
    records: list[PredictionRecord] = []
    workers = min(config.concurrency_limit, len(items))
    stop = threading.Event()

    def guarded(sid: str, prompt: str) -> PredictionRecord:
        # A fatal failure stops later items from touching the transport at
        # all, so a resumed run re-queries only pairs that never completed.
        if stop.is_set():
            raise EndpointUnreachable("pass aborted by an earlier failure")
        try:
            return _query_one(sid, prompt, temperature, request_temperature, config, transport)
        except (EndpointUnreachable, ReplayMiss):
            stop.set()
            raise

    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = [executor.submit(guarded, sid, prompt) for sid, prompt in items]
        try:
            for future in futures:
                record = future.result()
                records.append(record)
                if on_record is not None:
                    on_record(record)
        except Exception:
            for future in futures:
                future.cancel()
            raise
    return records


def run_multi_pass(
    items: Sequence[tuple[str, str]],
    config: InferenceConfig,
    transport: Transport,
    ledger_path: str | Path | None = None,
    resume: bool = False,
) -> RunLedger:
    """One complete pass per configured temperature, serialized incrementally.

    With resume=True and an existing ledger file, pairs already on disk are
    not re-queried; only the missing (study_id, temperature) records are
    fetched and appended.
    """
    ids = [sid for sid, _ in items]
    if len(set(ids)) != len(ids):
        raise LedgerError("duplicate study ids in inference items")
    run_id = compute_run_id(ids, config, transport.identity)
    ledger = RunLedger(run_id=run_id, endpoint=transport.identity, config=config.snapshot())

    done: set[tuple[str, float]] = set()
    writer: LedgerWriter | None = None
    if ledger_path is not None:
        resuming = resume and Path(ledger_path).is_file()
        if resuming:
            previous = load_ledger(ledger_path)
            if previous.run_id != run_id:
                raise LedgerError(
                    f"resume mismatch: ledger {ledger_path} was produced by run "
                    f"{previous.run_id}, current inputs give {run_id}"
                )
            ledger.records.extend(previous.records)
            done = {(r.study_id, r.temperature) for r in previous.records}
            writer = LedgerWriter(ledger_path, append=True)
        else:
            writer = LedgerWriter(ledger_path, append=False)
            writer.write_header(run_id, transport.identity, config.snapshot())

    def keep(record: PredictionRecord) -> None:
        ledger.records.append(record)
        if writer is not None:
            writer.write_record(record)

    try:
        for temperature in config.temperatures:
            pending = [(sid, prompt) for sid, prompt in items if (sid, temperature) not in done]
            run_pass(pending, temperature, config, transport, on_record=keep)
        ledger.validate_complete()
        ledger.complete = True
        if writer is not None:
            writer.write_complete(run_id, len(ledger.records))
    finally:
        if writer is not None:
            writer.close()
    return ledger
