"""Prompt rendering, chat-formatted SFT export, and the training manifest.

Prompts are built from a template with {title}, {abstract}, and {criteria}
placeholders. SFT examples wrap the rendered prompt and the gold decision
token in configurable chat markers and carry a character-level mask boundary
marking where assistant content begins; token-level masking is the trainer's
job.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import ScreeningLabel, StudyRecord
from .errors import ScreenKitError

PLACEHOLDERS = ("title", "abstract", "criteria")
_PLACEHOLDER_RE = re.compile(r"\{(title|abstract|criteria)\}")


class PromptError(ScreenKitError):
    """Raised for invalid templates, markers, or export inputs."""


@dataclass(frozen=True)
class PromptTemplate:
    """Prompt text with exactly one {title}, {abstract}, and {criteria} each."""

    template_text: str
    criteria_text: str

    def __post_init__(self) -> None:
        found = [m.group(1) for m in _PLACEHOLDER_RE.finditer(self.template_text)]
        for name in PLACEHOLDERS:
            count = found.count(name)
            if count != 1:
                raise PromptError(
                    f"template must contain {{{name}}} exactly once, found {count}"
                )

    @classmethod
    def load(cls, template_path: str | Path, criteria_path: str | Path) -> "PromptTemplate":
        template_path, criteria_path = Path(template_path), Path(criteria_path)
        if not template_path.is_file():
            raise PromptError(f"template file not found: {template_path}")
        if not criteria_path.is_file():
            raise PromptError(f"criteria file not found: {criteria_path}")
        return cls(
            template_text=template_path.read_text(encoding="utf-8"),
            criteria_text=criteria_path.read_text(encoding="utf-8").strip(),
        )


def default_template_text() -> str:
    """The template shipped with the package (criteria stay user-supplied)."""
    return resources.files("screenkit").joinpath("templates/default_prompt.txt").read_text("utf-8")


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    abstract_missing: bool


def render_prompt(template: PromptTemplate, record: StudyRecord) -> RenderedPrompt:
    """Substitute the record into the template in a single pass.

    Field values are inserted verbatim and never re-scanned, so literal
    brace sequences inside titles or abstracts are safe.
    """
    values = {
        "title": record.title,
        "abstract": record.abstract,
        "criteria": template.criteria_text,
    }
    text = _PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], template.template_text)
    return RenderedPrompt(text=text, abstract_missing=record.abstract_missing)


@dataclass(frozen=True)
class ChatMarkers:
    """Marker strings delimiting user and assistant turns in the chat string."""

    user_open: str = "<|im_start|>user\n"
    assistant_open: str = "<|im_start|>assistant\n"
    turn_close: str = "<|im_end|>\n"

    def __post_init__(self) -> None:
        markers = (self.user_open, self.assistant_open, self.turn_close)
        if any(not m for m in markers):
            raise PromptError("chat markers must be nonempty")
        if len(set(markers)) != 3:
            raise PromptError("chat markers must be pairwise distinct")


def render_chat(user_text: str, assistant_text: str, markers: ChatMarkers) -> tuple[str, int]:
    """Wrap a user/assistant exchange in markers.

    Returns the chat string and the character offset where assistant content
    begins (the response-masking boundary).
    """
    if not assistant_text:
        raise PromptError("assistant text must be nonempty (gold decision required)")
    prefix = markers.user_open + user_text + markers.turn_close + markers.assistant_open
    return prefix + assistant_text + markers.turn_close, len(prefix)


def parse_chat(chat_text: str, markers: ChatMarkers) -> tuple[str, str]:
    """Recover (user_text, assistant_text) by locating the markers."""
    if not chat_text.startswith(markers.user_open):
        raise PromptError("chat text does not start with the user marker")
    rest = chat_text[len(markers.user_open) :]
    middle = markers.turn_close + markers.assistant_open
    split = rest.find(middle)
    if split < 0:
        raise PromptError("chat text is missing the assistant marker")
    user_text = rest[:split]
    tail = rest[split + len(middle) :]
    if not tail.endswith(markers.turn_close):
        raise PromptError("chat text does not end with the turn-close marker")
    return user_text, tail[: -len(markers.turn_close)]


@dataclass(frozen=True)
class SftExample:
    """One chat-formatted training example for a labeled study."""

    id: str
    user_text: str
    assistant_text: str
    chat_text: str
    mask_boundary: int

    def __post_init__(self) -> None:
        if self.assistant_text not in ("0", "1"):
            raise PromptError(f"assistant text must be '0' or '1', got {self.assistant_text!r}")
        if not self.chat_text[self.mask_boundary :].startswith(self.assistant_text):
            raise PromptError("mask boundary does not point at the assistant content")


def build_sft_example(
    record: StudyRecord, template: PromptTemplate, markers: ChatMarkers
) -> SftExample:
    user_text = render_prompt(template, record).text
    assistant_text = str(int(record.human_label))
    chat_text, boundary = render_chat(user_text, assistant_text, markers)
    return SftExample(
        id=record.id,
        user_text=user_text,
        assistant_text=assistant_text,
        chat_text=chat_text,
        mask_boundary=boundary,
    )


@dataclass(frozen=True)
class ExportSummary:
    path: Path
    total: int
    n_exclude: int
    n_include: int


def export_sft_dataset(
    records: Sequence[StudyRecord],
    template: PromptTemplate,
    markers: ChatMarkers,
    out_path: str | Path,
) -> ExportSummary:
    """Write one JSON line per study: {id, chat_text, mask_boundary, label}.

    Output is byte-deterministic for identical inputs.
    """
    records = list(records)
    if not records:
        raise PromptError("empty training export")
    out_path = Path(out_path)
    n_include = 0
    with out_path.open("w", encoding="utf-8") as handle:
        for record in records:
            example = build_sft_example(record, template, markers)
            n_include += int(record.human_label)
            row = {
                "id": example.id,
                "chat_text": example.chat_text,
                "mask_boundary": example.mask_boundary,
                "label": int(record.human_label),
            }
            handle.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
    return ExportSummary(
        path=out_path, total=len(records), n_exclude=len(records) - n_include, n_include=n_include
    )


def read_sft_dataset(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise PromptError(f"SFT dataset not found: {path}")
    rows = []
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            row = json.loads(line)
            for field in ("id", "chat_text", "mask_boundary", "label"):
                if field not in row:
                    raise PromptError(f"{path}: line {lineno}: missing field {field!r}")
            rows.append(row)
    if not rows:
        raise PromptError(f"{path}: no SFT rows")
    return rows


@dataclass(frozen=True)
class TrainingManifest:
    """Passive description of the fine-tuning run for an external trainer."""

    base_model: str = "LFM2.5-1.2B-Instruct"
    adaptation_method: str = "full fine-tuning"
    optimizer: str = "AdamW (8-bit)"
    learning_rate: float = 2e-5
    warmup_steps: int = 5
    max_steps: int = 320
    weight_decay: float = 0.01
    scheduler: str = "linear"
    per_device_batch: int = 2
    grad_accum: int = 4
    max_seq_len: int = 4096
    response_masking: bool = True
    precision: str = "bf16"

    @property
    def effective_batch(self) -> int:
        return self.per_device_batch * self.grad_accum


def emit_training_manifest(
    overrides: dict | None = None, out_path: str | Path | None = None
) -> tuple[TrainingManifest, dict]:
    """Build the manifest with defaults, applying and logging any overrides."""
    overrides = dict(overrides or {})
    known = {f.name: f.type for f in fields(TrainingManifest)}
    unknown = sorted(set(overrides) - set(known))
    if unknown:
        raise PromptError(f"unknown training manifest field(s): {', '.join(unknown)}")
    manifest = TrainingManifest(**overrides)
    payload = {
        "kind": "training-manifest",
        **{f.name: getattr(manifest, f.name) for f in fields(TrainingManifest)},
        "effective_batch": manifest.effective_batch,
        "overrides": overrides,
    }
    if out_path is not None:
        Path(out_path).write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return manifest, payload
