"""Caption requests against an external video-to-text service, and checks
that a caption is long and camera-aware enough to keep."""
from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Optional, Sequence

from .services import MalformedResponse, ServiceClient, encode_frames


class EmptyCaption(ValueError):
    pass


@dataclass(frozen=True)
class CaptionRecord:
    clip_id: str
    text: str
    word_count: int
    camera_terms_found: tuple[str, ...] = ()
    language_tag: str = "en"
    model_id: str = ""
    attempts: int = 1

    def __post_init__(self):
        if self.word_count != count_words(self.text):
            raise ValueError("word_count must equal the whitespace token count of text")


def count_words(text: str) -> int:
    return len(text.split())


@lru_cache(maxsize=None)
def default_vocabulary() -> tuple[str, ...]:
    text = resources.files("clipcurate").joinpath("data/camera_vocabulary.txt").read_text("utf-8")
    return tuple(parse_vocabulary(text))


def parse_vocabulary(text: str) -> list[str]:
    out = []
    for line in text.splitlines():
        s = line.strip()
        if s and not s.startswith("#"):
            out.append(s.lower())
    return out


def load_vocabulary(path: Optional[str]) -> tuple[str, ...]:
    if not path:
        return default_vocabulary()
    with open(path, "r", encoding="utf-8") as f:
        return tuple(parse_vocabulary(f.read()))


def _term_pattern(term: str) -> str:
    # inflections of the last word: pan/pans/panned/panning, dolly/dollies
    words = term.split()
    *head, last = words
    if last.endswith("y") and len(last) > 1:
        tail = re.escape(last[:-1]) + r"(?:y|ies|ied|ying)"
    else:
        tail = re.escape(last) + r"(?:s|es|ed|ing|" + re.escape(last[-1]) + r"ed|" + re.escape(last[-1]) + r"ing)?"
    parts = [re.escape(w) for w in head] + [tail]
    return r"\b" + r"\s+".join(parts) + r"\b"


@lru_cache(maxsize=64)
def _compiled(vocabulary: tuple[str, ...]):
    return [(term, re.compile(_term_pattern(term), re.IGNORECASE)) for term in vocabulary]


def find_camera_terms(text: str, vocabulary: Sequence[str] = ()) -> tuple[str, ...]:
    """Vocabulary terms present in ``text`` (word-boundary anchored, in vocabulary order)."""
    vocab = tuple(vocabulary) or default_vocabulary()
    return tuple(term for term, rx in _compiled(vocab) if rx.search(text))


@dataclass(frozen=True)
class CaptionConfig:
    min_words: int = 80
    target_language: str = "en"
    vocabulary: tuple[str, ...] = ()
    template_id: str = "spatiotemporal-v1"
    min_frames: int = 4
    max_frames: int = 32


@dataclass(frozen=True)
class ValidationReport:
    clip_id: str
    passed: bool
    flags: tuple[str, ...]
    word_count: int
    camera_terms_found: tuple[str, ...] = ()


def validate_caption(record: CaptionRecord, cfg: CaptionConfig = CaptionConfig()) -> ValidationReport:
    flags = []
    if record.word_count < cfg.min_words:
        flags.append("too_short")
    terms = find_camera_terms(record.text, cfg.vocabulary)
    if not terms:
        flags.append("no_camera_terms")
    lang = (record.language_tag or "").split("-")[0].lower()
    if lang != cfg.target_language.split("-")[0].lower():
        flags.append("non_target_language")
    return ValidationReport(record.clip_id, not flags, tuple(flags), record.word_count, terms)


class CaptionClient(ServiceClient):
    """Client for the caption service.

    Request ``{clip_id, template_id, frames: <frame-set payload, RGB>}``;
    response ``{text, model_id[, language]}``. Retries three times with
    1 s / 4 s backoff by default.
    """

    def __init__(self, url: str, *, attempts: int = 3, **kw):
        super().__init__(url, attempts=attempts, **kw)


def request_caption(client: CaptionClient, frames, template_id: str = "spatiotemporal-v1",
                    clip_id: str = "", cfg: CaptionConfig = CaptionConfig()) -> CaptionRecord:
    frames = list(frames)
    if not cfg.min_frames <= len(frames) <= cfg.max_frames:
        raise ValueError(f"need {cfg.min_frames}-{cfg.max_frames} frames, got {len(frames)}")
    payload = {"clip_id": clip_id, "template_id": template_id, "frames": encode_frames(frames, color=True)}
    body = client.post_json(payload)
    text = body.get("text")
    if text is None:
        raise MalformedResponse("response has no 'text'")
    if not isinstance(text, str):
        raise MalformedResponse("'text' is not a string")
    if not text.strip():
        raise EmptyCaption(f"empty caption for {clip_id or 'clip'}")
    return CaptionRecord(
        clip_id=clip_id,
        text=text,
        word_count=count_words(text),
        camera_terms_found=find_camera_terms(text, cfg.vocabulary),
        language_tag=str(body.get("language") or cfg.target_language),
        model_id=str(body.get("model_id") or ""),
        attempts=client.last_attempts,
    )
