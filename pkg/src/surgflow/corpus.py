"""Corpus construction tooling: validity filtering of presentation-style
videos, text-free crop search, transcript clip splitting, terminology
correction, and label-to-language projection."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .errors import InputError
from .rng import SessionRng

log = logging.getLogger(__name__)

NOISE_DELTA = 10.0 / 255.0


@dataclass(frozen=True)
class TextBox:
    """Axis-aligned pixel rectangle (x0, y0) inclusive to (x1, y1) exclusive."""
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x0 >= self.x1 or self.y0 >= self.y1:
            raise InputError(f"degenerate box: {self}")

    def intersects(self, x0: int, y0: int, x1: int, y1: int) -> bool:
        return not (x1 <= self.x0 or self.x1 <= x0 or
                    y1 <= self.y0 or self.y1 <= y0)


@dataclass
class TranscriptWord:
    text: str
    start_s: float
    end_s: float
    sentence_final: bool = field(default=None)

    def __post_init__(self):
        if self.start_s > self.end_s:
            raise InputError(f"word span reversed: {self}")
        if self.sentence_final is None:
            self.sentence_final = self.text.rstrip().endswith((".", "?", "!"))


@dataclass
class ClipSpan:
    start_s: float
    end_s: float
    text: str


def detect_static(frame: np.ndarray, prev_frame: np.ndarray,
                  noise_delta: float = NOISE_DELTA) -> bool:
    """A frame is valid only when at least half its pixels differ from the
    previous frame by more than the noise threshold (max over channels)."""
    if frame.shape != prev_frame.shape:
        raise InputError("frame shapes differ")
    diff = np.abs(frame.astype(np.float32) - prev_frame.astype(np.float32))
    if diff.ndim == 3:
        diff = diff.max(axis=-1)
    return float(np.mean(diff > noise_delta)) >= 0.5


def _point_free(x: int, y: int, boxes: Sequence[TextBox]) -> bool:
    return all(not b.intersects(x, y, x + 1, y + 1) for b in boxes)


def _expand(x0: int, y0: int, x1: int, y1: int, width: int, height: int,
            boxes: Sequence[TextBox], order: Sequence[int]) -> tuple:
    """Greedily expand each side (in `order`) as far as feasible."""
    for side in order:
        if side == 0:     # left
            limit = 0
            for b in boxes:
                if b.x1 <= x0 and b.intersects(b.x0, y0, b.x1, y1):
                    limit = max(limit, b.x1)
            x0 = limit
        elif side == 1:   # right
            limit = width
            for b in boxes:
                if b.x0 >= x1 and b.intersects(b.x0, y0, b.x1, y1):
                    limit = min(limit, b.x0)
            x1 = limit
        elif side == 2:   # top
            limit = 0
            for b in boxes:
                if b.y1 <= y0 and b.intersects(x0, b.y0, x1, b.y1):
                    limit = max(limit, b.y1)
            y0 = limit
        else:             # bottom
            limit = height
            for b in boxes:
                if b.y0 >= y1 and b.intersects(x0, b.y0, x1, b.y1):
                    limit = min(limit, b.y0)
            y1 = limit
    return x0, y0, x1, y1


def crop_search(width: int, height: int, boxes: Sequence[TextBox],
                min_size: int = 224, iters: int = 256,
                seed: int = 0) -> Optional[TextBox]:
    """Stochastic greedy search for a maximal-area crop avoiding all boxes.

    Seeds a random text-free pixel, greedily expands each side in random
    order, and keeps the best rectangle over `iters` restarts.  Returns
    None (non-valid) when the best crop is smaller than `min_size` in
    either dimension.
    """
    for b in boxes:
        if b.x0 < 0 or b.y0 < 0 or b.x1 > width or b.y1 > height:
            raise InputError(f"box outside frame: {b}")
    if not boxes:
        best = (0, 0, width, height)
    else:
        rng = SessionRng(seed)
        best = None
        best_area = -1
        for _ in range(iters):
            for _ in range(32):
                x = int(rng.integers(0, width))
                y = int(rng.integers(0, height))
                if _point_free(x, y, boxes):
                    break
            else:
                continue
            order = rng.permutation(4)
            rect = _expand(x, y, x + 1, y + 1, width, height, boxes, order)
            area = (rect[2] - rect[0]) * (rect[3] - rect[1])
            if area > best_area:
                best_area = area
                best = rect
        if best is None:
            return None
    x0, y0, x1, y1 = best
    if x1 - x0 < min_size or y1 - y0 < min_size:
        return None
    return TextBox(x0, y0, x1, y1)


def median_filter_validity(signal: np.ndarray, fps: float,
                           window_s: float = 3.0) -> np.ndarray:
    """Sliding boolean median with edge replication; the window length is
    round(window_s * fps), forced odd."""
    if fps <= 0:
        raise InputError("fps must be positive")
    signal = np.asarray(signal, bool)
    w = int(round(window_s * fps))
    if w % 2 == 0:
        w += 1
    if w <= 1 or len(signal) == 0:
        return signal.copy()
    half = w // 2
    padded = np.pad(signal, half, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, w)
    return windows.sum(axis=1) * 2 > w


def split_clips(words: Sequence[TranscriptWord],
                min_s: float = 2.0) -> List[ClipSpan]:
    """Split transcripts into clips after sentence-final punctuation,
    dropping clips shorter than `min_s` seconds."""
    for a, b in zip(words, words[1:]):
        if b.start_s < a.start_s:
            raise InputError("transcript words must be ordered")
    clips = []
    current: List[TranscriptWord] = []
    for word in words:
        current.append(word)
        if word.sentence_final:
            clips.append(current)
            current = []
    if current:
        clips.append(current)
    out = []
    for group in clips:
        start, end = group[0].start_s, group[-1].end_s
        if end - start >= min_s:
            text = " ".join(w.text for w in group)
            out.append(ClipSpan(start, end, text))
    return out


def correct_terms(text: str, table: Dict[str, str]) -> str:
    """Case-insensitive, whole-word, longest-match-first phrase replacement."""
    if not table:
        return text
    for phrase in sorted(table, key=len, reverse=True):
        pattern = r"\b" + re.escape(phrase) + r"\b"
        text = re.sub(pattern, table[phrase], text, flags=re.IGNORECASE)
    return text


def load_term_table(path) -> Dict[str, str]:
    """Two-column UTF-8 TSV of lowercase phrase -> replacement."""
    table = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise InputError(f"bad lookup-table row: {line!r}")
            table[cols[0].lower()] = cols[1]
    return table


TEMPLATES = {
    "cataract_tool_phase": ("The surgeon is using a {TOOL} during the {PHASE} "
                            "phase of cataract surgery."),
    "triplet": "The surgeon is using a {TOOL} to {VERB} the {TARGET}.",
    "phase_only": "The surgeon is in the {PHASE} phase of cataract surgery.",
}


def project_labels(record: Dict[str, object], template_id: str) -> str:
    """Fill a template with the record's label fields; multi-tool records
    join tools with "and"."""
    if template_id not in TEMPLATES:
        raise InputError(f"unknown template: {template_id}")
    template = TEMPLATES[template_id]
    slots = set(re.findall(r"{(\w+)}", template))
    values = {}
    for slot in slots:
        key = slot.lower()
        if key == "tool" and "tools" in record:
            tools = record["tools"]
            if not tools:
                raise InputError("record has empty tools list")
            values[slot] = " and ".join(tools)
            continue
        if key not in record or record[key] in (None, "", []):
            raise InputError(f"record missing slot: {slot}")
        value = record[key]
        values[slot] = " and ".join(value) if isinstance(value, list) else str(value)
    return template.format(**values)


def face_gate(frame: np.ndarray,
              detector: Callable[[np.ndarray], List[TextBox]] | None = None) -> bool:
    """Frames with any face detection are non-valid.  Detector failures are
    fail-closed: the frame is marked non-valid and the error logged."""
    if detector is None:
        return True  # stub detector: no faces
    try:
        detections = detector(frame)
    except Exception:
        log.exception("face detector failed; marking frame non-valid")
        return False
    return len(detections) == 0
