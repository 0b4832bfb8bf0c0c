"""Layout markup and the character-level token vocabulary.

Layout markup is one element per line, ``tag<TAB>x1,y1,x2,y2``, in reading order.  Spotting output
uses the same line shape with the tag fixed to ``line`` followed by ``<sep>`` and the line text.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

from .types import (BOX_QUERY_PREFIX, DEFAULT_FRAME, PROMPT_TEXT, BoundingBox, ElementType, InvalidBox,
                    LayoutElement, LayoutSequence, Prompt, PromptKind)

BOS, EOS, PAD, SEP = "<s>", "</s>", "<pad>", "<sep>"
SPECIALS = (BOS, EOS, PAD, SEP)
BOS_ID, EOS_ID, PAD_ID, SEP_ID = 0, 1, 2, 3
LINE_TAG = "line"

MARKUP_TOKENS = (
    "<table>", "</table>", "<thead>", "</thead>", "<tbody>", "</tbody>", "<tr>", "</tr>",
    "<td>", "</td>", "<th>", "</th>",
    '<td colspan="2">', '<td colspan="3">', '<td colspan="4">',
    '<td rowspan="2">', '<td rowspan="3">', '<td rowspan="4">',
    "\\frac", "\\sum", "\\int", "\\prod", "\\sqrt", "\\left", "\\right", "\\cdot", "\\times",
    "\\leq", "\\geq", "\\neq", "\\infty", "\\partial", "\\alpha", "\\beta", "\\gamma", "\\delta",
    "\\pi", "\\theta", "\\lambda", "\\mu", "\\sigma", "\\log", "\\sin", "\\cos", "\\exp",
)
CHARSET = string.printable[:95] + "\t\n"  # printable ASCII plus tab/newline, no \r\x0b\x0c


class UntokenizableInput(ValueError):
    def __init__(self, offset: int, char: str):
        super().__init__(f"cannot tokenize {char!r} at byte offset {offset}")
        self.offset = offset


@dataclass
class TokenSequence:
    ids: list[int]
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def complete(self) -> bool:
        return bool(self.ids) and self.ids[-1] == EOS_ID


class Vocabulary:
    """Immutable token ↔ id bijection with greedy longest-match text encoding."""

    def __init__(self, tokens: Sequence[str]):
        tokens = tuple(tokens)
        if tokens[:4] != SPECIALS:
            raise ValueError("the first four tokens must be <s>, </s>, <pad>, <sep>")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self._tokens = tokens
        self._ids = {t: i for i, t in enumerate(tokens)}
        # BOS/EOS/PAD are framing only and never matched inside text
        by_first: dict[str, list[str]] = {}
        for t in tokens:
            if t in (BOS, EOS, PAD) or not t:
                continue
            by_first.setdefault(t[0], []).append(t)
        self._by_first = {c: sorted(ts, key=len, reverse=True) for c, ts in by_first.items()}

    @classmethod
    def default(cls) -> "Vocabulary":
        tokens = list(SPECIALS)
        tokens += [t.value for t in ElementType] + [LINE_TAG]
        tokens += [PROMPT_TEXT[k] for k in PromptKind if k is not PromptKind.BoxQuery] + [BOX_QUERY_PREFIX]
        tokens += list(MARKUP_TOKENS)
        tokens += list(CHARSET)
        return cls(tokens)

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    def __len__(self) -> int:
        return len(self._tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    def id_of(self, token: str) -> int:
        return self._ids[token]

    def token_of(self, i: int) -> str:
        return self._tokens[i]

    def tokenize(self, s: str) -> list[int]:
        out = []
        i, n = 0, len(s)
        while i < n:
            for t in self._by_first.get(s[i], ()):
                if s.startswith(t, i):
                    out.append(self._ids[t])
                    i += len(t)
                    break
            else:
                raise UntokenizableInput(len(s[:i].encode("utf-8")), s[i])
        return out

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    def dumps(self) -> str:
        # one JSON-quoted token per line so that whitespace tokens survive; id = line number
        return "".join(json.dumps(t) + "\n" for t in self._tokens)

    @classmethod
    def loads(cls, text: str) -> "Vocabulary":
        return cls([json.loads(line) for line in text.splitlines() if line])

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocabulary":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def encode_text(v: Vocabulary, s: str) -> TokenSequence:
    return TokenSequence([BOS_ID] + v.tokenize(s) + [EOS_ID])


def decode_tokens(v: Vocabulary, ids: Iterable[int]) -> str:
    """Concatenate token strings, skipping BOS/PAD and stopping at EOS."""
    parts = []
    for i in ids:
        if i == EOS_ID:
            break
        if i in (BOS_ID, PAD_ID):
            continue
        parts.append(v.token_of(i))
    return "".join(parts)


def encode_prompt(v: Vocabulary, prompt: Prompt) -> list[int]:
    """Decoder prefix for a prompt: BOS, prompt tokens, SEP."""
    return [BOS_ID] + v.tokenize(prompt.text) + [SEP_ID]


# ---------------------------------------------------------------- layout markup

@dataclass(frozen=True)
class ParseWarning:
    kind: str  # MalformedLine | UnknownType | InvalidBox
    line_no: int
    line: str
    message: str = ""

    def __str__(self) -> str:
        return f"{self.kind} at line {self.line_no}: {self.line[:60]!r} {self.message}".rstrip()


def _fmt_box(b: BoundingBox) -> str:
    return f"{b.x1},{b.y1},{b.x2},{b.y2}"


def serialize_layout(seq: LayoutSequence) -> str:
    return "\n".join(f"{e.etype.value}\t{_fmt_box(e.bbox)}" for e in seq)


def _parse_box(coords: str, frame_size: int):
    parts = coords.split(",")
    if len(parts) != 4 or not all(p.isascii() and p.isdigit() and len(p) <= 6 for p in parts):
        return None
    return [int(p) for p in parts]


def _as_text(text: Union[str, bytes]) -> str:
    if isinstance(text, (bytes, bytearray)):
        return bytes(text).decode("utf-8", errors="replace")
    return text


def parse_layout(text: Union[str, bytes], frame_size: int = DEFAULT_FRAME
                 ) -> tuple[LayoutSequence, list[ParseWarning]]:
    """Recovering parser for layout markup; never raises on malformed input."""
    text = _as_text(text)
    items: list[tuple[ElementType, BoundingBox]] = []
    warnings: list[ParseWarning] = []
    for no, line in enumerate(text.split("\n")):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            warnings.append(ParseWarning("MalformedLine", no, line, "expected tag<TAB>box"))
            continue
        tag, coords = parts
        try:
            etype = ElementType(tag)
        except ValueError:
            warnings.append(ParseWarning("UnknownType", no, line))
            continue
        box = _parse_box(coords, frame_size)
        if box is None:
            warnings.append(ParseWarning("MalformedLine", no, line, "expected four integers"))
            continue
        try:
            items.append((etype, BoundingBox(*box, frame_size=frame_size)))
        except InvalidBox as e:
            warnings.append(ParseWarning("InvalidBox", no, line, str(e)))
    return LayoutSequence.from_items(items), warnings


def serialize_spotting(lines: Sequence[tuple[BoundingBox, str]]) -> str:
    return "\n".join(f"{LINE_TAG}\t{_fmt_box(b)}{SEP}{t}" for b, t in lines)


def parse_spotting(text: Union[str, bytes], frame_size: int = DEFAULT_FRAME
                   ) -> tuple[list[tuple[BoundingBox, str]], list[ParseWarning]]:
    text = _as_text(text)
    out: list[tuple[BoundingBox, str]] = []
    warnings: list[ParseWarning] = []
    for no, line in enumerate(text.split("\n")):
        if not line.strip():
            continue
        head, sep, body = line.partition(SEP)
        parts = head.split("\t")
        if not sep or len(parts) != 2 or parts[0] != LINE_TAG:
            warnings.append(ParseWarning("MalformedLine", no, line, "expected line<TAB>box<sep>text"))
            continue
        box = _parse_box(parts[1], frame_size)
        if box is None:
            warnings.append(ParseWarning("MalformedLine", no, line, "expected four integers"))
            continue
        try:
            out.append((BoundingBox(*box, frame_size=frame_size), body))
        except InvalidBox as e:
            warnings.append(ParseWarning("InvalidBox", no, line, str(e)))
    return out, warnings


__all__ = [
    "Vocabulary", "TokenSequence", "UntokenizableInput", "ParseWarning",
    "encode_text", "decode_tokens", "encode_prompt",
    "serialize_layout", "parse_layout", "serialize_spotting", "parse_spotting",
    "BOS_ID", "EOS_ID", "PAD_ID", "SEP_ID", "SEP", "LINE_TAG", "CHARSET",
]
