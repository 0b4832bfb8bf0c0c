"""Built-in 5x7 bitmap font.

Each glyph is seven rows of five bits, most significant bit leftmost.  Glyphs are drawn at an
integer scale; at the default scale 2 a glyph is 10x14 pixels on a 12 pixel advance.
"""

from __future__ import annotations

import numpy as np

GLYPH_W, GLYPH_H = 5, 7

_ROWS = {
    " ": "00 00 00 00 00 00 00", "!": "04 04 04 04 04 00 04", '"': "0A 0A 0A 00 00 00 00",
    "#": "0A 0A 1F 0A 1F 0A 0A", "$": "04 0F 14 0E 05 1E 04", "%": "18 19 02 04 08 13 03",
    "&": "0C 12 14 08 15 12 0D", "'": "0C 04 08 00 00 00 00", "(": "02 04 08 08 08 04 02",
    ")": "08 04 02 02 02 04 08", "*": "00 04 15 0E 15 04 00", "+": "00 04 04 1F 04 04 00",
    ",": "00 00 00 00 0C 04 08", "-": "00 00 00 1F 00 00 00", ".": "00 00 00 00 00 0C 0C",
    "/": "00 01 02 04 08 10 00", "0": "0E 11 13 15 19 11 0E", "1": "04 0C 04 04 04 04 0E",
    "2": "0E 11 01 02 04 08 1F", "3": "1F 02 04 02 01 11 0E", "4": "02 06 0A 12 1F 02 02",
    "5": "1F 10 1E 01 01 11 0E", "6": "06 08 10 1E 11 11 0E", "7": "1F 01 02 04 08 08 08",
    "8": "0E 11 11 0E 11 11 0E", "9": "0E 11 11 0F 01 02 0C", ":": "00 0C 0C 00 0C 0C 00",
    ";": "00 0C 0C 00 0C 04 08", "<": "02 04 08 10 08 04 02", "=": "00 00 1F 00 1F 00 00",
    ">": "08 04 02 01 02 04 08", "?": "0E 11 01 02 04 00 04", "@": "0E 11 01 0D 15 15 0E",
    "A": "0E 11 11 11 1F 11 11", "B": "1E 11 11 1E 11 11 1E", "C": "0E 11 10 10 10 11 0E",
    "D": "1C 12 11 11 11 12 1C", "E": "1F 10 10 1E 10 10 1F", "F": "1F 10 10 1E 10 10 10",
    "G": "0E 11 10 17 11 11 0F", "H": "11 11 11 1F 11 11 11", "I": "0E 04 04 04 04 04 0E",
    "J": "07 02 02 02 02 12 0C", "K": "11 12 14 18 14 12 11", "L": "10 10 10 10 10 10 1F",
    "M": "11 1B 15 15 11 11 11", "N": "11 11 19 15 13 11 11", "O": "0E 11 11 11 11 11 0E",
    "P": "1E 11 11 1E 10 10 10", "Q": "0E 11 11 11 15 12 0D", "R": "1E 11 11 1E 14 12 11",
    "S": "0F 10 10 0E 01 01 1E", "T": "1F 04 04 04 04 04 04", "U": "11 11 11 11 11 11 0E",
    "V": "11 11 11 11 11 0A 04", "W": "11 11 11 15 15 15 0A", "X": "11 11 0A 04 0A 11 11",
    "Y": "11 11 11 0A 04 04 04", "Z": "1F 01 02 04 08 10 1F", "[": "0E 08 08 08 08 08 0E",
    "\\": "00 10 08 04 02 01 00", "]": "0E 02 02 02 02 02 0E", "^": "04 0A 11 00 00 00 00",
    "_": "00 00 00 00 00 00 1F", "`": "08 04 02 00 00 00 00", "a": "00 00 0E 01 0F 11 0F",
    "b": "10 10 16 19 11 11 1E", "c": "00 00 0E 10 10 11 0E", "d": "01 01 0D 13 11 11 0F",
    "e": "00 00 0E 11 1F 10 0E", "f": "06 09 08 1C 08 08 08", "g": "00 0F 11 11 0F 01 0E",
    "h": "10 10 16 19 11 11 11", "i": "04 00 0C 04 04 04 0E", "j": "02 00 06 02 02 12 0C",
    "k": "10 10 12 14 18 14 12", "l": "0C 04 04 04 04 04 0E", "m": "00 00 1A 15 15 11 11",
    "n": "00 00 16 19 11 11 11", "o": "00 00 0E 11 11 11 0E", "p": "00 00 1E 11 1E 10 10",
    "q": "00 00 0D 13 0F 01 01", "r": "00 00 16 19 10 10 10", "s": "00 00 0E 10 0E 01 1E",
    "t": "08 08 1C 08 08 09 06", "u": "00 00 11 11 11 13 0D", "v": "00 00 11 11 11 0A 04",
    "w": "00 00 11 11 15 15 0A", "x": "00 00 11 0A 04 0A 11", "y": "00 00 11 11 0F 01 0E",
    "z": "00 00 1F 02 04 08 1F", "{": "02 04 04 08 04 04 02", "|": "04 04 04 04 04 04 04",
    "}": "08 04 04 02 04 04 08", "~": "00 00 08 15 02 00 00",
    # math symbols used by the formula renderer
    "\\alpha": "00 00 09 15 12 12 0D", "\\beta": "0E 11 1E 11 11 1E 10",
    "\\pi": "00 00 1F 0A 0A 0A 0A", "\\theta": "0E 11 11 1F 11 11 0E",
    "\\sum": "1F 10 08 04 08 10 1F",
}


def _bitmap(rows: str) -> np.ndarray:
    bits = [int(r, 16) for r in rows.split()]
    assert len(bits) == GLYPH_H
    return np.array([[(b >> (GLYPH_W - 1 - c)) & 1 for c in range(GLYPH_W)] for b in bits], dtype=bool)


GLYPHS: dict[str, np.ndarray] = {k: _bitmap(v) for k, v in _ROWS.items()}
TEXT_CHARS = "".join(chr(c) for c in range(32, 127))


def glyph(symbol: str, scale: int = 2) -> np.ndarray:
    g = GLYPHS[symbol]
    return np.kron(g, np.ones((scale, scale), dtype=bool)) if scale != 1 else g


def advance(scale: int = 2) -> int:
    return (GLYPH_W + 1) * scale


def text_width(s: str, scale: int = 2) -> int:
    return max(0, len(s) * advance(scale) - scale)


def draw_symbol(canvas: np.ndarray, x: int, y: int, symbol: str, scale: int = 2, ink: int = 0) -> None:
    g = glyph(symbol, scale)
    h, w = g.shape
    region = canvas[y:y + h, x:x + w]
    region[g[: region.shape[0], : region.shape[1]]] = ink


def draw_text(canvas: np.ndarray, x: int, y: int, s: str, scale: int = 2, ink: int = 0) -> int:
    """Draw ``s`` with its top-left glyph cell at (x, y); returns the x after the last advance."""
    for ch in s:
        draw_symbol(canvas, x, y, ch, scale, ink)
        x += advance(scale)
    return x
