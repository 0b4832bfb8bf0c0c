"""Template grammar for small inline formulas and their 2-D bitmap rendering.

A formula is a list of parts: atoms with an optional one-character super/subscript, single-character
fractions, and binary operators.  Base symbols use the scale-2 font; scripts and fraction parts use
the scale-1 font so that the whole formula fits a text line.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .font import draw_symbol

VARS = "abcnxyzk"
GREEK = ("\\alpha", "\\beta", "\\pi", "\\theta")
OPS = "+-="
UNDERLINE_ROW = 16


@dataclass(frozen=True)
class Part:
    kind: str  # atom | frac | op
    symbol: str
    sup: Optional[str] = None
    sub: Optional[str] = None
    den: Optional[str] = None

    def latex(self) -> str:
        if self.kind == "frac":
            return f"\\frac{{{self.symbol}}}{{{self.den}}}"
        s = self.symbol
        if self.sup is not None:
            s += f"^{{{self.sup}}}"
        if self.sub is not None:
            s += f"_{{{self.sub}}}"
        return s

    def width(self) -> int:
        if self.kind == "frac":
            return 7
        w = 10
        if self.sup is not None or self.sub is not None:
            w += 1 + 5
        return w


@dataclass(frozen=True)
class Formula:
    parts: tuple[Part, ...]

    def latex(self) -> str:
        return "".join(p.latex() for p in self.parts)

    def source(self) -> str:
        return f"${self.latex()}$"

    def width(self) -> int:
        return sum(p.width() for p in self.parts) + 2 * (len(self.parts) - 1)

    def draw(self, canvas: np.ndarray, x: int, y: int, ink: int = 0) -> None:
        # formulas are underlined so that a bare variable differs from a plain letter
        canvas[y + UNDERLINE_ROW, x:x + self.width()] = ink
        for p in self.parts:
            if p.kind == "frac":
                draw_symbol(canvas, x + 1, y, p.symbol, 1, ink)
                canvas[y + 7, x:x + 7] = ink
                draw_symbol(canvas, x + 1, y + 8, p.den, 1, ink)
            else:
                draw_symbol(canvas, x, y, p.symbol, 2, ink)
                if p.sup is not None:
                    draw_symbol(canvas, x + 11, y, p.sup, 1, ink)
                if p.sub is not None:
                    draw_symbol(canvas, x + 11, y + 8, p.sub, 1, ink)
            x += p.width() + 2


def random_formula(rng: random.Random, max_width: int) -> Optional[Formula]:
    """Sample a formula no wider than ``max_width`` pixels (None if even the smallest won't fit)."""
    for _ in range(8):
        parts: list[Part] = []
        if rng.random() < 0.15:
            parts.append(Part("atom", "\\sum", sub=rng.choice("ikn")))
        n_terms = rng.randint(1, 3)
        for t in range(n_terms):
            if t:
                parts.append(Part("op", rng.choice(OPS)))
            r = rng.random()
            if r < 0.2:
                parts.append(Part("frac", rng.choice(VARS + "123"), den=rng.choice(VARS + "23456")))
            else:
                sym = rng.choice(GREEK) if r < 0.35 else rng.choice(VARS)
                q = rng.random()
                if q < 0.4:
                    parts.append(Part("atom", sym, sup=rng.choice("23n")))
                elif q < 0.6:
                    parts.append(Part("atom", sym, sub=rng.choice("0123ik")))
                else:
                    parts.append(Part("atom", sym))
        f = Formula(tuple(parts))
        if f.width() <= max_width:
            return f
    return None
