"""Self-verification suites: numeric gradients, grammar round trips and fuzzing, metric oracles.

Each suite returns a :class:`CheckResult`; ``run_all`` backs the ``check`` subcommand.
"""

from __future__ import annotations

import itertools
import random
import time
from dataclasses import dataclass
from typing import Callable, Optional

from .grammar import parse_layout, serialize_layout
from .metrics import Node, edit_distance, teds, tree_edit_distance
from .types import BoundingBox, ElementType, LayoutSequence


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as e:  # a crashing suite is a failing suite
        ok, detail = False, f"{type(e).__name__}: {e}"
    return CheckResult(name, ok, detail, time.perf_counter() - t0)


# ---------------------------------------------------------------- gradients

def gradient_suite(seed: int = 0, n_configs: int = 3, tol: float = 1e-4) -> CheckResult:
    from .model.gradcheck import finite_difference_check, random_micro_config

    def run():
        errs = []
        for k in range(n_configs):
            cfg = random_micro_config(seed * 1000 + k)
            errs.append(finite_difference_check(cfg, seed * 1000 + k))
        worst = max(errs)
        return worst < tol, f"{n_configs} micro configs, max relative error {worst:.2e} (limit {tol:g})"

    return _timed("gradient", run)


# ---------------------------------------------------------------- grammar

def random_layout(rng: random.Random, frame_size: int, max_len: int = 12) -> LayoutSequence:
    items = []
    for _ in range(rng.randint(0, max_len)):
        x1, x2 = sorted(rng.sample(range(frame_size + 1), 2))
        y1, y2 = sorted(rng.sample(range(frame_size + 1), 2))
        items.append((rng.choice(list(ElementType)), BoundingBox(x1, y1, x2, y2, frame_size)))
    return LayoutSequence.from_items(items)


_FUZZ_ALPHABET = b"\t\n ,0123456789abcdeflinoprstuxy_-\x00\xff<>/"


def fuzz_bytes(rng: random.Random, frame_size: int) -> bytes:
    mode = rng.random()
    if mode < 0.3:
        return bytes(rng.randrange(256) for _ in range(rng.randint(0, 200)))
    if mode < 0.6:
        return bytes(rng.choice(_FUZZ_ALPHABET) for _ in range(rng.randint(0, 200)))
    # mutate a valid serialization
    data = bytearray(serialize_layout(random_layout(rng, frame_size)).encode())
    for _ in range(rng.randint(1, 8)):
        op = rng.random()
        pos = rng.randint(0, len(data))
        if op < 0.4:
            data[pos:pos] = bytes([rng.randrange(256)])
        elif op < 0.7 and data:
            del data[min(pos, len(data) - 1)]
        elif data:
            data[min(pos, len(data) - 1)] = rng.randrange(256)
    return bytes(data)


def grammar_suite(seed: int = 0, n: int = 10_000, frame_size: int = 896) -> CheckResult:
    def run():
        rng = random.Random(seed)
        for k in range(n):
            seq = random_layout(rng, frame_size)
            back, warns = parse_layout(serialize_layout(seq), frame_size)
            if back != seq or warns:
                return False, f"round trip {k} lost information"
        for k in range(n):
            blob = fuzz_bytes(rng, frame_size)
            try:
                seq, _ = parse_layout(blob, frame_size)
            except Exception as e:
                return False, f"fuzz input {k} raised {type(e).__name__}: {blob[:40]!r}"
            if any(not (0 <= e.bbox.x1 < e.bbox.x2 <= frame_size) for e in seq):
                return False, f"fuzz input {k} produced an out-of-frame box"
        return True, f"{n} round trips, {n} fuzz inputs"

    return _timed("grammar", run)


# ---------------------------------------------------------------- tree edit distance oracle

def tree_shapes(n: int) -> list[tuple]:
    """Every ordered unlabeled tree with ``n`` nodes, as nested tuples of children."""
    return [tuple(f) for f in _forests(n - 1)]


_FOREST_MEMO: dict[int, list[list[tuple]]] = {}


def _forests(n: int) -> list[list[tuple]]:
    if n not in _FOREST_MEMO:
        if n == 0:
            _FOREST_MEMO[n] = [[]]
        else:
            _FOREST_MEMO[n] = [[t] + rest for k in range(1, n + 1) for t in tree_shapes(k) for rest in _forests(n - k)]
    return _FOREST_MEMO[n]


def shape_size(shape: tuple) -> int:
    return 1 + sum(shape_size(c) for c in shape)


def label_tree(shape: tuple, labels) -> Node:
    it = iter(labels)

    def build(s):
        label = next(it)
        return Node(label, [build(c) for c in s])

    return build(shape)


def _preorder_with_post(t: Node) -> list[tuple[str, int]]:
    pre, post = [], {}

    def walk(n):
        pre.append(n)
        for c in n.children:
            walk(c)
        post[id(n)] = len(post)

    walk(t)
    return [(n.label, post[id(n)]) for n in pre]


def mapping_distance(t1: Node, t2: Node) -> int:
    """Unit-cost edit distance as the cheapest valid ordered mapping, found by exhaustive search.

    A mapping is valid when it keeps both preorder and postorder relations between mapped pairs; its
    cost is the relabelled pairs plus every unmapped node of either tree.
    """
    a, b = _preorder_with_post(t1), _preorder_with_post(t2)
    n, m = len(a), len(b)
    best = n + m
    pairs: list[tuple[int, int]] = []

    def search(i: int, j0: int, relabel: int, mapped: int):
        nonlocal best
        if i == n:
            best = min(best, relabel + (n - mapped) + (m - mapped))
            return
        search(i + 1, j0, relabel, mapped)
        for j in range(j0, m):
            if all((a[i][1] < a[k][1]) == (b[j][1] < b[l][1]) for k, l in pairs):
                pairs.append((i, j))
                search(i + 1, j + 1, relabel + (a[i][0] != b[j][0]), mapped + 1)
                pairs.pop()

    search(0, 0, 0, 0)
    return best


def tree_oracle_cases(seed: int = 0, labelings: int = 4):
    """(a) all labeled pairs over {a,b} with at most 6 nodes in total; (b) all labeled pairs with
    at most 4 nodes each; (c) every pair of shapes with at most 6 nodes each under random labels."""
    for n1 in range(1, 6):
        for n2 in range(1, 7 - n1):
            for s1, s2 in itertools.product(tree_shapes(n1), tree_shapes(n2)):
                for l1 in itertools.product("ab", repeat=n1):
                    for l2 in itertools.product("ab", repeat=n2):
                        yield label_tree(s1, l1), label_tree(s2, l2)
    small = [(s, lab) for k in range(1, 5) for s in tree_shapes(k) for lab in itertools.product("ab", repeat=k)]
    for (s1, l1), (s2, l2) in itertools.product(small, small):
        if len(l1) + len(l2) > 6:
            yield label_tree(s1, l1), label_tree(s2, l2)
    rng = random.Random(seed)
    shapes = [s for k in range(1, 7) for s in tree_shapes(k)]
    for s1, s2 in itertools.product(shapes, shapes):
        for _ in range(labelings):
            yield (label_tree(s1, [rng.choice("abc") for _ in range(6)]),
                   label_tree(s2, [rng.choice("abc") for _ in range(6)]))


def random_string(rng: random.Random, alphabet: str = "abc", max_len: int = 12) -> str:
    return "".join(rng.choice(alphabet) for _ in range(rng.randint(0, max_len)))


def metric_suite(seed: int = 0, n_triples: int = 10_000) -> CheckResult:
    def run():
        n_trees = 0
        for t1, t2 in tree_oracle_cases(seed):
            n_trees += 1
            fast, slow = tree_edit_distance(t1, t2), mapping_distance(t1, t2)
            if fast != slow:
                return False, f"tree distance {fast} != oracle {slow} for {t1!r} vs {t2!r}"
        rng = random.Random(seed)
        for _ in range(n_triples):
            a, b, c = (random_string(rng) for _ in range(3))
            ab, ba = edit_distance(a, b)[0], edit_distance(b, a)[0]
            if ab != ba or (ab == 0) != (a == b):
                return False, f"symmetry/identity fails on {a!r}, {b!r}"
            if edit_distance(a, c)[0] > ab + edit_distance(b, c)[0]:
                return False, f"triangle inequality fails on {a!r}, {b!r}, {c!r}"
        got = teds("<table></table>", "<table><tr><td>x</td></tr></table>")
        if abs(got - 0.25) > 1e-12:
            return False, f"TEDS worked example gave {got}, expected 0.25"
        return True, f"{n_trees} tree pairs match the exhaustive oracle, {n_triples} ED triples, TEDS example 0.25"

    return _timed("metrics", run)


def run_all(seed: int = 0, only: Optional[list[str]] = None) -> list[CheckResult]:
    suites = {"gradient": gradient_suite, "grammar": grammar_suite, "metrics": metric_suite}
    return [fn(seed) for name, fn in suites.items() if only is None or name in only]
