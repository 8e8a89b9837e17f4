# app/core/backforth.py
"""
Back-and-forth pseudo-metrics r_α^{Δ,Ω} and capped Scott ranks on finite structures.

Values live in one numpy array per sort pattern σ (a tuple of sort names of length ≤ k):
axes are (M_σ0, …, M_σℓ−1, N_σ0, …, N_σℓ−1), so entry [m̄, n̄] is r_α(M,m̄;N,n̄).

r_0 is the sup of |ψ^M(m̄) − ψ^N(n̄)| over generators ψ respecting Ω, with generator
variable x_j bound to tuple position q_j ≥ j through order-preserving injections.
The successor step is sup_a inf_b ↑ sup_b inf_a over the one-longer table. The length-k
layer stays at r_0.
"""
from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterator, Sequence

import numpy as np

from app.core import config
from app.core.distsys import DistortionSystem, check_generators, joint_signature
from app.core.errors import CorrelationError, DepthCapError, SearchTooLarge, StructureError
from app.core.formula import Formula, WeakModulus, free_vars, respects_modulus, tabulate
from app.core.mstruct import MetricStructure

logger = logging.getLogger(__name__)

Pattern = tuple[str, ...]


@dataclass(frozen=True, slots=True)
class _Gen:
    formula: Formula
    var_index: tuple[int, ...]
    var_sorts: tuple[str, ...]
    left: np.ndarray
    right: np.ndarray


class _Game:
    """Tabulated Ω-respecting generators for a pair of structures."""

    def __init__(self, sys: DistortionSystem, omega: WeakModulus, m: MetricStructure, n: MetricStructure) -> None:
        sorts_m = [s.name for s in m.sorts]
        sorts_n = sorted(s.name for s in n.sorts)
        if sorted(sorts_m) != sorts_n:
            raise CorrelationError(f"sorts differ: {sorted(sorts_m)} vs {sorts_n}")
        for s in sorts_m:
            if m.sort(s).size == 0 or n.sort(s).size == 0:
                raise StructureError(f"sort {s} is empty")
        check_generators(sys, joint_signature(m, n))
        self.m, self.n = m, n
        self.sorts = sorts_m
        self.gens: list[_Gen] = []
        skipped = 0
        for g in sys.generators:
            if not respects_modulus(g, omega):
                skipped += 1
                continue
            fv = free_vars(g)
            idx = tuple(sorted(fv))
            self.gens.append(
                _Gen(g, idx, tuple(fv[i] for i in idx), tabulate(g, m, idx), tabulate(g, n, idx))
            )
        if skipped:
            logger.info("back-and-forth: %d generator(s) do not respect the weak modulus", skipped)

    def shape(self, pattern: Pattern) -> tuple[tuple[int, ...], tuple[int, ...]]:
        return (
            tuple(self.m.sort(s).size for s in pattern),
            tuple(self.n.sort(s).size for s in pattern),
        )

    def placements(self, g: _Gen, pattern: Pattern) -> Iterator[tuple[int, ...]]:
        for q in itertools.combinations(range(len(pattern)), len(g.var_index)):
            if all(p >= j and pattern[p] == s for p, j, s in zip(q, g.var_index, g.var_sorts)):
                yield q

    def r0(self, pattern: Pattern) -> np.ndarray:
        ms, ns = self.shape(pattern)
        ell = len(pattern)
        out = np.zeros(ms + ns, dtype=float)
        for g in self.gens:
            for q in self.placements(g, pattern):
                lshape = [1] * ell
                rshape = [1] * ell
                for t, p in enumerate(q):
                    lshape[p] = g.left.shape[t]
                    rshape[p] = g.right.shape[t]
                left = g.left.reshape(lshape + [1] * ell)
                right = g.right.reshape([1] * ell + rshape)
                np.maximum(out, np.abs(left - right), out=out)
        return out

    def step(self, pattern: Pattern, longer: dict[Pattern, np.ndarray]) -> np.ndarray:
        """One successor step for `pattern`, reading the tables one position longer."""
        ell = len(pattern)
        ms, ns = self.shape(pattern)
        out = np.zeros(ms + ns, dtype=float)
        for s in self.sorts:
            t = longer[pattern + (s,)]
            forth = t.min(axis=2 * ell + 1).max(axis=ell)
            back = t.min(axis=ell).max(axis=2 * ell)
            np.maximum(out, forth, out=out)
            np.maximum(out, back, out=out)
        return out

    def patterns(self, length: int) -> list[Pattern]:
        return [tuple(p) for p in itertools.product(self.sorts, repeat=length)]

    def entries(self, length: int) -> int:
        per = sum(self.m.sort(s).size * self.n.sort(s).size for s in self.sorts)
        return per ** length


def _guard(game: _Game, k: int) -> None:
    cap = config.baf_max_entries()
    total = sum(game.entries(ell) for ell in range(k + 1))
    if total > cap:
        raise SearchTooLarge(f"back-and-forth tables need {total} entries, cap is {cap}")


def _ref(s: MetricStructure, p: Any) -> tuple[str, int]:
    if not (isinstance(p, (tuple, list)) and len(p) == 2):
        raise CorrelationError(f"tuple entries must be (sort, label), got {p!r}")
    try:
        return s.point(str(p[0]), p[1])
    except StructureError as e:
        raise CorrelationError(str(e)) from None


def _tuples(
    m: MetricStructure, mbar: Sequence[Any], n: MetricStructure, nbar: Sequence[Any]
) -> tuple[Pattern, tuple[int, ...]]:
    if len(mbar) != len(nbar):
        raise CorrelationError(f"tuple lengths differ: {len(mbar)} vs {len(nbar)}")
    left = [_ref(m, p) for p in mbar]
    right = [_ref(n, p) for p in nbar]
    for (sa, _), (sb, _) in zip(left, right):
        if sa != sb:
            raise CorrelationError(f"position pairs sort {sa} with sort {sb}")
    return tuple(s for s, _ in left), tuple(i for _, i in left) + tuple(j for _, j in right)


# ──────────────────────────────────────────────────────────────────────────────
# Operations
# ──────────────────────────────────────────────────────────────────────────────

def r0(
    sys: DistortionSystem,
    omega: WeakModulus,
    m: MetricStructure,
    mbar: Sequence[Any],
    n: MetricStructure,
    nbar: Sequence[Any],
) -> float:
    """Base level on a pair of tuples given as (sort, label) entries."""
    pattern, where = _tuples(m, mbar, n, nbar)
    return float(_Game(sys, omega, m, n).r0(pattern)[where])


def r_finite(
    sys: DistortionSystem,
    omega: WeakModulus,
    m: MetricStructure,
    n: MetricStructure,
    rounds: int,
    *,
    k: int | None = None,
    mbar: Sequence[Any] = (),
    nbar: Sequence[Any] = (),
) -> float:
    """r_rounds(M,m̄;N,n̄) by exact recursion, bottoming out in r_0 on tuples of length |m̄| + rounds."""
    cap = config.baf_depth() if k is None else int(k)
    if rounds < 0:
        raise DepthCapError(f"rounds must be nonnegative, got {rounds}")
    pattern, where = _tuples(m, mbar, n, nbar)
    depth = len(pattern) + rounds
    if depth > cap:
        raise DepthCapError(f"{rounds} rounds on {len(pattern)}-tuples needs depth {depth}, cap is {cap}")
    game = _Game(sys, omega, m, n)
    _guard(game, depth)
    level = {p: game.r0(pattern + p) for p in game.patterns(rounds)}
    for r in range(rounds - 1, -1, -1):
        level = {p: game.step(pattern + p, {pattern + q: v for q, v in level.items()}) for p in game.patterns(r)}
    return float(level[()][where])


@dataclass
class BafTable:
    """Stabilized capped back-and-forth tables plus the iteration trace."""

    k: int
    omega: WeakModulus
    system: str
    left: MetricStructure
    right: MetricStructure
    tables: dict[Pattern, np.ndarray]
    alpha: int = 0
    history: list[float] = field(default_factory=list)
    truncation: dict[str, Any] = field(default_factory=dict)

    @property
    def value(self) -> float:
        return float(self.tables[()])

    def at(self, mbar: Sequence[Any], nbar: Sequence[Any]) -> float:
        pattern, where = _tuples(self.left, mbar, self.right, nbar)
        if len(pattern) > self.k:
            raise DepthCapError(f"tuple length {len(pattern)} exceeds the depth cap {self.k}")
        return float(self.tables[pattern][where])

    def rows(self, max_length: int | None = None) -> Iterator[tuple[int, list[list[Any]], list[list[Any]], float]]:
        """(α, left tuple, right tuple, value) for the stabilized stage."""
        top = self.k if max_length is None else min(self.k, max_length)
        for pattern in sorted(self.tables, key=lambda p: (len(p), p)):
            if len(pattern) > top:
                continue
            arr = self.tables[pattern]
            ell = len(pattern)
            for idx in np.ndindex(*arr.shape):
                lt = [[s, self.left.sort(s).points[i]] for s, i in zip(pattern, idx[:ell])]
                rt = [[s, self.right.sort(s).points[j]] for s, j in zip(pattern, idx[ell:])]
                yield self.alpha, lt, rt, float(arr[idx])

    def as_dict(self) -> dict[str, Any]:
        return {
            "value": self.value,
            "scott_rank": self.alpha,
            "k": self.k,
            "omega": self.omega.as_dict(),
            "system": self.system,
            "history": list(self.history),
            "truncation": dict(self.truncation),
        }


def r_infty_capped(
    sys: DistortionSystem,
    omega: WeakModulus,
    m: MetricStructure,
    n: MetricStructure,
    k: int | None = None,
    *,
    threads: int | None = None,
) -> BafTable:
    """
    Iterate the successor operator on every tuple length ≤ k until no entry changes.
    The stage at which that first happens is the capped Scott rank; it is at most k.
    """
    k = config.baf_depth() if k is None else int(k)
    if k < 0:
        raise DepthCapError(f"depth cap must be nonnegative, got {k}")
    game = _Game(sys, omega, m, n)
    _guard(game, k)
    patterns = [p for ell in range(k + 1) for p in game.patterns(ell)]
    workers = max(1, threads if threads is not None else config.threads())

    def base(p: Pattern) -> np.ndarray:
        return game.r0(p)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        cur = dict(zip(patterns, pool.map(base, patterns)))
        history = [float(cur[()])]
        alpha = 0
        inner = [p for p in patterns if len(p) < k]
        while True:
            stepped = dict(zip(inner, pool.map(lambda p: game.step(p, cur), inner)))
            nxt = {p: stepped.get(p, cur[p]) for p in patterns}
            if all(np.array_equal(nxt[p], cur[p]) for p in patterns):
                break
            cur = nxt
            alpha += 1
            history.append(float(cur[()]))
            if alpha > k:  # pragma: no cover - the capped recursion settles within k steps
                raise DepthCapError(f"back-and-forth did not settle within {k} steps")
    logger.info("r_infty_capped %s k=%d: value %r, rank %d", sys.name, k, history[-1], alpha)
    return BafTable(k, omega, sys.name, m, n, cur, alpha, history, sys.truncation_note())


def scott_rank_capped(table: BafTable) -> int:
    """Least α with r_α = r_{α+1} on every stored tuple pair."""
    return table.alpha
