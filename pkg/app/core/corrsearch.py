# app/core/corrsearch.py
"""
ρ_Δ by search over correlations.

rho_exact runs in two phases:
  1. branch-and-bound for the optimal value: branch on how the most expensive uncovered
     row/column gets covered, cheapest cell first, pruning on a best-case completion bound;
     the root branches are solved in parallel, each with a private incumbent.
  2. witness extraction: row-major, include-first walk that returns the correlation
     with value ≤ optimum whose list of related pairs is lexicographically least.

A node whose relation covers every row and column is a leaf: adding cells never
lowers distortion, so the remaining cells are left out.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterator, Mapping, Sequence

import networkx as nx
import numpy as np
from networkx.algorithms import isomorphism as iso

from app.core import config
from app.core.config import TOL
from app.core.distsys import (
    DistortionSystem,
    GeneratorTable,
    distortion_from_tables,
    generator_tables,
)
from app.core.errors import CorrelaError, CorrelationError, SearchTooLarge, StructureError
from app.core.mstruct import Correlation, MetricStructure, PointRef

logger = logging.getLogger(__name__)

Cell = tuple[str, int, int]
Line = tuple[str, str, int]  # ("row" | "col", sort, index)


@dataclass(frozen=True)
class SearchResult:
    value: float
    witness: Correlation
    nodes_explored: int
    exact: bool
    truncation_note: Mapping[str, Any] = field(default_factory=dict)

    def as_dict(self) -> dict[str, Any]:
        return {
            "value": self.value,
            "witness": self.witness.as_dict(),
            "nodes_explored": self.nodes_explored,
            "exact": self.exact,
            "truncation": dict(self.truncation_note),
        }


# ──────────────────────────────────────────────────────────────────────────────
# Search context
# ──────────────────────────────────────────────────────────────────────────────

class _Context:
    """Generator tables and incremental distortion for one (system, M, N) pair."""

    def __init__(
        self,
        sys: DistortionSystem,
        m: MetricStructure,
        n: MetricStructure,
        anchors: Sequence[Cell] = (),
        tables: Sequence[GeneratorTable] | None = None,
    ) -> None:
        self.sys = sys
        self.m = m
        self.n = n
        self.tables = list(tables) if tables is not None else generator_tables(sys, m, n)
        self.open_tables = [t for t in self.tables if t.var_sorts]
        self.sorts = [s.name for s in m.sorts]
        for s in self.sorts:
            if not n.has_sort(s):
                raise CorrelationError(f"right structure has no sort {s!r}")
        self.shape = {s: (m.sort(s).size, n.sort(s).size) for s in self.sorts}
        self.cells: list[Cell] = [
            (s, i, j) for s in self.sorts for i in range(self.shape[s][0]) for j in range(self.shape[s][1])
        ]
        self.order = {c: k for k, c in enumerate(self.cells)}
        self.anchors = tuple(anchors)
        for (s, i, j) in self.anchors:
            if s not in self.shape or not (0 <= i < self.shape[s][0] and 0 <= j < self.shape[s][1]):
                raise CorrelationError(f"anchor ({s}, {i}, {j}) does not fit the structures")

    def empty(self) -> dict[str, np.ndarray]:
        rel = {s: np.zeros(self.shape[s], dtype=bool) for s in self.sorts}
        for (s, i, j) in self.anchors:
            rel[s][i, j] = True
        return rel

    def value(self, rel: Mapping[str, np.ndarray]) -> float:
        return distortion_from_tables(self.tables, rel).value

    def added(self, rel: Mapping[str, np.ndarray], cell: Cell) -> float:
        """Largest gap over tuples that use `cell` (which `rel` already contains)."""
        s, i, j = cell
        best = 0.0
        pairs: dict[str, np.ndarray] = {}
        for t in self.open_tables:
            for p, vs in enumerate(t.var_sorts):
                if vs != s:
                    continue
                left = np.take(t.left, i, axis=p)
                right = np.take(t.right, j, axis=p)
                rest = t.var_sorts[:p] + t.var_sorts[p + 1:]
                if not rest:
                    gap = float(abs(left - right))
                else:
                    for r in rest:
                        if r not in pairs:
                            pairs[r] = np.argwhere(rel[r])
                    if any(pairs[r].shape[0] == 0 for r in rest):
                        continue
                    rows = [pairs[r][:, 0] for r in rest]
                    cols = [pairs[r][:, 1] for r in rest]
                    gap = float(np.abs(left[np.ix_(*rows)] - right[np.ix_(*cols)]).max())
                if gap > best:
                    best = gap
        return best

    def include_cost(self, rel: dict[str, np.ndarray], value: float, cell: Cell) -> float:
        s, i, j = cell
        rel[s][i, j] = True
        try:
            return max(value, self.added(rel, cell))
        finally:
            rel[s][i, j] = False

    def uncovered(self, rel: Mapping[str, np.ndarray]) -> list[Line]:
        out: list[Line] = []
        for s in self.sorts:
            m = rel[s]
            out.extend(("row", s, int(i)) for i in np.flatnonzero(~m.any(axis=1)))
            out.extend(("col", s, int(j)) for j in np.flatnonzero(~m.any(axis=0)))
        return out

    def line_cells(self, line: Line) -> list[Cell]:
        kind, s, k = line
        if kind == "row":
            return [(s, k, j) for j in range(self.shape[s][1])]
        return [(s, i, k) for i in range(self.shape[s][0])]

    def correlation(self, rel: Mapping[str, np.ndarray]) -> Correlation:
        return Correlation(self.m, self.n, {s: rel[s].copy() for s in self.sorts}, self.anchors)


def _guard(m: MetricStructure, n: MetricStructure, force: bool) -> None:
    cap = config.max_cells()
    for so in m.sorts:
        cells = so.size * n.sort(so.name).size
        if cells > cap and not force:
            raise SearchTooLarge(
                f"sort {so.name}: {so.size}x{n.sort(so.name).size} = {cells} cells exceeds the cap {cap} (use force)"
            )


# ──────────────────────────────────────────────────────────────────────────────
# Phase 1: optimal value
# ──────────────────────────────────────────────────────────────────────────────

@dataclass
class _Branch:
    ctx: _Context
    rel: dict[str, np.ndarray]
    value: float
    excluded: set[Cell]
    incumbent: float
    best: dict[str, np.ndarray] | None = None
    nodes: int = 0

    def options(self) -> tuple[list[tuple[float, list[tuple[float, Cell]]]], float] | None:
        """Per uncovered line its available cells with inclusion cost; None if infeasible."""
        ctx = self.ctx
        lines = ctx.uncovered(self.rel)
        out: list[tuple[float, list[tuple[float, Cell]]]] = []
        memo: dict[Cell, float] = {}
        bound = self.value
        for line in lines:
            opts: list[tuple[float, Cell]] = []
            for c in ctx.line_cells(line):
                if c in self.excluded:
                    continue
                if c not in memo:
                    memo[c] = ctx.include_cost(self.rel, self.value, c)
                opts.append((memo[c], c))
            if not opts:
                return None
            opts.sort(key=lambda oc: (oc[0], ctx.order[oc[1]]))
            out.append((opts[0][0], opts))
            bound = max(bound, opts[0][0])
        return out, bound

    def pick(self, lines: list[tuple[float, list[tuple[float, Cell]]]]) -> list[tuple[float, Cell]]:
        # highest cheapest-cost first, then fewest options; stable in canonical line order
        best = max(range(len(lines)), key=lambda k: (lines[k][0], -len(lines[k][1]), -k))
        return lines[best][1]

    def run(self) -> None:
        self.nodes += 1
        opt = self.options()
        if opt is None:
            return
        lines, bound = opt
        if not lines:
            if self.value < self.incumbent:
                self.incumbent = self.value
                self.best = {s: a.copy() for s, a in self.rel.items()}
                logger.debug("incumbent %r after %d nodes", self.value, self.nodes)
            return
        if bound >= self.incumbent:
            return
        tried: list[Cell] = []
        for cost, c in self.pick(lines):
            if cost >= self.incumbent:
                break
            s, i, j = c
            saved = self.value
            self.rel[s][i, j] = True
            self.value = cost
            self.run()
            self.rel[s][i, j] = False
            self.value = saved
            self.excluded.add(c)
            tried.append(c)
        for c in tried:
            self.excluded.discard(c)


def _phase_one(ctx: _Context, incumbent: float, threads: int) -> tuple[float, dict[str, np.ndarray] | None, int]:
    rel = ctx.empty()
    root = _Branch(ctx, rel, ctx.value(rel), set(), incumbent)
    root.nodes = 1
    opt = root.options()
    if opt is None:
        raise CorrelationError("no correlation contains the anchors")
    lines, bound = opt
    if not lines:
        return (root.value, rel, 1) if root.value < incumbent else (incumbent, None, 1)
    if bound >= incumbent:
        return incumbent, None, 1

    tasks: list[_Branch] = []
    before: list[Cell] = []
    for cost, c in root.pick(lines):
        if cost >= incumbent:
            break
        sub = {s: a.copy() for s, a in rel.items()}
        sub[c[0]][c[1], c[2]] = True
        tasks.append(_Branch(ctx, sub, cost, set(before), incumbent))
        before.append(c)

    def solve(b: _Branch) -> _Branch:
        b.run()
        return b

    if threads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            done = list(pool.map(solve, tasks))
    else:
        done = [solve(b) for b in tasks]

    value, best = incumbent, None
    nodes = 1
    for b in done:
        nodes += b.nodes
        if b.best is not None and b.incumbent < value:
            value, best = b.incumbent, b.best
    return value, best, nodes


# ──────────────────────────────────────────────────────────────────────────────
# Phase 2: lexicographically least witness
# ──────────────────────────────────────────────────────────────────────────────

def _least_witness(ctx: _Context, target: float) -> tuple[dict[str, np.ndarray] | None, int]:
    rel = ctx.empty()
    value = ctx.value(rel)
    if value > target:
        return None, 1
    cells = ctx.cells
    nodes = 0

    def feasible(k: int, cur: float) -> bool:
        # every uncovered line keeps some undecided cell that fits under the target
        for line in ctx.uncovered(rel):
            if not any(
                ctx.order[c] >= k and ctx.include_cost(rel, cur, c) <= target for c in ctx.line_cells(line)
            ):
                return False
        return True

    def walk(k: int, cur: float) -> bool:
        nonlocal nodes
        nodes += 1
        if not ctx.uncovered(rel):
            return True
        if k == len(cells):
            return False
        s, i, j = c = cells[k]
        if rel[s][i, j]:
            return walk(k + 1, cur)
        cost = ctx.include_cost(rel, cur, c)
        if cost <= target:
            rel[s][i, j] = True
            if walk(k + 1, cost):
                return True
            rel[s][i, j] = False
        return feasible(k + 1, cur) and walk(k + 1, cur)

    found = walk(0, value)
    return (rel if found else None), nodes


# ──────────────────────────────────────────────────────────────────────────────
# Public operations
# ──────────────────────────────────────────────────────────────────────────────

def rho_exact(
    sys: DistortionSystem,
    m: MetricStructure,
    n: MetricStructure,
    anchors: Sequence[Cell] = (),
    *,
    force: bool = False,
    threads: int | None = None,
    budget: int | None = None,
    seed: int | None = None,
) -> SearchResult:
    """Minimum distortion over all correlations containing `anchors`."""
    _guard(m, n, force)
    ctx = _Context(sys, m, n, anchors)
    heur = _heuristic(ctx, budget or config.heuristic_budget(), config.seed() if seed is None else seed)
    workers = threads if threads is not None else config.threads()
    value, _best, nodes1 = _phase_one(ctx, heur[0], max(1, workers))
    rel, nodes2 = _least_witness(ctx, value)
    if rel is None:  # pragma: no cover - the optimum is always attained
        raise CorrelaError("witness extraction failed")
    witness = ctx.correlation(rel)
    logger.info(
        "rho_exact %s: value %r, heuristic %r, nodes %d+%d", sys.name, value, heur[0], nodes1, nodes2
    )
    return SearchResult(value, witness, nodes1 + nodes2, True, sys.truncation_note())


def _minimize(ctx: _Context, rel: dict[str, np.ndarray], keep: set[Cell], rng: np.random.Generator) -> None:
    included = [(s, int(i), int(j)) for s in ctx.sorts for i, j in np.argwhere(rel[s])]
    order = rng.permutation(len(included))
    for k in order:
        s, i, j = c = included[int(k)]
        if c in keep:
            continue
        m = rel[s]
        if m[i].sum() > 1 and m[:, j].sum() > 1:
            m[i, j] = False


def _random_cover(ctx: _Context, rng: np.random.Generator) -> dict[str, np.ndarray]:
    rel = ctx.empty()
    for line in ctx.uncovered(rel):
        kind, s, k = line
        if (rel[s][k].any() if kind == "row" else rel[s][:, k].any()):
            continue
        opts = ctx.line_cells(line)
        s, i, j = opts[int(rng.integers(len(opts)))]
        rel[s][i, j] = True
    _minimize(ctx, rel, set(ctx.anchors), rng)
    return rel


def _greedy_cover(ctx: _Context) -> dict[str, np.ndarray]:
    rel = ctx.empty()
    value = ctx.value(rel)
    while True:
        lines = ctx.uncovered(rel)
        if not lines:
            return rel
        line = lines[0]
        costs = [(ctx.include_cost(rel, value, c), ctx.order[c], c) for c in ctx.line_cells(line)]
        cost, _, (s, i, j) = min(costs)
        rel[s][i, j] = True
        value = cost


def _key(ctx: _Context, rel: Mapping[str, np.ndarray]) -> tuple[int, ...]:
    return tuple(ctx.order[(s, int(i), int(j))] for s in ctx.sorts for i, j in np.argwhere(rel[s]))


def _heuristic(ctx: _Context, budget: int, seed: int) -> tuple[float, dict[str, np.ndarray], int]:
    rng = np.random.default_rng(seed)
    starts = [_greedy_cover(ctx)]
    if all(a == b for a, b in ctx.shape.values()):
        ident = ctx.empty()
        for s in ctx.sorts:
            ident[s] |= np.eye(ctx.shape[s][0], dtype=bool)
        starts.append(ident)
    best_rel: dict[str, np.ndarray] | None = None
    best_v = math.inf
    evals = 0
    for st in starts:
        v = ctx.value(st)
        evals += 1
        if v < best_v or (v == best_v and best_rel is not None and _key(ctx, st) < _key(ctx, best_rel)):
            best_v, best_rel = v, st
    assert best_rel is not None
    cur = {s: a.copy() for s, a in best_rel.items()}
    cur_v = best_v
    keep = set(ctx.anchors)
    restart = max(50, budget // 10)
    movable = [c for c in ctx.cells if c not in keep]
    while evals < budget and movable and best_v > 0:
        if evals % restart == 0:
            cur = _random_cover(ctx, rng)
            cur_v = ctx.value(cur)
            evals += 1
        s, i, j = c = movable[int(rng.integers(len(movable)))]
        cand = {k: a.copy() for k, a in cur.items()}
        m = cand[s]
        if m[i, j]:
            if m[i].sum() < 2 or m[:, j].sum() < 2:
                evals += 1
                continue
            m[i, j] = False
        else:
            m[i, j] = True
            _minimize(ctx, cand, keep | {c}, rng)
        v = ctx.value(cand)
        evals += 1
        if v <= cur_v:
            cur, cur_v = cand, v
        if v < best_v or (v == best_v and _key(ctx, cand) < _key(ctx, best_rel)):
            best_v, best_rel = v, {k: a.copy() for k, a in cand.items()}
    return best_v, best_rel, evals


def rho_heuristic(
    sys: DistortionSystem,
    m: MetricStructure,
    n: MetricStructure,
    budget: int | None = None,
    *,
    seed: int | None = None,
    anchors: Sequence[Cell] = (),
) -> SearchResult:
    """Seeded local search over minimal correlations; an upper bound on rho_exact."""
    ctx = _Context(sys, m, n, anchors)
    value, rel, evals = _heuristic(ctx, budget or config.heuristic_budget(), config.seed() if seed is None else seed)
    logger.info("rho_heuristic %s: value %r after %d evaluations", sys.name, value, evals)
    return SearchResult(value, ctx.correlation(rel), evals, False, sys.truncation_note())


def anchors_from_tuples(
    m: MetricStructure, mbar: Sequence[Any], n: MetricStructure, nbar: Sequence[Any]
) -> list[Cell]:
    """Pair up two point tuples; entries are PointRefs or (sort, label) pairs."""
    if len(mbar) != len(nbar):
        raise CorrelationError(f"tuple lengths differ: {len(mbar)} vs {len(nbar)}")
    out: list[Cell] = []
    for a, b in zip(mbar, nbar):
        sa, ia = _ref(m, a)
        sb, ib = _ref(n, b)
        if sa != sb:
            raise CorrelationError(f"anchor pairs a point of sort {sa} with a point of sort {sb}")
        out.append((sa, ia, ib))
    return out


def _ref(s: MetricStructure, p: Any) -> PointRef:
    if not (isinstance(p, (tuple, list)) and len(p) == 2):
        raise CorrelationError(f"point must be (sort, label), got {p!r}")
    try:
        return s.point(str(p[0]), p[1])
    except StructureError as e:
        raise CorrelationError(str(e)) from None


def rho_pointed(
    sys: DistortionSystem,
    m: MetricStructure,
    mbar: Sequence[Any],
    n: MetricStructure,
    nbar: Sequence[Any],
    **kw: Any,
) -> SearchResult:
    """ρ_Δ(M,m̄;N,n̄): rho_exact with (m̄_i, n̄_i) forced into the correlation."""
    return rho_exact(sys, m, n, anchors_from_tuples(m, mbar, n, nbar), **kw)


def enumerate_correlations(
    sys: DistortionSystem,
    m: MetricStructure,
    n: MetricStructure,
    bound: float,
    *,
    anchors: Sequence[Cell] = (),
    limit: int | None = None,
    force: bool = False,
) -> Iterator[tuple[Correlation, float]]:
    """Every correlation (not only minimal ones) with distortion ≤ bound, in row-major order."""
    _guard(m, n, force)
    ctx = _Context(sys, m, n, anchors)
    rel = ctx.empty()
    cells = ctx.cells
    count = 0

    def fits(k: int, cur: float) -> bool:
        for line in ctx.uncovered(rel):
            if not any(
                ctx.order[c] >= k and ctx.include_cost(rel, cur, c) <= bound for c in ctx.line_cells(line)
            ):
                return False
        return True

    def walk(k: int, cur: float) -> Iterator[tuple[Correlation, float]]:
        nonlocal count
        if limit is not None and count >= limit:
            return
        if k == len(cells):
            if not ctx.uncovered(rel):
                count += 1
                yield ctx.correlation(rel), cur
            return
        s, i, j = c = cells[k]
        if rel[s][i, j]:
            yield from walk(k + 1, cur)
            return
        if fits(k + 1, cur):
            yield from walk(k + 1, cur)
        cost = ctx.include_cost(rel, cur, c)
        if cost <= bound:
            rel[s][i, j] = True
            yield from walk(k + 1, cost)
            rel[s][i, j] = False

    start = ctx.value(rel)
    if start <= bound:
        yield from walk(0, start)


# ──────────────────────────────────────────────────────────────────────────────
# Stratified languages
# ──────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, slots=True)
class StratifiedResult:
    value: float
    level: int  # largest level with isomorphic reducts; -1 if none

    def as_dict(self) -> dict[str, Any]:
        return {"value": self.value, "level": self.level}


def _check_discrete(s: MetricStructure) -> None:
    for so in s.sorts:
        off = so.metric[~np.eye(so.size, dtype=bool)]
        if off.size and not np.all(np.abs(off - 1.0) <= TOL):
            raise CorrelaError(f"structure is not discrete: sort {so.name} has a non 0/1 metric")
    for p in s.predicates:
        v = p.values
        if not np.all((np.abs(v) <= TOL) | (np.abs(v - 1.0) <= TOL)):
            raise CorrelaError(f"structure is not discrete: predicate {p.name} is not 0/1-valued")


def reduct_graph(s: MetricStructure, predicates: Sequence[str]) -> nx.DiGraph:
    """
    Relational encoding: one node per point (labelled by sort and unary truths) and one
    node per true tuple of each predicate of arity ≥ 2, with edges to its components
    labelled by the argument positions they fill. Truth values of 0-ary predicates sit
    in the graph attribute `sentences`.
    """
    g = nx.DiGraph()
    names = [p for p in predicates]
    g.graph["sentences"] = tuple(
        (p, bool(s.predicate(p).values > 0.5)) for p in names if s.predicate(p).arity == 0
    )
    unary = [p for p in names if s.predicate(p).arity == 1]
    for so in s.sorts:
        for i in range(so.size):
            truths = tuple(
                bool(s.predicate(p).values[i] > 0.5) for p in unary if s.predicate(p).arg_sorts[0] == so.name
            )
            g.add_node(("pt", so.name, i), label=("pt", so.name, truths))
    for p in names:
        pr = s.predicate(p)
        if pr.arity < 2:
            continue
        for t in np.argwhere(pr.values > 0.5):
            node = ("tp", p, tuple(int(x) for x in t))
            g.add_node(node, label=("tp", p))
            slots: dict[tuple[str, int], list[int]] = {}
            for pos, (sort, idx) in enumerate(zip(pr.arg_sorts, t)):
                slots.setdefault((sort, int(idx)), []).append(pos)
            for (sort, idx), positions in slots.items():
                g.add_edge(node, ("pt", sort, idx), pos=tuple(positions))
    return g


def reducts_isomorphic(m: MetricStructure, n: MetricStructure, predicates: Sequence[str]) -> bool:
    for so in m.sorts:
        if not n.has_sort(so.name) or n.sort(so.name).size != so.size:
            return False
    gm = reduct_graph(m, predicates)
    gn = reduct_graph(n, predicates)
    if gm.graph["sentences"] != gn.graph["sentences"]:
        return False
    return nx.is_isomorphic(
        gm,
        gn,
        node_match=iso.categorical_node_match("label", None),
        edge_match=iso.categorical_edge_match("pos", None),
    )


def rho_stratified(languages: Sequence[Sequence[str]], m: MetricStructure, n: MetricStructure) -> StratifiedResult:
    """
    ρ_L = 2^{-i} for the largest level i whose reducts are isomorphic; 0 if every level
    matches, 2 if already level 0 differs. Levels list predicate names and must be nested.
    """
    _check_discrete(m)
    _check_discrete(n)
    levels = [list(dict.fromkeys(l)) for l in languages]
    for a, b in zip(levels, levels[1:]):
        if not set(a) <= set(b):
            raise CorrelaError("languages must be nested (each level contains the previous one)")
    for lvl in levels:
        for p in lvl:
            if not (m.has_predicate(p) and n.has_predicate(p)):
                raise CorrelaError(f"predicate {p!r} missing from a structure")
    for i, lvl in enumerate(levels):
        if not reducts_isomorphic(m, n, lvl):
            return StratifiedResult(2.0 ** (-(i - 1)), i - 1)
    return StratifiedResult(0.0, len(levels) - 1)

