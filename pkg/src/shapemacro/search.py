"""Best refactoring of a program under a function library.

For each valid block order, a beam search builds partial covers of the
ordered lines by library calls. A function covers a run of lines when the
commands match, discrete/boolean/cuboid-id values match exactly, and every
continuous value lands within ``eps_match``. Partial covers are ranked by
their weighted objective contribution normalized by lines covered; the
returned program is the global minimum across orders, ties broken toward
the most canonical order and then by error, call count, and function names.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from functools import lru_cache

from .lang import Program, SIGNATURES
from .library import (
    Call, Library, ObjectiveWeights, RefactoredProgram,
    base_call_cost, macro_call_cost, match_macro,
)
from .ordering import OrderingSet, permuted_program


class SearchError(Exception):
    pass


@dataclass(frozen=True)
class SearchConfig:
    beam_width: int = 10
    eps_match: float = 0.05
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    strategy: str = "beam"  # "beam" or "best_first" (ablation)

    def __post_init__(self):
        if self.beam_width < 1 or self.eps_match < 0:
            raise SearchError("beam width must be >=1 and eps_match >= 0")


@dataclass(frozen=True, slots=True)
class PartialCover:
    """Covered prefix of the ordered lines plus its accumulated cost."""

    next_idx: int
    cost: float
    err: float
    calls: tuple


def _calls_key(calls):
    return tuple(
        (c.fn, tuple((pv.kind, pv.value) for pv in c.args)) for c in calls
    )


def _rank_key(state: PartialCover):
    covered = max(state.next_idx, 1)
    return (
        state.cost / covered,
        state.err,
        len(state.calls),
        tuple(c.fn for c in state.calls),
        _calls_key(state.calls),
    )


def _final_key(state: PartialCover):
    return (
        state.cost,
        state.err,
        len(state.calls),
        tuple(c.fn for c in state.calls),
        _calls_key(state.calls),
    )


@lru_cache(maxsize=64)
def _macros_by_first(lib: Library):
    table: dict = {}
    for m in lib.macros:
        table.setdefault(m.body[0][0], []).append(m)
    return table


def _expansions(state: PartialCover, lines, lib, cfg):
    line = lines[state.next_idx]
    w = cfg.weights
    bbox = (lines[0].value(0), lines[0].value(1), lines[0].value(2))
    out = [
        PartialCover(
            state.next_idx + 1,
            state.cost + base_call_cost(line.command, w),
            state.err,
            state.calls + (Call(line.command, line.params),),
        )
    ]
    for m in _macros_by_first(lib).get(line.command, ()):
        end = state.next_idx + len(m.body)
        if end > len(lines):
            continue
        res = match_macro(m, lines[state.next_idx:end], bbox, cfg.eps_match)
        if res is None:
            continue
        args, err = res
        out.append(
            PartialCover(
                end,
                state.cost + macro_call_cost(m, w) + w.lam_eps * err,
                state.err + err,
                state.calls + (Call(m.name, args),),
            )
        )
    return out


def cover_lines(lines, lib: Library, cfg: SearchConfig) -> PartialCover:
    """Best cover of one ordered line sequence."""
    if not lines:
        raise SearchError("cannot cover an empty program")
    init = PartialCover(0, 0.0, 0.0, ())
    n = len(lines)
    if cfg.strategy == "best_first":
        counter = 0
        heap = [(_rank_key(init), counter, init)]
        while heap:
            _, _, state = heapq.heappop(heap)
            if state.next_idx == n:
                return state
            for nxt in _expansions(state, lines, lib, cfg):
                counter += 1
                heapq.heappush(heap, (_rank_key(nxt), counter, nxt))
        raise SearchError("no cover found")  # unreachable with base functions

    frontier = [init]
    while any(s.next_idx < n for s in frontier):
        new: list = []
        for s in frontier:
            if s.next_idx == n:
                new.append(s)
            else:
                new.extend(_expansions(s, lines, lib, cfg))
        new.sort(key=_rank_key)
        frontier = new[: cfg.beam_width]
    return min(frontier, key=_final_key)


def _unique_orders(p: Program, orders: OrderingSet):
    """Orders deduplicated by induced line tuple, keeping the most canonical
    representative of each duplicate group."""
    seen: dict = {}
    for order in sorted(orders.orders):
        lines = tuple(permuted_program(p, order).lines())
        if lines not in seen:
            seen[lines] = order
    return [(order, lines) for lines, order in seen.items()]


def per_order_costs(p: Program, orders: OrderingSet, lib: Library, cfg: SearchConfig):
    """Best objective contribution per order (duplicates share their group's
    beam result), aligned with ``orders.orders``."""
    cache: dict = {}
    costs = []
    for order in orders.orders:
        lines = tuple(permuted_program(p, order).lines())
        if lines not in cache:
            cache[lines] = cover_lines(lines, lib, cfg).cost
        costs.append(cache[lines])
    return costs


def best_program(
    p: Program, orders: OrderingSet, lib: Library, cfg: SearchConfig
) -> RefactoredProgram:
    """Minimum-cost refactoring of ``p`` across its valid orders."""
    if not orders.orders:
        raise SearchError("ordering set is empty")
    best = None
    best_key = None
    for order, lines in _unique_orders(p, orders):
        state = cover_lines(lines, lib, cfg)
        key = (state.cost, order) + _final_key(state)[1:]
        if best_key is None or key < best_key:
            best, best_key = (state, order), key
    state, order = best
    return RefactoredProgram(state.calls, order, state.err)


def base_refactoring(p: Program) -> RefactoredProgram:
    """Identity cover: every line becomes its own base-command call."""
    calls = tuple(Call(ln.command, ln.params) for ln in p.lines())
    return RefactoredProgram(calls, tuple(range(len(p.blocks))), 0.0)


def exhaustive_best(
    p: Program, orders: OrderingSet, lib: Library, cfg: SearchConfig
) -> RefactoredProgram:
    """Exact minimum by full enumeration; the beam-search oracle.

    Only valid for small instances: at most 8 lines and 8 library functions.
    """
    if p.n_lines > 8:
        raise SearchError("exhaustive search limited to programs of <= 8 lines")
    if lib.size > 8:
        raise SearchError("exhaustive search limited to libraries of <= 8 functions")

    best = None
    best_key = None
    for order, lines in _unique_orders(p, orders):
        stack = [PartialCover(0, 0.0, 0.0, ())]
        while stack:
            state = stack.pop()
            if state.next_idx == len(lines):
                key = (state.cost, order) + _final_key(state)[1:]
                if best_key is None or key < best_key:
                    best, best_key = (state, order), key
                continue
            stack.extend(_expansions(state, lines, lib, cfg))
    state, order = best
    return RefactoredProgram(state.calls, order, state.err)
