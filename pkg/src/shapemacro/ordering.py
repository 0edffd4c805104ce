"""Valid line orderings of a program.

Blocks may be reordered whenever the result still executes to the same
geometry. Block i depends on block j when any of i's attachments reference
the cuboid declared by j, so candidate orders are the topological orders of
that dependency DAG. Reordering renumbers cuboid ids to declaration order
and every retained order is checked geometrically against the original.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .lang import CID, Line, PBlock, Program, cidval
from .executor import execute, geometrically_equal

GEOM_TOL = 1e-4
DEFAULT_MAX_ORDERS = 24


class OrderingError(Exception):
    pass


@dataclass(frozen=True)
class OrderingSet:
    """Valid block permutations; ``canonical_index`` points at the member
    closest to declaration order."""

    orders: tuple
    canonical_index: int = 0

    def __len__(self):
        return len(self.orders)

    @property
    def canonical(self) -> tuple:
        return self.orders[self.canonical_index]


def block_dependencies(p: Program) -> list:
    """0-based dependency sets; the bounding volume is not a block."""
    deps = []
    for blk in p.blocks:
        ref = {cid - 1 for cid in blk.referenced_cids() if cid > 0}
        deps.append(ref)
    return deps


def _remap_line(line: Line, cid_map: dict) -> Line:
    params = tuple(
        cidval(cid_map[pv.value]) if pv.kind == CID else pv for pv in line.params
    )
    return Line(line.command, params)


def permuted_program(p: Program, order) -> Program:
    """Blocks rearranged to ``order`` with cuboid ids renumbered 1..N."""
    cid_map = {0: 0}
    for pos, orig in enumerate(order, start=1):
        cid_map[orig + 1] = pos
    blocks = []
    for orig in order:
        blk = p.blocks[orig]
        blocks.append(
            PBlock(
                blk.cuboid,
                tuple(_remap_line(ln, cid_map) for ln in blk.attaches),
                blk.sym,
            )
        )
    prog = Program(p.bbox, tuple(blocks))
    prog.validate()
    return prog


def _topological_orders(deps, rng):
    """Lazily yield topological orders; branch choice is shuffled by ``rng``
    so truncation samples the order space instead of biasing a prefix."""
    n = len(deps)
    dependents = [[] for _ in range(n)]
    indeg = [0] * n
    for i, ds in enumerate(deps):
        indeg[i] = len(ds)
        for j in ds:
            dependents[j].append(i)

    order: list = []
    avail = sorted(i for i in range(n) if indeg[i] == 0)

    def rec(avail):
        if not avail:
            if len(order) == n:
                yield tuple(order)
            return
        picks = list(avail)
        rng.shuffle(picks)
        for node in picks:
            order.append(node)
            opened = []
            for m in dependents[node]:
                indeg[m] -= 1
                if indeg[m] == 0:
                    opened.append(m)
            nxt = [x for x in avail if x != node] + opened
            yield from rec(nxt)
            for m in dependents[node]:
                indeg[m] += 1
            order.pop()

    if n == 0:
        yield ()
        return
    yield from rec(avail)


def enumerate_valid_orders(
    p: Program, max_orders: int = DEFAULT_MAX_ORDERS, seed: int = 0
) -> OrderingSet:
    """All geometry-preserving block orders, capped at ``max_orders``.

    The original order is always retained; when more topological orders
    exist than the cap, a fixed-seed random sample of them is kept.
    Raises OrderingError on a cyclic dependency (corrupted input).
    """
    deps = block_dependencies(p)
    n = len(deps)
    for i, ds in enumerate(deps):
        if i in ds:
            raise OrderingError("block depends on itself")
    identity = tuple(range(n))
    base_geom = execute(p)
    rng = np.random.default_rng(seed)

    kept = [identity]
    seen = {identity}
    produced = 0
    for order in _topological_orders(deps, rng):
        produced += 1
        if order in seen:
            continue
        if len(kept) >= max_orders:
            break
        candidate = permuted_program(p, order)
        if geometrically_equal(base_geom, execute(candidate), GEOM_TOL):
            kept.append(order)
            seen.add(order)
    if produced == 0 and n > 0:
        raise OrderingError("cyclic block dependencies")
    kept.sort()
    return OrderingSet(tuple(kept), canonical_index=kept.index(min(kept)))


def canonical_order(os: OrderingSet, p: Program) -> tuple:
    """The member closest to declaration order (lexicographically minimal)."""
    if not os.orders:
        raise OrderingError("empty ordering set")
    return min(os.orders)


def filter_bad_orders(dataset, lib, tau_o: float = 1.0, cfg=None):
    """Drop orders whose best refactoring scores worse than the best order
    by more than ``tau_o``; at least one order survives per program."""
    from .search import SearchConfig, per_order_costs

    cfg = cfg or SearchConfig()
    new_entries = []
    for entry in dataset.entries:
        if len(entry.orders) <= 1:
            new_entries.append(entry)
            continue
        costs = per_order_costs(entry.program, entry.orders, lib, cfg)
        best = min(costs)
        kept = tuple(
            o for o, c in zip(entry.orders.orders, costs) if c - best <= tau_o
        )
        if not kept:
            kept = (entry.orders.orders[int(np.argmin(costs))],)
        os = OrderingSet(kept, canonical_index=kept.index(min(kept)))
        new_entries.append(replace(entry, orders=os))
    return replace(dataset, entries=tuple(new_entries))
