"""Macro discovery over a program corpus.

Alternates a proposal phase and an integration phase. Proposal samples a
program and one of its valid orders, clusters structurally matching
programs by parameter similarity, abstracts the cluster into a single
program with Const/shared/expression slots, and cuts candidate macros out
of contiguous spans (plus their generalizations). Integration greedily
walks candidates ranked by estimated gain times proposal frequency,
keeping a candidate only when it lowers the library objective on a
subsample, with an escape hatch that swaps out functions the newcomer
makes infrequent. Orders that score badly under the grown library are
filtered between rounds.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np

from .lang import (
    ATTACH, CID, CUBOID, F, FLOAT_DOMAINS, SIGNATURES, SQUEEZE,
    Program, round4,
)
from .library import (
    BBOX_DIMS, Const, Formal, FormalRef, Library, LinExpr, Macro,
    ObjectiveWeights, RefactoredProgram,
    base_call_cost, macro_call_cost, macro_gain, macro_key, match_macro,
    named_macro, program_cost, refactored_counts, weighted_dof,
)
from .ordering import OrderingSet, filter_bad_orders, permuted_program
from .search import SearchConfig, best_program

EPS = 1e-9


@dataclass(frozen=True)
class DatasetEntry:
    uid: int
    program: Program
    orders: OrderingSet
    family: str = ""
    planted_span: tuple | None = None


@dataclass(frozen=True)
class Dataset:
    entries: tuple

    def __post_init__(self):
        if not self.entries:
            raise ValueError("dataset must not be empty")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def by_uid(self, uid: int) -> DatasetEntry:
        for e in self.entries:
            if e.uid == uid:
                return e
        raise KeyError(uid)


@dataclass(frozen=True)
class DiscoveryConfig:
    num_rounds: int = 3
    num_proposal_steps: int = 500
    num_integration_steps: int = 20
    cluster_size: int = 20
    p_thresh: float = 0.70
    gen_edits: int = 2
    subsample_size: int = 100
    tau_o: float = 1.0
    infrequent_ratio: float = 0.5
    seed: int = 0
    min_improve: float = 1e-6
    search: SearchConfig = field(default_factory=SearchConfig)
    # ablation switches
    uniform_cluster_sampling: bool = False
    disable_generalize: bool = False
    disable_order_filter: bool = False
    disable_validity_criteria: bool = False
    best_first_instead_of_beam: bool = False

    def __post_init__(self):
        if not (0.0 < self.p_thresh <= 1.0):
            raise ValueError("p_thresh must lie in (0, 1]")
        if self.best_first_instead_of_beam and self.search.strategy != "best_first":
            object.__setattr__(
                self, "search", replace(self.search, strategy="best_first")
            )


# --- structural clusters ----------------------------------------------------

@dataclass(frozen=True)
class ClusterInfo:
    seed_uid: int
    seed_program: Program
    order: tuple
    member_uids: tuple
    member_lines: tuple  # aligned permuted line tuples, one per member
    norms: tuple
    norm_max: float


def _signature(p: Program, order) -> tuple:
    q = permuted_program(p, order)
    return tuple(
        (ln.command, tuple(pv.value for pv in ln.params if pv.kind == CID))
        for ln in q.lines()
    )


def _float_vector(lines) -> np.ndarray:
    vals = [pv.value for ln in lines for pv in ln.params if pv.kind == F]
    return np.array(vals, dtype=float)


class _CorpusIndex:
    """Per-entry order sets plus cached signatures and permuted lines."""

    def __init__(self, dataset: Dataset):
        self.entries = dataset.entries
        self.order_sets = [set(e.orders.orders) for e in dataset.entries]
        self._sig_cache: dict = {}
        self._line_cache: dict = {}

    def signature(self, idx: int, order) -> tuple:
        key = (idx, order)
        if key not in self._sig_cache:
            self._sig_cache[key] = _signature(self.entries[idx].program, order)
        return self._sig_cache[key]

    def lines(self, idx: int, order) -> tuple:
        key = (idx, order)
        if key not in self._line_cache:
            self._line_cache[key] = tuple(
                permuted_program(self.entries[idx].program, order).lines()
            )
        return self._line_cache[key]


def form_cluster(
    dataset: Dataset, cfg: DiscoveryConfig, rng: np.random.Generator,
    index: _CorpusIndex | None = None,
) -> ClusterInfo:
    """Sample a seed program and order, then parameter-similar matches.

    Matching programs share the seed's command/cuboid-id structure under
    the seed's order and admit that order themselves. Members are drawn
    with probability proportional to 1 - n/n* (floored at 0.01 so the
    farthest match keeps nonzero mass), where n is the L2 distance of
    continuous values to the seed.
    """
    index = index or _CorpusIndex(dataset)
    seed_idx = int(rng.integers(len(dataset.entries)))
    seed = dataset.entries[seed_idx]
    order = seed.orders.orders[int(rng.integers(len(seed.orders.orders)))]
    sig = index.signature(seed_idx, order)

    match_idx = []
    for i, entry in enumerate(dataset.entries):
        if len(entry.program.blocks) != len(seed.program.blocks):
            continue
        if order not in index.order_sets[i]:
            continue
        if index.signature(i, order) == sig:
            match_idx.append(i)

    seed_vec = _float_vector(index.lines(seed_idx, order))
    norms = np.array(
        [np.linalg.norm(_float_vector(index.lines(i, order)) - seed_vec) for i in match_idx]
    )
    k = min(cfg.cluster_size, len(match_idx))
    if cfg.uniform_cluster_sampling or len(match_idx) == 1:
        weights = np.full(len(match_idx), 1.0)
    else:
        nmax = float(norms.max())
        weights = (1.0 - norms / nmax) if nmax > 0 else np.full(len(match_idx), 1.0)
        weights = np.maximum(weights, 0.01)
    weights = weights / weights.sum()
    chosen = rng.choice(len(match_idx), size=k, replace=False, p=weights)
    chosen = sorted(int(c) for c in chosen)

    return ClusterInfo(
        seed_uid=seed.uid,
        seed_program=seed.program,
        order=order,
        member_uids=tuple(dataset.entries[match_idx[c]].uid for c in chosen),
        member_lines=tuple(index.lines(match_idx[c], order) for c in chosen),
        norms=tuple(float(norms[c]) for c in chosen),
        norm_max=float(norms.max()) if len(norms) else 0.0,
    )


# --- abstracted programs ----------------------------------------------------

@dataclass(frozen=True)
class AbsSlot:
    kind: str
    spec: object  # Const | FormalRef | LinExpr
    lo: float | None = None
    hi: float | None = None


@dataclass(frozen=True)
class AbsCall:
    macro: Macro | None  # None for a base command
    command: str
    pos: int
    length: int
    slots: tuple  # of AbsSlot


@dataclass(frozen=True)
class AbstractedProgram:
    cluster: ClusterInfo
    calls: tuple
    formal_kinds: tuple
    formal_bounds: tuple
    alive_uids: tuple
    total_members: int


def _constraint_score(m: Macro, w: ObjectiveWeights) -> float:
    raw = sum(base_call_cost(cmd, w) for cmd, _ in m.body)
    return raw - macro_call_cost(m, w)


def _preference_order(lib: Library, w: ObjectiveWeights):
    return sorted(lib.macros, key=lambda m: (-_constraint_score(m, w), m.name))


def _mode(values):
    counts: dict = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    best = max(counts.values())
    winners = sorted((repr(k), k) for k, v in counts.items() if v == best)
    return winners[0][1]


class _Abstractor:
    """Greedy cover of a cluster by the most-constraining valid functions,
    then per-slot tightening: Const, then reuse/expression, then free.

    Every choice must stay valid for at least ``p_thresh`` of the cluster;
    the members consistent with all choices so far form the alive set."""

    def __init__(self, cluster: ClusterInfo, lib: Library, cfg: DiscoveryConfig,
                 w: ObjectiveWeights):
        self.cluster = cluster
        self.lib = lib
        self.cfg = cfg
        self.w = w
        self.total = len(cluster.member_uids)
        self.need = max(1, math.ceil(cfg.p_thresh * self.total - EPS))
        self.alive = list(range(self.total))
        self.formal_kinds: list = []
        self.formal_bounds: list = []
        self.formal_values: list = []  # per formal: value per member (list)
        self.calls: list = []

    def run(self) -> AbstractedProgram:
        lines0 = self.cluster.member_lines[0]
        n = len(lines0)
        prefs = _preference_order(self.lib, self.w)
        eps = self.cfg.search.eps_match
        pos = 0
        while pos < n:
            picked = None
            for m in prefs:
                end = pos + len(m.body)
                if end > n or m.body[0][0] != lines0[pos].command:
                    continue
                matched, args_per_member = [], {}
                for mem in self.alive:
                    lines = self.cluster.member_lines[mem]
                    bbox = (lines[0].value(0), lines[0].value(1), lines[0].value(2))
                    res = match_macro(m, lines[pos:end], bbox, eps)
                    if res is not None:
                        matched.append(mem)
                        args_per_member[mem] = res[0]
                if len(matched) >= self.need:
                    picked = (m, matched, args_per_member)
                    break
            if picked is not None:
                m, matched, args = picked
                self.alive = matched
                arg_values = []
                for fi in range(len(m.formals)):
                    col = [None] * self.total
                    for mem in matched:
                        col[mem] = args[mem][fi].value
                    arg_values.append(col)
                slots = tuple(
                    self._abstract_slot(arg_values[fi], f.kind, f.lo, f.hi)
                    for fi, f in enumerate(m.formals)
                )
                self.calls.append(AbsCall(m, m.body[0][0], pos, len(m.body), slots))
                pos += len(m.body)
                continue
            # base command: always valid for every member at aligned lines
            line = lines0[pos]
            sig = SIGNATURES[line.command]
            doms = FLOAT_DOMAINS.get(line.command, {})
            slots = []
            for si, kind in enumerate(sig):
                col = [
                    self.cluster.member_lines[mem][pos].params[si].value
                    for mem in range(self.total)
                ]
                lo, hi = doms.get(si, (None, None))
                slots.append(self._abstract_slot(col, kind, lo, hi))
            self.calls.append(AbsCall(None, line.command, pos, 1, tuple(slots)))
            pos += 1

        return AbstractedProgram(
            cluster=self.cluster,
            calls=tuple(self.calls),
            formal_kinds=tuple(self.formal_kinds),
            formal_bounds=tuple(self.formal_bounds),
            alive_uids=tuple(self.cluster.member_uids[i] for i in self.alive),
            total_members=self.total,
        )

    # slot helpers ----------------------------------------------------------

    def _new_formal(self, values, kind, lo, hi) -> AbsSlot:
        idx = len(self.formal_kinds)
        self.formal_kinds.append(kind)
        self.formal_bounds.append((lo, hi))
        self.formal_values.append(values)
        return AbsSlot(kind, FormalRef(idx), lo, hi)

    def _abstract_slot(self, values, kind, lo, hi) -> AbsSlot:
        if kind == F:
            return self._abstract_float_slot(values, lo, hi)
        alive = self.alive
        c = _mode([values[m] for m in alive])
        keep = [m for m in alive if values[m] == c]
        if len(keep) >= self.need:
            self.alive = keep
            return AbsSlot(kind, Const(c), lo, hi)
        for gi, gkind in enumerate(self.formal_kinds):
            if gkind != kind:
                continue
            gvals = self.formal_values[gi]
            keep = [m for m in alive if gvals[m] is not None and values[m] == gvals[m]]
            if len(keep) >= self.need:
                self.alive = keep
                return AbsSlot(kind, FormalRef(gi), lo, hi)
        return self._new_formal(values, kind, lo, hi)

    def _abstract_float_slot(self, values, lo, hi) -> AbsSlot:
        eps = self.cfg.search.eps_match
        alive = self.alive
        v = np.array([float(values[m]) for m in alive])
        # constants snap to a 0.01 grid so near-identical proposals collapse
        c = round(float(np.median(v)), 2)
        keep_mask = np.abs(v - c) <= eps + 1e-12
        if int(keep_mask.sum()) >= self.need:
            self.alive = [m for m, k in zip(alive, keep_mask) if k]
            return AbsSlot(F, Const(c), lo, hi)

        found = self._best_linexpr(v)
        if found is not None:
            spec, mask = found
            self.alive = [m for m, k in zip(alive, mask) if k]
            return AbsSlot(F, spec, lo, hi)
        return self._new_formal(values, F, lo, hi)

    def _best_linexpr(self, v: np.ndarray):
        """Best a*x [+ b*y] + c over earlier continuous formals and the
        member bounding-volume dims; returns (LinExpr, alive mask) or None."""
        eps = self.cfg.search.eps_match
        alive = self.alive
        ops, cols = [], []
        for gi, gkind in enumerate(self.formal_kinds):
            if gkind != F:
                continue
            gvals = self.formal_values[gi]
            if any(gvals[m] is None for m in alive):
                continue
            ops.append(gi)
            cols.append(np.array([float(gvals[m]) for m in alive]))
        for di, sym in enumerate(BBOX_DIMS):
            col = np.array(
                [float(self.cluster.member_lines[m][0].params[di].value) for m in alive]
            )
            ops.append(sym)
            cols.append(col)
        if not ops:
            return None
        X = np.stack(cols, axis=1)

        candidates = []
        for i in range(len(ops)):
            for a in (1, -1):
                candidates.append((a, i, 0, None))
        for i in range(len(ops)):
            for j in range(i + 1, len(ops)):
                for a in (1, -1):
                    for b in (1, -1):
                        candidates.append((a, i, b, j))

        best = None
        for rank, (a, i, b, j) in enumerate(candidates):
            base = a * X[:, i]
            if b:
                base = base + b * X[:, j]
            r = v - base
            c = round(float(np.median(r)), 2)
            if abs(c) < 2e-3:
                c = 0.0
            mask = np.abs(r - c) <= eps + 1e-12
            count = int(mask.sum())
            if count < self.need:
                continue
            key = (-count, 1 if b == 0 else 2, rank)
            if best is None or key < best[0]:
                best = (key, (a, i, b, j, c), mask)
        if best is None:
            return None
        _, (a, i, b, j, c), mask = best
        spec = LinExpr(a, ops[i], b if b else 0, ops[j] if j is not None else None, c)
        return spec, mask


def find_abstracted_program(
    cluster: ClusterInfo, lib: Library, cfg: DiscoveryConfig,
    w: ObjectiveWeights | None = None,
) -> AbstractedProgram:
    return _Abstractor(cluster, lib, cfg, w or cfg.search.weights).run()


# --- candidate macros -------------------------------------------------------

@dataclass
class CandidateMacro:
    macro: Macro
    coverage: set  # of (uid, start, end) line spans in cluster order
    cluster_seed: int


def _compose_macro_call(m: Macro, arg_slots) -> list | None:
    """Flatten a macro call whose arguments are themselves param specs.

    Returns virtual (command, specs) rows over the abstracted program's
    formal indices, or None when a composed expression leaves the
    unit-coefficient, two-operand family.
    """
    out = []
    for command, specs in m.body:
        row = []
        for spec in specs:
            if isinstance(spec, Const):
                row.append(spec)
                continue
            if isinstance(spec, FormalRef):
                row.append(arg_slots[spec.index].spec)
                continue
            items: dict = {}
            state = {"const": spec.c, "ok": True}

            def add(coeff, op):
                if isinstance(op, str):
                    items[op] = items.get(op, 0) + coeff
                    return
                sub = arg_slots[op].spec
                if isinstance(sub, Const):
                    state["const"] += coeff * float(sub.value)
                elif isinstance(sub, FormalRef):
                    items[sub.index] = items.get(sub.index, 0) + coeff
                else:
                    state["const"] += coeff * sub.c
                    if sub.a != 0:
                        add(coeff * sub.a, sub.x)
                    if sub.b != 0:
                        add(coeff * sub.b, sub.y)

            if spec.a != 0:
                add(spec.a, spec.x)
            if spec.b != 0:
                add(spec.b, spec.y)
            terms = [(op, coeff) for op, coeff in items.items() if coeff != 0]
            if not state["ok"] or len(terms) > 2 or any(c not in (-1, 1) for _, c in terms):
                return None
            const = round4(state["const"])
            if not terms:
                row.append(Const(const))
            elif len(terms) == 1:
                (op, coeff), = terms
                if coeff == 1 and abs(const) < EPS and isinstance(op, int):
                    row.append(FormalRef(op))
                else:
                    row.append(LinExpr(coeff, op, 0, None, const))
            else:
                (op1, c1), (op2, c2) = sorted(terms, key=lambda t: repr(t[0]))
                row.append(LinExpr(c1, op1, c2, op2, const))
        out.append((command, tuple(row)))
    return out


def _virtual_lines(abs_p: AbstractedProgram):
    """Base-command rows of the abstracted program; None marks rows whose
    macro-call composition fell outside the expression family."""
    rows: list = []
    for call in abs_p.calls:
        if call.macro is None:
            rows.append((call.command, tuple(s.spec for s in call.slots)))
            continue
        composed = _compose_macro_call(call.macro, call.slots)
        if composed is None:
            rows.extend([None] * call.length)
        else:
            rows.extend(composed)
    return rows


def _block_spans(p: Program):
    """(start, end) line spans: the bounding volume line then each block."""
    spans = [(0, 1)]
    pos = 1
    for blk in p.blocks:
        ln = len(blk.lines())
        spans.append((pos, pos + ln))
        pos += ln
    return spans


def _splits_attach_pair(span, block_spans, commands) -> bool:
    i, j = span
    for s, e in block_spans:
        if e <= i or s >= j:
            continue
        cub_in = i <= s < j
        att_in = [
            i <= t < j
            for t in range(s + 1, e)
            if commands[t] in (ATTACH, SQUEEZE)
        ]
        if not att_in:
            continue
        if (cub_in and not all(att_in)) or (not cub_in and any(att_in)):
            return True
    return False


def _extract_span_macro(vlines, span, uses) -> Macro | None:
    """Cut a span into a standalone macro with renumbered formals.

    Expressions over formals first defined outside the span degrade to
    fresh free formals.
    """
    i, j = span
    chunk = vlines[i:j]
    if any(row is None for row in chunk):
        return None
    remap: dict = {}
    formals: list = []
    body: list = []

    def intersect(fi, lo, hi):
        f = formals[fi]
        nlo = lo if f.lo is None else (f.lo if lo is None else max(f.lo, lo))
        nhi = hi if f.hi is None else (f.hi if hi is None else min(f.hi, hi))
        formals[fi] = Formal(f.kind, nlo, nhi)

    for command, specs in chunk:
        sig = SIGNATURES[command]
        doms = FLOAT_DOMAINS.get(command, {})
        row = []
        for si, (kind, spec) in enumerate(zip(sig, specs)):
            lo, hi = doms.get(si, (None, None))
            if isinstance(spec, FormalRef):
                g = spec.index
                if g not in remap:
                    remap[g] = len(formals)
                    formals.append(Formal(kind, lo, hi))
                else:
                    intersect(remap[g], lo, hi)
                row.append(FormalRef(remap[g]))
            elif isinstance(spec, LinExpr):
                if all(isinstance(op, str) or op in remap for op in spec.operands()):
                    row.append(
                        LinExpr(
                            spec.a,
                            remap[spec.x] if isinstance(spec.x, int) else spec.x,
                            spec.b,
                            (remap[spec.y] if isinstance(spec.y, int) else spec.y)
                            if spec.b else None,
                            spec.c,
                        )
                    )
                else:
                    row.append(FormalRef(len(formals)))
                    formals.append(Formal(kind, lo, hi))
            else:
                row.append(spec)
        body.append((command, tuple(row)))
    try:
        return named_macro(tuple(formals), tuple(body), uses=tuple(sorted(set(uses))))
    except Exception:
        return None


def propose_macros(
    abs_p: AbstractedProgram, cfg: DiscoveryConfig,
    w: ObjectiveWeights | None = None,
) -> list:
    """Candidate macros from contiguous spans of the abstracted program.

    A valid span has 2-6 lines, at most 8 formals, contains a Cuboid or an
    attach, removes weighted degrees of freedom versus raw lines, and only
    separates a cuboid from its attachments when it starts at a block
    boundary. The validity criteria can be switched off for ablation.
    """
    w = w or cfg.search.weights
    vlines = _virtual_lines(abs_p)
    n = len(vlines)
    seed_perm = permuted_program(abs_p.cluster.seed_program, abs_p.cluster.order)
    block_spans = _block_spans(seed_perm)
    block_starts = {s for s, _ in block_spans}
    commands = [row[0] if row else None for row in vlines]
    uses = [c.macro.name for c in abs_p.calls if c.macro is not None]

    out = []
    for i in range(n):
        for j in range(i + 2, min(i + 6, n) + 1):
            if any(row is None for row in vlines[i:j]):
                continue
            if not cfg.disable_validity_criteria:
                if not any(c in (CUBOID, ATTACH) for c in commands[i:j]):
                    continue
                if i not in block_starts and _splits_attach_pair((i, j), block_spans, commands):
                    continue
            span_uses = [
                call.macro.name for call in abs_p.calls
                if call.macro is not None and call.pos < j and call.pos + call.length > i
            ]
            macro = _extract_span_macro(vlines, (i, j), span_uses)
            if macro is None or macro.arity > 8:
                continue
            if not cfg.disable_validity_criteria:
                slots = [
                    (kind, spec)
                    for command, specs in macro.body
                    for kind, spec in zip(SIGNATURES[command], specs)
                ]
                raw = sum(w.of_kind(k) for k, _ in slots)
                if raw - weighted_dof(slots, w) <= EPS:
                    continue
            coverage = {(uid, i, j) for uid in abs_p.alive_uids}
            out.append(CandidateMacro(macro, coverage, abs_p.cluster.seed_uid))
    return out


# --- generalization ---------------------------------------------------------

def _struct_key(formals, body) -> tuple:
    return (tuple(f.kind for f in formals), body)


@dataclass
class GeneralizationGraph:
    nodes: dict = field(default_factory=dict)  # struct key -> CandidateMacro
    edges: set = field(default_factory=set)    # (specific key, general key)

    def add(self, cand: CandidateMacro) -> tuple:
        key, _ = self.add_new(cand)
        return key

    def add_new(self, cand: CandidateMacro):
        key = _struct_key(cand.macro.formals, cand.macro.body)
        node = self.nodes.get(key)
        if node is None:
            self.nodes[key] = cand
            return key, True
        node.coverage |= cand.coverage
        return key, False

    def propagate_coverage(self) -> None:
        """Push coverage from specific macros to their generalizers."""
        changed = True
        while changed:
            changed = False
            for spec_key, gen_key in self.edges:
                spec = self.nodes[spec_key]
                gen = self.nodes[gen_key]
                before = len(gen.coverage)
                gen.coverage |= spec.coverage
                if len(gen.coverage) != before:
                    changed = True


def _freed_spec(m: Macro, slot_ids):
    """Formals/body of the variant that frees the chosen constrained slots,
    renumbered by first direct occurrence. No macro is constructed."""
    new_rows = [list(specs) for _, specs in m.body]
    temp_index = len(m.formals)
    temp_info: dict = {}
    for li, si in sorted(slot_ids):
        command = m.body[li][0]
        kind = SIGNATURES[command][si]
        lo, hi = FLOAT_DOMAINS.get(command, {}).get(si, (None, None))
        new_rows[li][si] = FormalRef(temp_index)
        temp_info[temp_index] = Formal(kind, lo, hi)
        temp_index += 1

    order: list = []
    for row in new_rows:
        for spec in row:
            if isinstance(spec, FormalRef) and spec.index not in order:
                order.append(spec.index)
    if len(order) != temp_index:
        return None
    remap = {old: new for new, old in enumerate(order)}
    new_formals = [None] * temp_index
    for old, new in remap.items():
        new_formals[new] = m.formals[old] if old < len(m.formals) else temp_info[old]

    body = []
    for li, row in enumerate(new_rows):
        specs = []
        for spec in row:
            if isinstance(spec, FormalRef):
                specs.append(FormalRef(remap[spec.index]))
            elif isinstance(spec, LinExpr):
                specs.append(
                    LinExpr(
                        spec.a, remap[spec.x] if isinstance(spec.x, int) else spec.x,
                        spec.b,
                        (remap[spec.y] if isinstance(spec.y, int) else spec.y)
                        if spec.b else None,
                        spec.c,
                    )
                )
            else:
                specs.append(spec)
        body.append((m.body[li][0], tuple(specs)))
    return tuple(new_formals), tuple(body)


def _freed_variant(m: Macro, slot_ids) -> Macro | None:
    spec = _freed_spec(m, slot_ids)
    if spec is None:
        return None
    formals, body = spec
    try:
        return named_macro(formals, body, uses=m.uses)
    except Exception:
        return None


def generalize_macros(
    cands, n_edits: int = 2, graph: GeneralizationGraph | None = None
) -> GeneralizationGraph:
    """Add every macro reachable by freeing up to ``n_edits`` constrained
    slots; generalizers inherit the coverage of what they generalize."""
    graph = graph or GeneralizationGraph()
    for cand in cands:
        base_key, is_new = graph.add_new(cand)
        if not is_new:
            # generalizations already exist; coverage reaches them via edges
            continue
        constrained = [
            (li, si)
            for li, (_, specs) in enumerate(cand.macro.body)
            for si, spec in enumerate(specs)
            if not isinstance(spec, FormalRef)
        ]
        for r in range(1, n_edits + 1):
            for combo in combinations(constrained, r):
                spec = _freed_spec(cand.macro, combo)
                if spec is None or len(spec[0]) > 8:
                    continue
                key = _struct_key(*spec)
                node = graph.nodes.get(key)
                if node is not None:
                    node.coverage |= cand.coverage
                    graph.edges.add((base_key, key))
                    continue
                try:
                    freed = named_macro(*spec, uses=cand.macro.uses)
                except Exception:
                    continue
                graph.nodes[key] = CandidateMacro(
                    freed, set(cand.coverage), cand.cluster_seed
                )
                graph.edges.add((base_key, key))
    return graph


# --- ranking and integration ------------------------------------------------

def rank_candidates(graph: GeneralizationGraph, lib: Library, dataset: Dataset,
                    w: ObjectiveWeights, exclude=frozenset()):
    """Candidates ordered by p*g: proposal frequency across the dataset
    times weighted savings per use over the best current-library cover."""
    graph.propagate_coverage()
    total = len(dataset.entries)
    scored = []
    for key, cand in graph.nodes.items():
        if key in exclude:
            continue
        p = len({uid for uid, _, _ in cand.coverage}) / total
        g = macro_gain(cand.macro, lib, w)
        scored.append((p * g, key, cand))
    scored.sort(key=lambda t: (-t[0], t[2].macro.name))
    return scored


class RefactorCache:
    """Memoizes best refactorings per (program, orders, library)."""

    def __init__(self, cfg: SearchConfig):
        self.cfg = cfg
        self.store: dict = {}

    def best(self, entry: DatasetEntry, lib: Library) -> RefactoredProgram:
        key = (entry.uid, entry.orders.orders, lib.key())
        hit = self.store.get(key)
        if hit is None:
            hit = best_program(entry.program, entry.orders, lib, self.cfg)
            self.store[key] = hit
        return hit

    def best_map(self, entries, lib: Library) -> dict:
        return {e.uid: self.best(e, lib) for e in entries}


def dataset_objective(entries, lib: Library, w: ObjectiveWeights,
                      cache: RefactorCache) -> float:
    entries = list(entries)
    total = w.lam_n * lib.size
    if not entries:
        return total
    acc = sum(program_cost(cache.best(e, lib), w) for e in entries)
    return total + acc / len(entries)


def optimize(entries, lib: Library, lib_plus: Library, w: ObjectiveWeights,
             cache: RefactorCache) -> Library:
    """Keep whichever library scores lower on the entries; ties keep the
    incumbent."""
    f_cur = dataset_objective(entries, lib, w, cache)
    f_new = dataset_objective(entries, lib_plus, w, cache)
    return lib_plus if f_new < f_cur - EPS else lib


def _usage_counts(entries, lib: Library, cache: RefactorCache) -> dict:
    counts: dict = {m.name: 0 for m in lib.macros}
    for e in entries:
        for call in cache.best(e, lib).calls:
            if call.fn in counts:
                counts[call.fn] += 1
    return counts


def find_infrequent_macros(entries, lib: Library, lib_plus: Library,
                           cache: RefactorCache, ratio: float = 0.5) -> list:
    """Macros of ``lib`` whose usage under ``lib_plus`` drops below
    ``ratio`` times their usage under ``lib``."""
    base = _usage_counts(entries, lib, cache)
    plus = _usage_counts(entries, lib_plus, cache)
    return [m for m in lib.macros if plus.get(m.name, 0) < ratio * base[m.name]]


def integration_step(cand: Macro, lib: Library, entries, cfg: DiscoveryConfig,
                     cache: RefactorCache, log: list) -> Library:
    """One greedy integration decision, including the infrequent-function
    swap branch and the attempt to re-add what the swap displaced."""
    w = cfg.search.weights
    if lib.get(cand.name) is not None:
        log.append({"macro": cand.name, "action": "duplicate"})
        return lib
    lib_plus = lib.with_macro(cand)
    new_lib = optimize(entries, lib, lib_plus, w, cache)
    if new_lib is not lib:
        log.append({"macro": cand.name, "action": "accepted"})
        return new_lib
    infreq = find_infrequent_macros(entries, lib, lib_plus, cache, cfg.infrequent_ratio)
    if not infreq:
        log.append({"macro": cand.name, "action": "rejected"})
        return lib
    swapped = lib_plus
    for m in infreq:
        swapped = swapped.without(m.name)
    new_lib = optimize(entries, lib, swapped, w, cache)
    if new_lib is lib:
        log.append({"macro": cand.name, "action": "rejected_swap"})
        return lib
    log.append({
        "macro": cand.name,
        "action": "accepted_swap",
        "removed": [m.name for m in infreq],
    })
    for m in infreq:
        with_back = optimize(entries, new_lib, new_lib.with_macro(m), w, cache)
        if with_back is not new_lib:
            log.append({"macro": m.name, "action": "readded"})
        new_lib = with_back
    return new_lib


# --- full runs ----------------------------------------------------------------

@dataclass
class DiscoveryResult:
    library: Library
    best: dict
    dataset: Dataset
    report: dict


def _subsample(dataset: Dataset, cfg: DiscoveryConfig, rng: np.random.Generator):
    k = min(len(dataset.entries), cfg.subsample_size)
    idx = sorted(int(i) for i in rng.choice(len(dataset.entries), size=k, replace=False))
    return [dataset.entries[i] for i in idx]


def run_shapemod(dataset: Dataset, cfg: DiscoveryConfig) -> DiscoveryResult:
    """Alternate proposal and integration until the subsample objective
    stops improving, then report the best programs over the full dataset."""
    w = cfg.search.weights
    rng = np.random.default_rng(cfg.seed)
    lib = Library()
    cache = RefactorCache(cfg.search)
    index = _CorpusIndex(dataset)
    uid_to_entry = {e.uid: e for e in dataset.entries}
    rounds = []

    for rnd in range(cfg.num_rounds):
        graph = GeneralizationGraph()
        for _ in range(cfg.num_proposal_steps):
            cluster = form_cluster(dataset, cfg, rng, index)
            abs_p = find_abstracted_program(cluster, lib, cfg, w)
            cands = propose_macros(abs_p, cfg, w)
            if cfg.disable_generalize:
                for c in cands:
                    graph.add(c)
            else:
                generalize_macros(cands, cfg.gen_edits, graph)

        entries = _subsample(dataset, cfg, rng)
        f_before = dataset_objective(entries, lib, w, cache)
        log: list = []

        # Greedy walk over candidates by p*g. Gains only fall as the library
        # grows, so stale heap scores are safe upper bounds; a full rebuild
        # is needed only after a swap removes functions.
        graph.propagate_coverage()
        total_entries = len(dataset.entries)
        p_by_key = {
            key: len({uid for uid, _, _ in cand.coverage}) / total_entries
            for key, cand in graph.nodes.items()
        }
        tried: set = set()
        steps = 0

        def build_heap():
            heap = []
            for key, cand in graph.nodes.items():
                if key in tried:
                    continue
                score = p_by_key[key] * macro_gain(cand.macro, lib, w)
                if score > EPS:
                    heap.append((-score, cand.macro.name, key))
            heapq.heapify(heap)
            return heap

        heap = build_heap()
        while steps < cfg.num_integration_steps and heap:
            _, name, key = heapq.heappop(heap)
            if key in tried:
                continue
            cand = graph.nodes[key]
            fresh = p_by_key[key] * macro_gain(cand.macro, lib, w)
            if heap and fresh < -heap[0][0] - 1e-12:
                if fresh > EPS:
                    heapq.heappush(heap, (-fresh, name, key))
                continue
            if fresh <= EPS:
                break
            tried.add(key)
            steps += 1
            before_names = {m.name for m in lib.macros}
            new_lib = integration_step(cand.macro, lib, entries, cfg, cache, log)
            if new_lib is not lib:
                removed = before_names - {m.name for m in new_lib.macros}
                lib = new_lib
                if removed:
                    heap = build_heap()

        for m in list(lib.macros):
            slimmer = optimize(entries, lib, lib.without(m.name), w, cache)
            if slimmer is not lib:
                log.append({"macro": m.name, "action": "removed"})
            lib = slimmer

        if not cfg.disable_order_filter:
            dataset = filter_bad_orders(dataset, lib, cfg.tau_o, cfg.search)
            index = _CorpusIndex(dataset)
            uid_to_entry = {e.uid: e for e in dataset.entries}

        f_after = dataset_objective(entries, lib, w, cache)
        rounds.append({
            "round": rnd,
            "f_before": f_before,
            "f_after": f_after,
            "library_size": lib.size,
            "macros": [m.name for m in lib.macros],
            "candidates": len(graph.nodes),
            "integration": log,
        })
        if f_before - f_after <= cfg.min_improve:
            break

    best = {e.uid: cache.best(e, lib) for e in dataset.entries}
    counts = {k: 0.0 for k in ("fn", "cid", "f", "d", "b")}
    for rp in best.values():
        for k, v in refactored_counts(rp).items():
            counts[k] += v
    n = len(dataset.entries)
    report = {
        "seed": cfg.seed,
        "rounds": rounds,
        "final_f": w.lam_n * lib.size
        + sum(program_cost(rp, w) for rp in best.values()) / n,
        "library_size": lib.size,
        "macros": [m.name for m in lib.macros],
        "mean_param_counts": {k: v / n for k, v in counts.items()},
        "mean_cont_error": sum(rp.cont_error for rp in best.values()) / n,
    }
    return DiscoveryResult(lib, best, dataset, report)


def run_baseline(dataset: Dataset, cfg: DiscoveryConfig | None = None) -> Library:
    """Naive single-pass discovery over each program's most canonical order.

    Command subsequences observed in more than 10% of programs become
    macros; a slot turns Const when at least 90% of its parameterizations
    agree exactly (discrete) or sit within 0.05 of the mean (continuous,
    Const = mean). Everything else stays a free formal.
    """
    cfg = cfg or DiscoveryConfig()
    canonical_lines = {}
    for e in dataset.entries:
        order = min(e.orders.orders)
        canonical_lines[e.uid] = tuple(permuted_program(e.program, order).lines())

    windows: dict = {}  # command tuple -> list of (uid, line chunk)
    for uid in sorted(canonical_lines):
        lines = canonical_lines[uid]
        n = len(lines)
        for i in range(n):
            for j in range(i + 2, min(i + 6, n) + 1):
                chunk = lines[i:j]
                windows.setdefault(tuple(ln.command for ln in chunk), []).append((uid, chunk))

    total = len(dataset.entries)
    macros = []
    seen: set = set()
    for key in sorted(windows):
        occs = windows[key]
        if len({uid for uid, _ in occs}) <= 0.10 * total:
            continue
        formals: list = []
        body: list = []
        for li, command in enumerate(key):
            sig = SIGNATURES[command]
            doms = FLOAT_DOMAINS.get(command, {})
            row = []
            for si, kind in enumerate(sig):
                vals = [chunk[li].params[si].value for _, chunk in occs]
                lo, hi = doms.get(si, (None, None))
                if kind == F:
                    mean = float(np.mean(vals))
                    within = sum(abs(v - mean) <= 0.05 for v in vals)
                    if within >= 0.90 * len(vals):
                        row.append(Const(round4(mean)))
                        continue
                else:
                    c = _mode(vals)
                    if sum(v == c for v in vals) >= 0.90 * len(vals):
                        row.append(Const(c))
                        continue
                row.append(FormalRef(len(formals)))
                formals.append(Formal(kind, lo, hi))
            body.append((command, tuple(row)))
        m = named_macro(tuple(formals), tuple(body))
        if macro_key(m) not in seen:
            seen.add(macro_key(m))
            macros.append(m)
    return Library(tuple(macros))
