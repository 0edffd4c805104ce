"""Synthetic corpus generation and corpus file IO.

Programs come from a handful of structural family templates (tables,
chairs, shelf units, stools) so that cluster formation has real structure
to find. Every family fixes its commands, cuboid references, and discrete
values, and samples continuous parameters per member. A planted macro can
be embedded verbatim (up to small jitter) into a chosen fraction of
programs, which gives discovery runs a known ground truth.

On disk a corpus is one ``.sap`` text file per program plus a manifest:
a JSON list of entries carrying the file path and the serialized valid
orders (block-index permutations).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .discovery import Dataset, DatasetEntry
from .executor import execute
from .lang import (
    PBlock, Program, attach_line, cuboid_line, lines_to_program, parse_program,
    print_program, reflect_line, round4, squeeze_line, translate_line,
)
from .library import Const, Formal, FormalRef, Macro, expand, named_macro
from .ordering import OrderingSet, enumerate_valid_orders


class CorpusError(Exception):
    pass


#: Default planted macro: a mirrored leg pair with shared thickness, fixed
#: height and depth position, and a free width position.
PLANTED_LEG_PAIR = named_macro(
    formals=(Formal("f", 0.0, None), Formal("f", 0.0, 1.0)),
    body=(
        ("Cuboid", (FormalRef(0), Const(0.42), FormalRef(0), Const(True))),
        ("attach", (Const(0), Const(0.5), Const(0.0), Const(0.5),
                    FormalRef(1), Const(0.0), Const(0.2))),
        ("reflect", (Const("X"),)),
    ),
)

DEFAULT_FAMILIES = (
    ("relation_table", 3),
    ("chair", 3),
    ("shelf_unit_m2", 2),
    ("shelf_unit_m3", 1),
    ("stool_stretcher", 2),
    ("box_shelf", 1),
)


@dataclass(frozen=True)
class CorpusSpec:
    total: int = 200
    seed: int = 0
    families: tuple = DEFAULT_FAMILIES  # (template name, weight)
    planted_macro: Macro | None = None
    planted_fraction: float = 0.0
    max_orders: int = 8
    jitter: float = 0.018

    def __post_init__(self):
        if self.total < 1:
            raise CorpusError("corpus must hold at least one program")
        if not (0.0 <= self.planted_fraction <= 1.0):
            raise CorpusError("planted fraction must lie in [0, 1]")
        if self.planted_fraction > 0 and self.planted_macro is None:
            object.__setattr__(self, "planted_macro", PLANTED_LEG_PAIR)


def _u(rng, lo, hi):
    return round4(rng.uniform(lo, hi))


def _jit(rng, v, amp, lo=None, hi=None):
    out = v + rng.uniform(-amp, amp)
    if lo is not None:
        out = max(lo, out)
    if hi is not None:
        out = min(hi, out)
    return round4(out)


def _jitter_lines(lines, rng, amp):
    """Perturb every continuous value of the lines by at most ``amp``."""
    out = []
    for ln in lines:
        params = []
        for pv in ln.params:
            if pv.kind != "f":
                params.append(pv.value)
                continue
            lo, hi = (1e-3, None) if ln.command == "Cuboid" else (0.0, 1.0)
            params.append(_jit(rng, pv.value, amp, lo, hi))
        if ln.command == "Cuboid":
            out.append(cuboid_line(params[0], params[1], params[2], ln.value(3)))
        elif ln.command == "attach":
            out.append(attach_line(*params))
        elif ln.command == "squeeze":
            out.append(squeeze_line(ln.value(0), ln.value(1), ln.value(2),
                                    params[3], params[4]))
        elif ln.command == "translate":
            out.append(translate_line(ln.value(0), ln.value(1), params[2]))
        else:
            out.append(ln)
    return out


def _bbox(rng):
    return cuboid_line(_u(rng, 0.9, 1.1), _u(rng, 0.9, 1.1), _u(rng, 0.9, 1.1), True)


def _leg_pair_block(rng, z: float):
    lw = _u(rng, 0.04, 0.14)
    return PBlock(
        cuboid_line(lw, _jit(rng, 0.42, 0.018, 0.05), lw),
        (attach_line(0, 0.5, _jit(rng, 0.0, 0.018, 0.0), 0.5,
                     _u(rng, 0.12, 0.30), _jit(rng, 0.0, 0.018, 0.0),
                     _jit(rng, z, 0.018, 0.0, 1.0)),),
        reflect_line("X"),
    )


def _top_slab_block(rng, w, d):
    return PBlock(
        cuboid_line(_u(rng, 0.65 * w, 0.95 * w), _u(rng, 0.05, 0.1),
                    _u(rng, 0.65 * d, 0.95 * d)),
        (attach_line(0, 0.5, 1.0, 0.5, 0.5, 1.0, 0.5),),
    )


def _instantiate_planted(macro: Macro, rng, amp):
    """Sample in-bounds arguments, expand, and jitter the body values."""
    args = []
    for f in macro.formals:
        if f.kind != "f":
            raise CorpusError("planted macros may only take continuous formals")
        lo = 0.03 if f.lo is None else max(f.lo, 0.03)
        hi = 0.4 if f.hi is None else min(f.hi, 0.4)
        args.append(round4(lo + (hi - lo) * (0.25 + 0.5 * rng.random())))
    lines = expand(macro, args, bbox_dims=(1.0, 1.0, 1.0))
    return _jitter_lines(lines, rng, amp)


def _build_planted_table(rng, spec: CorpusSpec):
    bbox = _bbox(rng)
    w, d = bbox.value(0), bbox.value(2)
    top = _top_slab_block(rng, w, d)
    chunk = _instantiate_planted(spec.planted_macro, rng, spec.jitter)
    planted_blocks = lines_to_program([bbox] + chunk).blocks
    back = _leg_pair_block(rng, 0.8)
    prog = Program(bbox, (top,) + planted_blocks + (back,))
    start = 1 + len(top.lines())
    span = (start, start + len(chunk))
    return prog, span


def _build_relation_table(rng, spec):
    bbox = _bbox(rng)
    w, h, d = (bbox.value(i) for i in range(3))
    th = _u(rng, 0.05, 0.1)
    col = PBlock(
        cuboid_line(_u(rng, 0.15, 0.35), _jit(rng, h - th, spec.jitter, 0.05), _u(rng, 0.15, 0.35)),
        (attach_line(0, 0.5, 0.0, 0.5, 0.5, 0.0, 0.5),),
    )
    top = PBlock(
        cuboid_line(_u(rng, 0.65 * w, 0.95 * w), th, _u(rng, 0.65 * d, 0.95 * d)),
        (attach_line(0, 0.5, 1.0, 0.5, 0.5, 1.0, 0.5),),
    )
    return Program(bbox, (col, top)), None


def _build_chair(rng, spec):
    bbox = _bbox(rng)
    w, h, d = (bbox.value(i) for i in range(3))
    st = _u(rng, 0.05, 0.09)
    ys = _u(rng, 0.42, 0.52)
    seat = PBlock(
        cuboid_line(_u(rng, 0.72 * w, 0.95 * w), st, _u(rng, 0.72 * d, 0.95 * d)),
        (attach_line(0, 0.5, 0.5, 0.5, 0.5, ys, 0.5),),
    )
    seat_top = ys * h + st / 2
    back = PBlock(
        cuboid_line(_u(rng, 0.72 * w, 0.95 * w),
                    round4((h - seat_top) * rng.uniform(0.80, 0.95)),
                    _u(rng, 0.04, 0.08)),
        (attach_line(1, 0.5, 0.0, 0.9, 0.5, 1.0, 0.92),),
    )
    legs_front = PBlock(
        cuboid_line(_u(rng, 0.04, 0.12), _jit(rng, ys * h - st / 2, spec.jitter, 0.05),
                    _u(rng, 0.04, 0.12)),
        (attach_line(0, 0.5, 0.0, 0.5, _u(rng, 0.12, 0.28), 0.0,
                     _jit(rng, 0.22, spec.jitter, 0.0, 1.0)),),
        reflect_line("X"),
    )
    legs_back = PBlock(
        cuboid_line(_u(rng, 0.04, 0.12), _jit(rng, ys * h - st / 2, spec.jitter, 0.05),
                    _u(rng, 0.04, 0.12)),
        (attach_line(0, 0.5, 0.0, 0.5, _u(rng, 0.12, 0.28), 0.0,
                     _jit(rng, 0.78, spec.jitter, 0.0, 1.0)),),
        reflect_line("X"),
    )
    return Program(bbox, (seat, back, legs_front, legs_back)), None


def _build_shelf_unit(rng, spec, m):
    bbox = _bbox(rng)
    w, h, d = (bbox.value(i) for i in range(3))
    wall = PBlock(
        cuboid_line(_u(rng, 0.03, 0.07), _u(rng, 0.9 * h, 0.99 * h), _u(rng, 0.85 * d, 0.98 * d)),
        (attach_line(0, 0.0, 0.5, 0.5, 0.0, 0.5, 0.5),),
        reflect_line("X"),
    )
    shelf = PBlock(
        cuboid_line(_u(rng, 0.78 * w, 0.9 * w), _u(rng, 0.03, 0.06), _u(rng, 0.78 * d, 0.95 * d)),
        (attach_line(0, 0.5, 0.5, 0.5, 0.5, _u(rng, 0.08, 0.12), 0.5),),
        translate_line("Y", m, _u(rng, 0.55, 0.72)),
    )
    return Program(bbox, (wall, shelf)), None


def _build_stool_stretcher(rng, spec):
    bbox = _bbox(rng)
    w, h, d = (bbox.value(i) for i in range(3))
    lt = _u(rng, 0.05, 0.1)
    lh = _u(rng, 0.5 * h, 0.7 * h)
    leg1 = PBlock(
        cuboid_line(lt, lh, lt),
        (attach_line(0, 0.5, 0.0, 0.5, 0.15, 0.0, 0.5),),
    )
    leg2 = PBlock(
        cuboid_line(_jit(rng, lt, spec.jitter, 0.03), _jit(rng, lh, spec.jitter, 0.1),
                    _jit(rng, lt, spec.jitter, 0.03)),
        (attach_line(0, 0.5, 0.0, 0.5, 0.85, 0.0, 0.5),),
    )
    seat = PBlock(
        cuboid_line(_u(rng, 0.8 * w, 0.95 * w), _u(rng, 0.05, 0.1), _u(rng, 0.5 * d, 0.8 * d)),
        (attach_line(0, 0.5, 1.0, 0.5, 0.5, 1.0, 0.5),),
    )
    bar = PBlock(
        cuboid_line(0.3, _u(rng, 0.03, 0.06), _u(rng, 0.03, 0.06)),
        (squeeze_line(1, 2, "right", 0.5, _u(rng, 0.35, 0.65)),),
    )
    return Program(bbox, (leg1, leg2, seat, bar)), None


def _build_box_shelf(rng, spec):
    bbox = _bbox(rng)
    w, h, d = (bbox.value(i) for i in range(3))
    wall = PBlock(
        cuboid_line(_u(rng, 0.03, 0.07), _u(rng, 0.9 * h, 0.99 * h), _u(rng, 0.85 * d, 0.98 * d)),
        (attach_line(0, 0.0, 0.5, 0.5, 0.0, 0.5, 0.5),),
        reflect_line("X"),
    )
    shelf = PBlock(
        cuboid_line(_u(rng, 0.78 * w, 0.9 * w), _u(rng, 0.03, 0.06), _u(rng, 0.78 * d, 0.95 * d)),
        (attach_line(0, 0.5, 0.5, 0.5, 0.5, _u(rng, 0.3, 0.7), 0.5),),
    )
    return Program(bbox, (wall, shelf)), None


_TEMPLATES = {
    "planted_table": _build_planted_table,
    "relation_table": _build_relation_table,
    "chair": _build_chair,
    "shelf_unit_m2": lambda rng, spec: _build_shelf_unit(rng, spec, 2),
    "shelf_unit_m3": lambda rng, spec: _build_shelf_unit(rng, spec, 3),
    "stool_stretcher": _build_stool_stretcher,
    "box_shelf": _build_box_shelf,
}


def _assignment(spec: CorpusSpec):
    n_planted = int(round(spec.planted_fraction * spec.total)) if spec.planted_macro else 0
    rest = spec.total - n_planted
    weights = np.array([wgt for _, wgt in spec.families], dtype=float)
    weights = weights / weights.sum()
    counts = np.floor(weights * rest).astype(int)
    short = rest - int(counts.sum())
    for i in range(short):
        counts[i % len(counts)] += 1
    names = ["planted_table"] * n_planted
    for (name, _), c in zip(spec.families, counts):
        names.extend([name] * int(c))
    return names


def generate_corpus(spec: CorpusSpec) -> Dataset:
    """Deterministic corpus for the given spec.

    Every program round-trips through text, executes without warnings, and
    carries its enumerated valid orders.
    """
    rng = np.random.default_rng(spec.seed)
    entries = []
    for uid, family in enumerate(_assignment(spec)):
        prog, span = _TEMPLATES[family](rng, spec)
        prog.validate()
        reparsed = parse_program(print_program(prog))
        if reparsed != prog:
            raise CorpusError(f"template {family} produced a non-canonical program")
        geom = execute(prog)
        if geom.warnings:
            raise CorpusError(f"template {family} produced warnings: {geom.warnings}")
        orders = enumerate_valid_orders(prog, spec.max_orders, seed=spec.seed + uid)
        entries.append(DatasetEntry(uid, prog, orders, family, span))
    return Dataset(tuple(entries))


# --- corpus files ------------------------------------------------------------

def save_corpus(dataset: Dataset, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = []
    for e in dataset.entries:
        name = f"prog_{e.uid:04d}.sap"
        (out / name).write_text(print_program(e.program))
        manifest.append({
            "path": name,
            "orders": [list(o) for o in e.orders.orders],
            "family": e.family,
            "planted_span": list(e.planted_span) if e.planted_span else None,
        })
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_corpus(manifest_path, max_orders: int = 8) -> Dataset:
    path = Path(manifest_path)
    rows = json.loads(path.read_text())
    entries = []
    for uid, row in enumerate(rows):
        prog = parse_program((path.parent / row["path"]).read_text())
        if row.get("orders"):
            orders = tuple(tuple(o) for o in row["orders"])
            oset = OrderingSet(orders, canonical_index=orders.index(min(orders)))
        else:
            oset = enumerate_valid_orders(prog, max_orders, seed=uid)
        span = tuple(row["planted_span"]) if row.get("planted_span") else None
        entries.append(DatasetEntry(uid, prog, oset, row.get("family", ""), span))
    return Dataset(tuple(entries))
