"""Function library: base commands plus discovered macros, and the objective.

A macro is a named sequence of base-command lines whose parameter slots are
filled by one of three spec forms:

* ``Const(v)``        -- a fixed value,
* ``FormalRef(i)``    -- the macro's i-th formal argument,
* ``LinExpr(...)``    -- ``a*x + b*y + c`` with ``a, b in {-1, 0, 1}`` over
  earlier formals and/or the bounding-volume dims, continuous slots only.

Formals are numbered by their first direct reference in the body, and every
formal has at least one direct reference before any expression uses it; this
keeps expansion single-pass and macro identity canonical.

The library objective is
``lam_n * |L| + mean over programs of (sum_kind lam_kind * count_kind
+ lam_eps * continuous_error)``, evaluated on the best refactoring of each
program.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from functools import lru_cache

from .lang import (
    ATTACH, B, CID, COMMANDS, CUBOID, D, F, FLOAT_DOMAINS, FN,
    PARAM_KINDS, SIGNATURES, SQUEEZE,
    Line, ParamValue, bval, cidval, dval, fval,
)

BBOX_DIMS = ("bbox_w", "bbox_h", "bbox_d")
BASE_FN_COUNT = 5


class LibraryError(Exception):
    pass


@dataclass(frozen=True, slots=True)
class Const:
    value: object


@dataclass(frozen=True, slots=True)
class FormalRef:
    index: int


@dataclass(frozen=True, slots=True)
class LinExpr:
    """a*x + b*y + c over earlier formals (int index) or bbox dims (symbol)."""

    a: int
    x: object
    b: int = 0
    y: object = None
    c: float = 0.0

    def operands(self):
        ops = []
        if self.a != 0:
            ops.append(self.x)
        if self.b != 0:
            ops.append(self.y)
        return ops


@dataclass(frozen=True, slots=True)
class Formal:
    kind: str
    lo: float | None = None
    hi: float | None = None


@dataclass(frozen=True, eq=False)
class Macro:
    name: str
    formals: tuple
    body: tuple  # of (command, (spec, ...))
    uses: tuple = ()  # names of earlier macros flattened into this body

    def __eq__(self, other):
        if not isinstance(other, Macro):
            return NotImplemented
        return (self.name, self.formals, self.body, self.uses) == (
            other.name, other.formals, other.body, other.uses
        )

    def __hash__(self):
        return self._hash

    def __post_init__(self):
        object.__setattr__(
            self, "_hash", hash((self.name, self.formals, self.body, self.uses))
        )
        seen: set = set()
        for command, specs in self.body:
            sig = SIGNATURES.get(command)
            if sig is None:
                raise LibraryError(f"unknown command {command!r} in macro body")
            if len(specs) != len(sig):
                raise LibraryError(f"{command} slot arity mismatch in macro body")
            for kind, spec in zip(sig, specs):
                if isinstance(spec, FormalRef):
                    if not 0 <= spec.index < len(self.formals):
                        raise LibraryError("formal reference out of range")
                    if self.formals[spec.index].kind != kind:
                        raise LibraryError("formal kind does not match its slot")
                    seen.add(spec.index)
                elif isinstance(spec, LinExpr):
                    if kind != F:
                        raise LibraryError("expressions only fill continuous slots")
                    for op in spec.operands():
                        if isinstance(op, int):
                            if op not in seen:
                                raise LibraryError(
                                    "expression uses a formal before its first direct reference"
                                )
                            if self.formals[op].kind != F:
                                raise LibraryError("expression operands must be continuous")
                        elif op not in BBOX_DIMS:
                            raise LibraryError(f"unknown expression operand {op!r}")
                elif not isinstance(spec, Const):
                    raise LibraryError(f"bad spec {spec!r}")
        if seen != set(range(len(self.formals))):
            raise LibraryError("every formal needs at least one direct reference")

    @property
    def arity(self) -> int:
        return len(self.formals)


def canonical_key(body, formals) -> str:
    """Stable content key of a macro, independent of its name."""
    parts = []
    for command, specs in body:
        slot_repr = []
        for spec in specs:
            if isinstance(spec, Const):
                v = spec.value
                slot_repr.append(("c", f"{v:.6f}" if isinstance(v, float) else repr(v)))
            elif isinstance(spec, FormalRef):
                slot_repr.append(("r", spec.index))
            else:
                slot_repr.append(("e", spec.a, repr(spec.x), spec.b, repr(spec.y), f"{spec.c:.6f}"))
        parts.append((command, tuple(slot_repr)))
    kinds = tuple(f.kind for f in formals)
    digest_src = repr((parts, kinds)).encode()
    return hashlib.sha1(digest_src).hexdigest()


def macro_key(m: Macro) -> str:
    return canonical_key(m.body, m.formals)


def named_macro(formals, body, uses=()) -> Macro:
    """Build a macro with its content-derived default name."""
    key = canonical_key(body, formals)
    return Macro(f"m_{key[:10]}", tuple(formals), tuple(body), tuple(uses))


@dataclass(frozen=True, eq=False)
class Library:
    """The five base commands plus discovered macros; names are unique."""

    macros: tuple = ()

    def __post_init__(self):
        names = [m.name for m in self.macros]
        if len(set(names)) != len(names) or set(names) & set(COMMANDS):
            raise LibraryError("function names must be unique")
        object.__setattr__(
            self, "_key", tuple(sorted((m.name, m._hash) for m in self.macros))
        )

    def __eq__(self, other):
        if not isinstance(other, Library):
            return NotImplemented
        return self.macros == other.macros

    def __hash__(self):
        return hash(self._key)

    @property
    def size(self) -> int:
        return BASE_FN_COUNT + len(self.macros)

    def get(self, name: str) -> Macro | None:
        for m in self.macros:
            if m.name == name:
                return m
        return None

    def with_macro(self, m: Macro) -> "Library":
        return Library(self.macros + (m,))

    def without(self, name: str) -> "Library":
        return Library(tuple(m for m in self.macros if m.name != name))

    def key(self) -> tuple:
        """Order-insensitive identity; macro names are content digests."""
        return self._key


@dataclass(frozen=True, slots=True)
class ObjectiveWeights:
    lam_n: float = 1.0
    lam_fn: float = 8.0
    lam_cid: float = 8.0
    lam_f: float = 1.0
    lam_d: float = 0.5
    lam_b: float = 0.25
    lam_eps: float = 10.0

    def of_kind(self, kind: str) -> float:
        return {
            FN: self.lam_fn, CID: self.lam_cid, F: self.lam_f,
            D: self.lam_d, B: self.lam_b,
        }[kind]


@dataclass(frozen=True, slots=True)
class Call:
    fn: str
    args: tuple  # of ParamValue


@dataclass(frozen=True, slots=True)
class RefactoredProgram:
    """A cover of one program by library calls under one line ordering."""

    calls: tuple
    order: tuple
    cont_error: float


def refactored_counts(rp: RefactoredProgram) -> dict:
    counts = {k: 0 for k in PARAM_KINDS}
    for call in rp.calls:
        counts[FN] += 1
        for pv in call.args:
            counts[pv.kind] += 1
    return counts


def program_cost(rp: RefactoredProgram, w: ObjectiveWeights) -> float:
    counts = refactored_counts(rp)
    total = sum(w.of_kind(k) * counts[k] for k in counts)
    return total + w.lam_eps * rp.cont_error


def objective(dataset, lib: Library, w: ObjectiveWeights, best: dict) -> float:
    """Weighted library size plus the mean per-program refactoring cost."""
    entries = list(dataset.entries) if hasattr(dataset, "entries") else list(dataset)
    total = w.lam_n * lib.size
    if not entries:
        return total
    acc = 0.0
    for entry in entries:
        rp = best.get(entry.uid)
        if rp is None:
            raise LibraryError(f"no refactoring for program {entry.uid}")
        acc += program_cost(rp, w)
    return total + acc / len(entries)


def weighted_dof(slots, w: ObjectiveWeights) -> float:
    """Weighted free-parameter count of a slot list.

    ``slots`` holds (kind, spec) pairs; a spec of None marks a raw free
    parameter. Formal references count once per distinct formal.
    """
    total = 0.0
    seen: set = set()
    for kind, spec in slots:
        if spec is None:
            total += w.of_kind(kind)
        elif isinstance(spec, FormalRef):
            if spec.index not in seen:
                seen.add(spec.index)
                total += w.of_kind(kind)
    return total


def macro_call_cost(m: Macro, w: ObjectiveWeights) -> float:
    return w.lam_fn + sum(w.of_kind(f.kind) for f in m.formals)


def base_call_cost(command: str, w: ObjectiveWeights) -> float:
    return w.lam_fn + sum(w.of_kind(k) for k in SIGNATURES[command])


def slot_domain(command: str, slot: int):
    dom = FLOAT_DOMAINS.get(command, {}).get(slot)
    return dom if dom is not None else (None, None)


# --- expansion ------------------------------------------------------------

def _wrap_value(kind: str, value) -> ParamValue:
    if kind == F:
        return fval(value)
    if kind == D:
        return dval(value)
    if kind == B:
        return bval(value)
    if kind == CID:
        return cidval(value)
    raise LibraryError(f"cannot wrap kind {kind!r}")


def expand(m: Macro, args, bbox_dims=None) -> list:
    """Instantiate a macro body with concrete arguments.

    ``bbox_dims`` supplies the bounding-volume dims for expression slots;
    when None, the first expanded line must be the bounding volume itself
    and its dims feed later expressions.
    """
    if len(args) != len(m.formals):
        raise LibraryError(f"{m.name} expects {len(m.formals)} args, got {len(args)}")
    vals = []
    for formal, arg in zip(m.formals, args):
        v = arg.value if isinstance(arg, ParamValue) else arg
        if formal.kind == F:
            v = float(v)
            if formal.lo is not None and v < formal.lo - 1e-9:
                raise LibraryError(f"argument {v} below bound {formal.lo}")
            if formal.hi is not None and v > formal.hi + 1e-9:
                raise LibraryError(f"argument {v} above bound {formal.hi}")
        vals.append(v)

    bbox = None if bbox_dims is None else tuple(float(v) for v in bbox_dims)

    def resolve(op):
        if isinstance(op, int):
            return vals[op]
        if bbox is None:
            raise LibraryError("expression needs bounding-volume dims")
        return bbox[BBOX_DIMS.index(op)]

    lines = []
    for command, specs in m.body:
        sig = SIGNATURES[command]
        params = []
        for kind, spec in zip(sig, specs):
            if isinstance(spec, Const):
                params.append(_wrap_value(kind, spec.value))
            elif isinstance(spec, FormalRef):
                params.append(_wrap_value(kind, vals[spec.index]))
            else:
                v = spec.c
                if spec.a != 0:
                    v += spec.a * resolve(spec.x)
                if spec.b != 0:
                    v += spec.b * resolve(spec.y)
                params.append(fval(v))
        line = Line(command, tuple(params))
        lines.append(line)
        if bbox is None and command == CUBOID:
            bbox = (line.value(0), line.value(1), line.value(2))
    return lines


def expand_refactored(lib: Library, rp: RefactoredProgram) -> list:
    """Expand every call of a refactored program into base-command lines."""
    lines: list = []
    bbox = None
    for call in rp.calls:
        if call.fn in SIGNATURES:
            line = Line(call.fn, tuple(call.args))
            produced = [line]
        else:
            m = lib.get(call.fn)
            if m is None:
                raise LibraryError(f"unknown function {call.fn!r}")
            produced = expand(m, call.args, bbox_dims=bbox)
        for line in produced:
            lines.append(line)
            if bbox is None and line.command == CUBOID:
                bbox = (line.value(0), line.value(1), line.value(2))
    return lines


# --- coverage matching ----------------------------------------------------

@lru_cache(maxsize=None)
def _macro_plan(m: Macro):
    """Per-formal direct slot references and per-slot check order."""
    direct: list = [[] for _ in m.formals]
    for li, (command, specs) in enumerate(m.body):
        for si, spec in enumerate(specs):
            if isinstance(spec, FormalRef):
                direct[spec.index].append((li, si))
    return tuple(tuple(refs) for refs in direct)


def match_macro(m: Macro, lines, bbox_dims, eps: float):
    """Try to cover ``lines`` with one call to ``m``.

    Commands must match one-to-one; discrete, boolean, and cuboid-id slots
    must match exactly; continuous slots must land within ``eps``. Returns
    ``(args, cont_error)`` or None. Argument values for continuous formals
    are the clamped median of their direct occurrences, which minimizes the
    summed deviation subject to the per-slot tolerance.
    """
    body = m.body
    if len(lines) != len(body):
        return None
    for line, (command, _) in zip(lines, body):
        if line.command != command:
            return None

    direct = _macro_plan(m)
    vals: list = []
    for formal, refs in zip(m.formals, direct):
        occ = [lines[li].params[si].value for li, si in refs]
        if formal.kind == F:
            lo, hi = min(occ), max(occ)
            if hi - lo > 2.0 * eps:
                return None
            srt = sorted(occ)
            half = len(srt) // 2
            mid = srt[half] if len(srt) % 2 else 0.5 * (srt[half - 1] + srt[half])
            v = min(max(mid, hi - eps), lo + eps)
            if formal.lo is not None and v < formal.lo - 1e-9:
                return None
            if formal.hi is not None and v > formal.hi + 1e-9:
                return None
            vals.append(v)
        else:
            first = occ[0]
            if any(o != first for o in occ[1:]):
                return None
            vals.append(first)

    bbox = None if bbox_dims is None else tuple(float(v) for v in bbox_dims)

    def resolve(op):
        if isinstance(op, int):
            return vals[op]
        if bbox is None:
            return None
        return bbox[BBOX_DIMS.index(op)]

    err = 0.0
    for line, (command, specs) in zip(lines, body):
        for pv, spec in zip(line.params, specs):
            if isinstance(spec, FormalRef):
                if pv.kind == F:
                    err += abs(pv.value - vals[spec.index])
                continue
            if isinstance(spec, Const):
                if pv.kind == F:
                    delta = abs(pv.value - spec.value)
                    if delta > eps + 1e-12:
                        return None
                    err += delta
                elif pv.value != spec.value:
                    return None
                continue
            x = resolve(spec.x)
            y = resolve(spec.y) if spec.b != 0 else 0.0
            if x is None or y is None:
                return None
            produced = spec.a * x + spec.b * (y or 0.0) + spec.c
            delta = abs(pv.value - produced)
            if delta > eps + 1e-12:
                return None
            err += delta
        if bbox is None and command == CUBOID:
            bbox = (line.value(0), line.value(1), line.value(2))
    args = tuple(_wrap_value(f.kind, v) for f, v in zip(m.formals, vals))
    return args, err


# --- generalization -------------------------------------------------------

@lru_cache(maxsize=None)
def slot_exprs(m: Macro):
    """Symbolic per-slot expressions over the macro's formal variables.

    Continuous slots normalize to affine form ``(items, const)`` where items
    maps operand keys (formal index or bbox symbol) to coefficients;
    other slots are ("const", v) or ("var", i).
    """
    out = []
    for command, specs in m.body:
        sig = SIGNATURES[command]
        row = []
        for kind, spec in zip(sig, specs):
            if kind == F:
                if isinstance(spec, Const):
                    row.append(("affine", (), float(spec.value)))
                elif isinstance(spec, FormalRef):
                    row.append(("affine", ((spec.index, 1.0),), 0.0))
                else:
                    items: dict = {}
                    if spec.a != 0:
                        items[spec.x] = items.get(spec.x, 0.0) + spec.a
                    if spec.b != 0:
                        items[spec.y] = items.get(spec.y, 0.0) + spec.b
                    row.append(("affine", tuple(sorted(items.items(), key=repr)), float(spec.c)))
            else:
                if isinstance(spec, Const):
                    row.append(("const", spec.value))
                else:
                    row.append(("var", spec.index))
        out.append((command, tuple(row)))
    return tuple(out)


def _affine_equal(a, b, tol=1e-9) -> bool:
    ia, ca = dict(a[1]), a[2]
    ib, cb = dict(b[1]), b[2]
    if abs(ca - cb) > tol:
        return False
    keys = set(ia) | set(ib)
    return all(abs(ia.get(k, 0.0) - ib.get(k, 0.0)) <= tol for k in keys)


def _expr_equal(a, b) -> bool:
    if a[0] != b[0]:
        return False
    if a[0] == "affine":
        return _affine_equal(a, b)
    return a[1] == b[1]


def _substitute(expr, defs):
    """Substitute formal definitions (themselves slot exprs) into an expr."""
    if expr[0] == "const":
        return expr
    if expr[0] == "var":
        return defs[expr[1]]
    items: dict = {}
    const = expr[2]
    for op, coeff in expr[1]:
        if not isinstance(op, int):
            items[op] = items.get(op, 0.0) + coeff
            continue
        sub = defs[op]
        if sub[0] != "affine":
            return None
        for op2, c2 in sub[1]:
            items[op2] = items.get(op2, 0.0) + coeff * c2
        const += coeff * sub[2]
    items = {k: v for k, v in items.items() if abs(v) > 1e-12}
    return ("affine", tuple(sorted(items.items(), key=repr)), const)


def generalizes(general: Macro, specific_exprs) -> bool:
    """True if every instantiation of the specific body is reachable from
    ``general`` with some argument assignment.

    ``specific_exprs`` is a ``slot_exprs``-style sequence (possibly a slice
    of a larger body, in which case out-of-slice formals act as free
    symbols).
    """
    if len(general.body) != len(specific_exprs):
        return False
    for (gc, _), (sc, _) in zip(general.body, specific_exprs):
        if gc != sc:
            return False
    direct = _macro_plan(general)
    defs: list = []
    for formal, refs in zip(general.formals, direct):
        target = None
        for li, si in refs:
            expr = specific_exprs[li][1][si]
            if formal.kind == F and expr[0] != "affine":
                return False
            if target is None:
                target = expr
            elif not _expr_equal(target, expr):
                return False
        defs.append(target)
    gen_exprs = slot_exprs(general)
    for (_, grow), (_, srow) in zip(gen_exprs, specific_exprs):
        for gexpr, sexpr in zip(grow, srow):
            produced = _substitute(gexpr, defs)
            if produced is None or not _expr_equal(produced, sexpr):
                return False
    return True


def lib_cover_cost(body_exprs, commands, lib: Library, w: ObjectiveWeights) -> float:
    """Cheapest cover of a macro-shaped body by current library functions.

    Dynamic program over line positions; a library macro may cover a span
    when it is equivalent to or generalizes that span.
    """
    n = len(commands)
    INF = float("inf")
    dp = [INF] * (n + 1)
    dp[n] = 0.0
    by_first: dict = {}
    for m in lib.macros:
        by_first.setdefault(m.body[0][0], []).append(m)
    for i in range(n - 1, -1, -1):
        dp[i] = base_call_cost(commands[i], w) + dp[i + 1]
        for m in by_first.get(commands[i], ()):
            j = i + len(m.body)
            if j > n or dp[j] == INF:
                continue
            if generalizes(m, body_exprs[i:j]):
                dp[i] = min(dp[i], macro_call_cost(m, w) + dp[j])
    return dp[0]


@lru_cache(maxsize=200_000)
def macro_gain(m: Macro, lib: Library, w: ObjectiveWeights) -> float:
    """Weighted free parameters saved per use versus the best current cover."""
    exprs = slot_exprs(m)
    commands = tuple(command for command, _ in m.body)
    return lib_cover_cost(exprs, commands, lib, w) - macro_call_cost(m, w)


# --- serialization --------------------------------------------------------

def _spec_to_json(spec):
    if isinstance(spec, Const):
        return {"const": spec.value}
    if isinstance(spec, FormalRef):
        return {"ref": spec.index}
    return {"a": spec.a, "x": spec.x, "b": spec.b, "y": spec.y, "c": spec.c}


def _spec_from_json(obj):
    if "const" in obj:
        return Const(obj["const"])
    if "ref" in obj:
        return FormalRef(obj["ref"])
    return LinExpr(obj["a"], obj["x"], obj["b"], obj.get("y"), obj["c"])


def macro_to_json(m: Macro) -> dict:
    return {
        "name": m.name,
        "formals": [{"kind": f.kind, "lo": f.lo, "hi": f.hi} for f in m.formals],
        "body": [
            {"command": command, "specs": [_spec_to_json(s) for s in specs]}
            for command, specs in m.body
        ],
        "uses": list(m.uses),
    }


def macro_from_json(obj: dict) -> Macro:
    formals = tuple(Formal(f["kind"], f.get("lo"), f.get("hi")) for f in obj["formals"])
    body = tuple(
        (row["command"], tuple(_spec_from_json(s) for s in row["specs"]))
        for row in obj["body"]
    )
    return Macro(obj["name"], formals, body, tuple(obj.get("uses", ())))


def library_to_json(lib: Library) -> dict:
    return {"base": list(COMMANDS), "macros": [macro_to_json(m) for m in lib.macros]}


def library_from_json(obj: dict) -> Library:
    return Library(tuple(macro_from_json(m) for m in obj.get("macros", ())))


def save_library(lib: Library, path) -> None:
    with open(path, "w") as fh:
        json.dump(library_to_json(lib), fh, indent=2, sort_keys=True)


def load_library(path) -> Library:
    with open(path) as fh:
        return library_from_json(json.load(fh))
