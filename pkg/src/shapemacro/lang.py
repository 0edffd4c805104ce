"""Core language for cuboid shape programs.

A program declares a bounding volume and a sequence of part blocks. Each
block creates one cuboid, attaches it to previously created geometry (one
or two point attachments, or a squeeze between two earlier cuboids), and
optionally applies a symmetry operator (reflect or translate) to it. All
non-Cuboid statements implicitly act on the most recently declared cuboid.

Parameters are typed by kind:

==== =========================================================
kind meaning
==== =========================================================
fn   choice of function for a statement (one per line)
cid  reference to an earlier cuboid (0 is the bounding volume)
f    continuous float
d    discrete symbol (faces, axes, repetition counts)
b    boolean flag
==== =========================================================
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

FN, CID, F, D, B = "fn", "cid", "f", "d", "b"
PARAM_KINDS = (FN, CID, F, D, B)

CUBOID, ATTACH, SQUEEZE, REFLECT, TRANSLATE = (
    "Cuboid", "attach", "squeeze", "reflect", "translate",
)
COMMANDS = (CUBOID, ATTACH, SQUEEZE, REFLECT, TRANSLATE)

FACES = ("right", "left", "top", "bot", "front", "back")
OPPOSITE_FACE = {
    "right": "left", "left": "right",
    "top": "bot", "bot": "top",
    "front": "back", "back": "front",
}
AXES = ("X", "Y", "Z")
AXIS_INDEX = {"X": 0, "Y": 1, "Z": 2}

# Parameter kinds per command, in call order.
SIGNATURES = {
    CUBOID: (F, F, F, B),
    ATTACH: (CID, F, F, F, F, F, F),
    SQUEEZE: (CID, CID, D, F, F),
    REFLECT: (D,),
    TRANSLATE: (D, D, F),
}

# Inclusive float domains per command slot; None means positive-unbounded.
_UNIT = (0.0, 1.0)
_POS = (0.0, None)
FLOAT_DOMAINS = {
    CUBOID: {0: _POS, 1: _POS, 2: _POS},
    ATTACH: {i: _UNIT for i in range(1, 7)},
    SQUEEZE: {3: _UNIT, 4: _UNIT},
    TRANSLATE: {2: _UNIT},
}


class LangError(Exception):
    """Base error for program construction and parsing."""


class ParseError(LangError):
    def __init__(self, message: str, line: int, col: int = 0):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


class ValidationError(LangError):
    pass


@dataclass(frozen=True, slots=True)
class ParamValue:
    """A single typed parameter value.

    ``value`` is a float for f-kind, int for cid-kind, bool for b-kind,
    a face/axis symbol or int count for d-kind, and a function name for
    fn-kind.
    """

    kind: str
    value: object

    def __post_init__(self):
        if self.kind not in PARAM_KINDS:
            raise ValidationError(f"unknown param kind {self.kind!r}")
        if self.kind == F:
            v = float(self.value)
            if v != v or v in (float("inf"), float("-inf")):
                raise ValidationError("non-finite float parameter")
            object.__setattr__(self, "value", v)
        elif self.kind == B:
            object.__setattr__(self, "value", bool(self.value))
        elif self.kind == CID:
            object.__setattr__(self, "value", int(self.value))


def fval(x) -> ParamValue:
    return ParamValue(F, float(x))


def dval(sym) -> ParamValue:
    return ParamValue(D, sym)


def bval(x) -> ParamValue:
    return ParamValue(B, bool(x))


def cidval(i) -> ParamValue:
    return ParamValue(CID, int(i))


@dataclass(frozen=True, slots=True)
class Line:
    """One statement: a command plus its ordered parameter values."""

    command: str
    params: tuple

    def __post_init__(self):
        sig = SIGNATURES.get(self.command)
        if sig is None:
            raise ValidationError(f"unknown command {self.command!r}")
        if len(self.params) != len(sig):
            raise ValidationError(
                f"{self.command} expects {len(sig)} params, got {len(self.params)}"
            )
        for i, (kind, pv) in enumerate(zip(sig, self.params)):
            if not isinstance(pv, ParamValue) or pv.kind != kind:
                raise ValidationError(
                    f"{self.command} param {i} must be kind {kind!r}"
                )
        _check_domains(self)

    def value(self, i: int):
        return self.params[i].value


def _check_domains(line: Line) -> None:
    doms = FLOAT_DOMAINS.get(line.command, {})
    for i, (lo, hi) in doms.items():
        v = line.params[i].value
        if v < lo - 1e-9 or (hi is not None and v > hi + 1e-9):
            raise ValidationError(
                f"{line.command} param {i} value {v} outside [{lo}, {hi}]"
            )
    if line.command == CUBOID:
        for i in range(3):
            if line.params[i].value <= 0:
                raise ValidationError("cuboid dims must be positive")
    if line.command == SQUEEZE and line.params[2].value not in FACES:
        raise ValidationError(f"bad face {line.params[2].value!r}")
    if line.command == REFLECT and line.params[0].value not in AXES:
        raise ValidationError(f"bad axis {line.params[0].value!r}")
    if line.command == TRANSLATE:
        if line.params[0].value not in AXES:
            raise ValidationError(f"bad axis {line.params[0].value!r}")
        m = line.params[1].value
        if not isinstance(m, int) or m < 1:
            raise ValidationError("translate count must be a positive integer")


def cuboid_line(w, h, d, aligned=True) -> Line:
    return Line(CUBOID, (fval(w), fval(h), fval(d), bval(aligned)))


def attach_line(cid, x1, y1, z1, x2, y2, z2) -> Line:
    return Line(ATTACH, (cidval(cid),) + tuple(fval(v) for v in (x1, y1, z1, x2, y2, z2)))


def squeeze_line(cid1, cid2, face, u, v) -> Line:
    return Line(SQUEEZE, (cidval(cid1), cidval(cid2), dval(face), fval(u), fval(v)))


def reflect_line(axis) -> Line:
    return Line(REFLECT, (dval(axis),))


def translate_line(axis, m, di) -> Line:
    return Line(TRANSLATE, (dval(axis), dval(int(m)), fval(di)))


@dataclass(frozen=True, slots=True)
class PBlock:
    """One part block: a cuboid, its attachments, and an optional symmetry op.

    ``attaches`` holds one or two attach lines, or exactly one squeeze line.
    """

    cuboid: Line
    attaches: tuple
    sym: Line | None = None

    def __post_init__(self):
        if self.cuboid.command != CUBOID:
            raise ValidationError("block must start with a Cuboid declaration")
        cmds = [ln.command for ln in self.attaches]
        if cmds == [SQUEEZE]:
            pass
        elif cmds in ([ATTACH], [ATTACH, ATTACH]):
            pass
        else:
            raise ValidationError(
                "block needs 1-2 attach statements or exactly one squeeze"
            )
        if self.sym is not None and self.sym.command not in (REFLECT, TRANSLATE):
            raise ValidationError("symmetry op must be reflect or translate")

    def lines(self) -> list:
        out = [self.cuboid, *self.attaches]
        if self.sym is not None:
            out.append(self.sym)
        return out

    def referenced_cids(self) -> list:
        out = []
        for ln in self.attaches:
            for pv in ln.params:
                if pv.kind == CID:
                    out.append(pv.value)
        return out


@dataclass(frozen=True, slots=True)
class Program:
    """A bounding-volume declaration followed by ordered part blocks."""

    bbox: Line
    blocks: tuple = ()

    def __post_init__(self):
        if self.bbox.command != CUBOID or self.bbox.params[3].value is not True:
            raise ValidationError("program must open with an aligned bounding volume")

    def lines(self) -> list:
        out = [self.bbox]
        for b in self.blocks:
            out.extend(b.lines())
        return out

    @property
    def n_lines(self) -> int:
        return len(self.lines())

    def bbox_dims(self) -> tuple:
        return (self.bbox.value(0), self.bbox.value(1), self.bbox.value(2))

    def validate(self) -> None:
        """Check cross-block invariants; raises ValidationError on failure."""
        for i, blk in enumerate(self.blocks, start=1):
            for cid in blk.referenced_cids():
                if cid < 0 or cid >= i:
                    raise ValidationError(
                        f"block {i} references cuboid {cid}, which is not yet declared"
                    )


# --- textual form ---------------------------------------------------------

_STMT_RE = re.compile(r"^\s*(?:(?P<name>\w+)\s*=\s*)?(?P<fn>\w+)\s*\((?P<args>.*)\)\s*$")
_BOOLS = {"True": True, "False": False}


def _format_value(pv: ParamValue) -> str:
    if pv.kind == F:
        return f"{pv.value:.4f}"
    if pv.kind == B:
        return "True" if pv.value else "False"
    if pv.kind == CID:
        return "bbox" if pv.value == 0 else f"c{pv.value}"
    return str(pv.value)


def print_line(line: Line, decl_name: str | None = None) -> str:
    args = ", ".join(_format_value(pv) for pv in line.params)
    call = f"{line.command}({args})"
    return f"{decl_name} = {call}" if decl_name else call


def print_program(p: Program) -> str:
    """Canonical text: one statement per line, floats at 4 decimal places."""
    out = [print_line(p.bbox, "bbox")]
    cid = 0
    for blk in p.blocks:
        cid += 1
        out.append(print_line(blk.cuboid, f"c{cid}"))
        for ln in blk.attaches:
            out.append(print_line(ln))
        if blk.sym is not None:
            out.append(print_line(blk.sym))
    return "\n".join(out) + "\n"


def _parse_value(token: str, kind: str, names: dict, lineno: int, col: int) -> ParamValue:
    token = token.strip()
    if kind == F:
        try:
            return fval(float(token))
        except ValueError:
            raise ParseError(f"expected a float, got {token!r}", lineno, col) from None
    if kind == B:
        if token not in _BOOLS:
            raise ParseError(f"expected True or False, got {token!r}", lineno, col)
        return bval(_BOOLS[token])
    if kind == CID:
        if token not in names:
            raise ParseError(f"unknown cuboid {token!r}", lineno, col)
        return cidval(names[token])
    if kind == D:
        if token in FACES or token in AXES:
            return dval(token)
        try:
            return dval(int(token))
        except ValueError:
            raise ParseError(f"expected a discrete symbol, got {token!r}", lineno, col) from None
    raise ParseError(f"unsupported kind {kind!r}", lineno, col)


def parse_program(text: str) -> Program:
    """Parse canonical program text; the printed form re-parses to an equal value.

    Raises ParseError with line/column for syntax problems, and for
    arity/kind mismatches, dangling cuboid references, or blocks that never
    attach their cuboid.
    """
    names: dict = {}
    bbox: Line | None = None
    blocks: list = []
    cur: dict | None = None  # pending block under construction

    def finish_block(lineno: int):
        nonlocal cur
        if cur is None:
            return
        if not cur["attaches"]:
            raise ParseError(
                f"cuboid {cur['name']!r} is never attached", lineno, 0
            )
        blocks.append(PBlock(cur["cuboid"], tuple(cur["attaches"]), cur["sym"]))
        cur = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        m = _STMT_RE.match(raw)
        if m is None:
            raise ParseError("expected 'name = Fn(...)' or 'fn(...)'", lineno, 1)
        name, fn, argtext = m.group("name"), m.group("fn"), m.group("args")
        col = raw.index(fn) + 1
        argtokens = [t for t in argtext.split(",")] if argtext.strip() else []

        if fn == CUBOID:
            if name is None:
                raise ParseError("cuboid declarations need a name", lineno, col)
            if name in names:
                raise ParseError(f"duplicate cuboid name {name!r}", lineno, col)
        else:
            if name is not None:
                raise ParseError(f"{fn} is not a declaration", lineno, col)
            if fn not in (ATTACH, SQUEEZE, REFLECT, TRANSLATE):
                raise ParseError(f"unknown command {fn!r}", lineno, col)

        sig = SIGNATURES[fn]
        if len(argtokens) != len(sig):
            raise ParseError(
                f"{fn} expects {len(sig)} arguments, got {len(argtokens)}", lineno, col
            )
        params = tuple(
            _parse_value(tok, kind, names, lineno, col)
            for tok, kind in zip(argtokens, sig)
        )
        try:
            line = Line(fn, params)
        except ValidationError as e:
            raise ParseError(str(e), lineno, col) from None

        if fn == CUBOID:
            if bbox is None:
                if name != "bbox":
                    raise ParseError("first statement must declare bbox", lineno, col)
                if line.params[3].value is not True:
                    raise ParseError("bbox must be aligned", lineno, col)
                bbox = line
                names["bbox"] = 0
            else:
                finish_block(lineno)
                names[name] = len(names)
                cur = {"name": name, "cuboid": line, "attaches": [], "sym": None}
        else:
            if bbox is None:
                raise ParseError("first statement must declare bbox", lineno, col)
            if cur is None:
                raise ParseError(f"{fn} has no cuboid to act on", lineno, col)
            if fn in (ATTACH, SQUEEZE):
                if cur["sym"] is not None:
                    raise ParseError("attachments must precede symmetry ops", lineno, col)
                kinds = [ln.command for ln in cur["attaches"]]
                if fn == SQUEEZE and kinds:
                    raise ParseError("squeeze must be the only attachment", lineno, col)
                if fn == ATTACH and SQUEEZE in kinds:
                    raise ParseError("cannot mix attach with squeeze", lineno, col)
                if fn == ATTACH and len(kinds) >= 2:
                    raise ParseError("at most two attach statements per cuboid", lineno, col)
                cur["attaches"].append(line)
            else:
                if cur["sym"] is not None:
                    raise ParseError("at most one symmetry op per cuboid", lineno, col)
                if not cur["attaches"]:
                    raise ParseError("symmetry op before any attachment", lineno, col)
                cur["sym"] = line

    if bbox is None:
        raise ParseError("empty program", max(1, text.count(chr(10))), 1)
    finish_block(lineno=text.count("\n") + 1)
    prog = Program(bbox, tuple(blocks))
    prog.validate()
    return prog


def count_params(p: Program, weights=None) -> dict:
    """Per-kind free-parameter counts; the fn count equals the line count.

    ``weights`` is accepted for interface symmetry with the objective but
    does not change the counts.
    """
    counts = {k: 0 for k in PARAM_KINDS}
    for line in p.lines():
        counts[FN] += 1
        for pv in line.params:
            counts[pv.kind] += 1
    return counts


def lines_to_program(lines) -> Program:
    """Regroup a flat line list (as produced by ``Program.lines``) into a
    Program; raises ValidationError when the lines do not form valid blocks."""
    if not lines or lines[0].command != CUBOID:
        raise ValidationError("line list must open with the bounding volume")
    bbox = lines[0]
    blocks: list = []
    cur: dict | None = None

    def finish():
        nonlocal cur
        if cur is not None:
            blocks.append(PBlock(cur["cuboid"], tuple(cur["attaches"]), cur["sym"]))
            cur = None

    for line in lines[1:]:
        if line.command == CUBOID:
            finish()
            cur = {"cuboid": line, "attaches": [], "sym": None}
        elif line.command in (ATTACH, SQUEEZE):
            if cur is None:
                raise ValidationError("attachment before any cuboid")
            cur["attaches"].append(line)
        else:
            if cur is None:
                raise ValidationError("symmetry op before any cuboid")
            cur["sym"] = line
    finish()
    prog = Program(bbox, tuple(blocks))
    prog.validate()
    return prog


def round4(x: float) -> float:
    """Snap to the 4-decimal grid used by the canonical text form."""
    return round(float(x), 4)
