"""Deterministic geometry executor for shape programs.

Placement semantics: local coordinates (x, y, z) in [0, 1]^3 on a cuboid map
to world points ``center + ((x, y, z) - 0.5) * dims`` per axis. The bounding
volume with dims (w, h, d) occupies x in [-w/2, w/2], y in [0, h],
z in [-d/2, d/2], i.e. its center is (0, h/2, 0).

A cuboid's first attachment translates it so the named local point lands on
the target world point. A second attachment stretches it: on each axis with
distinct local coordinates l1 != l2 the dimension becomes
(t1 - t2) / (l1 - l2) and the center follows from either constraint; on axes
where the locals coincide but the targets differ, the shared local point is
placed at the midpoint of the two targets. Dimensions that come out
non-positive are clamped to 1e-4 and a warning is recorded.

Squeeze, reflect and translate are state-dependent macros over Cuboid and
attach; ``expand_sym_ops`` rewrites a program to the Cuboid/attach subset
with identical output geometry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .lang import (
    ATTACH, AXIS_INDEX, CUBOID, OPPOSITE_FACE, REFLECT, SQUEEZE, TRANSLATE,
    Line, PBlock, Program, attach_line, cuboid_line,
)

DIM_FLOOR = 1e-4


class ExecError(Exception):
    pass


@dataclass(frozen=True, slots=True)
class CuboidGeom:
    cid: int
    center: tuple
    dims: tuple

    def corners(self) -> np.ndarray:
        """The 8 corners in a fixed sign order (for corner-wise comparison)."""
        c = np.asarray(self.center)
        h = np.asarray(self.dims) / 2.0
        signs = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
            dtype=float,
        )
        return c + signs * h

    def diagonal(self) -> float:
        return float(np.linalg.norm(self.dims))

    def local_to_world(self, local) -> np.ndarray:
        return np.asarray(self.center) + (np.asarray(local, dtype=float) - 0.5) * np.asarray(self.dims)

    def world_to_local(self, world) -> np.ndarray:
        return (np.asarray(world, dtype=float) - np.asarray(self.center)) / np.asarray(self.dims) + 0.5


@dataclass(slots=True)
class ShapeGeometry:
    cuboids: list = field(default_factory=list)
    attachments: list = field(default_factory=list)  # (child cid, parent cid, world point)
    warnings: list = field(default_factory=list)


def geometry_json(g: ShapeGeometry) -> list:
    return [
        {"id": c.cid, "center": list(c.center), "dims": list(c.dims)}
        for c in g.cuboids
    ]


class _ExecState:
    """Mutable placement state shared by execution and symmetry expansion."""

    def __init__(self, bbox: Line):
        w, h, d = (bbox.value(i) for i in range(3))
        self.geom = ShapeGeometry()
        self.placed: dict = {}
        self.first_attach: dict = {}  # geometry id -> (local, target)
        self.next_id = 0
        self.bbox_geom = self._add(CuboidGeom(0, (0.0, h / 2.0, 0.0), (w, h, d)))

    def _add(self, cg: CuboidGeom) -> CuboidGeom:
        self.geom.cuboids.append(cg)
        self.placed[cg.cid] = cg
        self.next_id += 1
        return cg

    def new_cuboid(self, dims) -> int:
        gid = self.next_id
        self._add(CuboidGeom(gid, (0.0, 0.0, 0.0), tuple(float(v) for v in dims)))
        return gid

    def _replace(self, gid: int, center, dims) -> None:
        cg = CuboidGeom(gid, tuple(float(v) for v in center), tuple(float(v) for v in dims))
        self.placed[gid] = cg
        for i, old in enumerate(self.geom.cuboids):
            if old.cid == gid:
                self.geom.cuboids[i] = cg
                break

    def attach(self, gid: int, local, parent_gid: int, parent_local) -> None:
        parent = self.placed.get(parent_gid)
        if parent is None:
            raise ExecError(f"attach to unplaced cuboid {parent_gid}")
        target = parent.local_to_world(parent_local)
        self.geom.attachments.append((gid, parent_gid, tuple(float(v) for v in target)))
        cur = self.placed[gid]
        local = np.asarray(local, dtype=float)
        if gid not in self.first_attach:
            center = target - (local - 0.5) * np.asarray(cur.dims)
            self._replace(gid, center, cur.dims)
            self.first_attach[gid] = (local, target)
            return
        l1, t1 = self.first_attach[gid]
        l2, t2 = local, target
        dims = np.asarray(cur.dims, dtype=float)
        center = np.zeros(3)
        for a in range(3):
            if abs(l1[a] - l2[a]) > 1e-12:
                dim = (t1[a] - t2[a]) / (l1[a] - l2[a])
                if dim <= 0.0:
                    self.geom.warnings.append(
                        f"cuboid {gid}: non-positive stretched dim on axis {a}, clamped"
                    )
                    dim = DIM_FLOOR
                dims[a] = dim
                center[a] = t1[a] - (l1[a] - 0.5) * dim
            elif abs(t1[a] - t2[a]) > 1e-12:
                center[a] = 0.5 * (t1[a] + t2[a]) - (l1[a] - 0.5) * dims[a]
            else:
                center[a] = t1[a] - (l1[a] - 0.5) * dims[a]
        self._replace(gid, center, dims)

    def add_copy(self, src: CuboidGeom, center) -> CuboidGeom:
        gid = self.next_id
        cg = CuboidGeom(gid, tuple(float(v) for v in center), src.dims)
        self._add(cg)
        self.geom.attachments.append((gid, 0, cg.center))
        return cg


def _face_point(face: str, u: float, v: float) -> tuple:
    if face == "right":
        return (1.0, u, v)
    if face == "left":
        return (0.0, u, v)
    if face == "top":
        return (u, 1.0, v)
    if face == "bot":
        return (u, 0.0, v)
    if face == "front":
        return (u, v, 1.0)
    return (u, v, 0.0)  # back


def squeeze_to_attaches(line: Line) -> tuple:
    """Rewrite a squeeze into its two attach lines (cids untouched)."""
    cid1, cid2 = line.value(0), line.value(1)
    face, u, v = line.value(2), line.value(3), line.value(4)
    fp = _face_point(face, u, v)
    op = _face_point(OPPOSITE_FACE[face], u, v)
    return (
        attach_line(cid1, *op, *fp),
        attach_line(cid2, *fp, *op),
    )


def _sym_copy_centers(state: _ExecState, src: CuboidGeom, sym: Line) -> list:
    bc = np.asarray(state.bbox_geom.center)
    bd = np.asarray(state.bbox_geom.dims)
    c = np.asarray(src.center)
    if sym.command == REFLECT:
        axis = AXIS_INDEX[sym.value(0)]
        mirrored = c.copy()
        mirrored[axis] = 2.0 * bc[axis] - c[axis]
        return [mirrored]
    axis = AXIS_INDEX[sym.value(0)]
    m, di = sym.value(1), sym.value(2)
    step = di * bd[axis] / m
    out = []
    for k in range(1, m + 1):
        shifted = c.copy()
        shifted[axis] = c[axis] + k * step
        out.append(shifted)
    return out


def _run(p: Program, expand: bool):
    """Execute ``p``; optionally also build the symmetry-free rewrite."""
    state = _ExecState(p.bbox)
    new_blocks: list = [] if expand else None
    # declaration cid (in p) -> geometry id == cid in the rewritten program
    decl_to_geom = {0: 0}

    for decl_cid, blk in enumerate(p.blocks, start=1):
        gid = state.new_cuboid(tuple(blk.cuboid.value(i) for i in range(3)))
        decl_to_geom[decl_cid] = gid

        attaches = []
        for ln in blk.attaches:
            if ln.command == SQUEEZE:
                attaches.extend(squeeze_to_attaches(ln))
            else:
                attaches.append(ln)
        remapped = []
        for ln in attaches:
            parent = decl_to_geom[ln.value(0)]
            local = (ln.value(1), ln.value(2), ln.value(3))
            plocal = (ln.value(4), ln.value(5), ln.value(6))
            state.attach(gid, local, parent, plocal)
            remapped.append(attach_line(parent, *local, *plocal))

        if expand:
            new_blocks.append(PBlock(blk.cuboid, tuple(remapped)))

        if blk.sym is not None:
            src = state.placed[gid]
            for center in _sym_copy_centers(state, src, blk.sym):
                copy = state.add_copy(src, center)
                if expand:
                    local = state.bbox_geom.world_to_local(center)
                    clamped = np.clip(local, 0.0, 1.0)
                    if np.max(np.abs(clamped - local)) > 1e-9:
                        state.geom.warnings.append(
                            f"cuboid {copy.cid}: symmetry copy lands outside the bounding volume"
                        )
                    new_blocks.append(
                        PBlock(
                            cuboid_line(*copy.dims, aligned=blk.cuboid.value(3)),
                            (attach_line(0, 0.5, 0.5, 0.5, *clamped),),
                        )
                    )

    expanded = Program(p.bbox, tuple(new_blocks)) if expand else None
    return state.geom, expanded


def execute(p: Program) -> ShapeGeometry:
    """Run a program to cuboid geometry. Deterministic and side-effect free."""
    geom, _ = _run(p, expand=False)
    return geom


def expand_sym_ops(p: Program) -> Program:
    """Rewrite squeeze/reflect/translate into Cuboid and attach statements.

    The rewrite executes the program as it goes, so symmetry copies are
    attached to the bounding volume at their known world centers. Output
    geometry matches direct execution; the rewrite is idempotent.
    """
    _, expanded = _run(p, expand=True)
    return expanded


def corner_distance(a: ShapeGeometry, b: ShapeGeometry) -> float:
    """Pseudometric between two cuboid sets.

    Cuboids are paired by a minimum-cost assignment on center distance; the
    score is the mean over pairs of the mean L2 distance between the 8
    matching corners. Every unpaired cuboid adds its own diagonal length.
    """
    ca, cb = a.cuboids, b.cuboids
    if not ca and not cb:
        return 0.0
    penalty = 0.0
    if not ca or not cb:
        return sum(c.diagonal() for c in ca + cb)
    centers_a = np.array([c.center for c in ca])
    centers_b = np.array([c.center for c in cb])
    cost = np.linalg.norm(centers_a[:, None, :] - centers_b[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    matched = 0.0
    for i, j in zip(rows, cols):
        d = np.linalg.norm(ca[i].corners() - cb[j].corners(), axis=1)
        matched += float(np.mean(d))
    matched /= len(rows)
    unmatched_a = set(range(len(ca))) - set(rows.tolist())
    unmatched_b = set(range(len(cb))) - set(cols.tolist())
    penalty += sum(ca[i].diagonal() for i in unmatched_a)
    penalty += sum(cb[j].diagonal() for j in unmatched_b)
    return matched + penalty


def geometrically_equal(a: ShapeGeometry, b: ShapeGeometry, tol: float) -> bool:
    if tol < 0:
        raise ValueError("tolerance must be nonnegative")
    return corner_distance(a, b) <= tol
