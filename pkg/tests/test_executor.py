import numpy as np
import pytest

from shapemacro.executor import (
    CuboidGeom, ShapeGeometry, corner_distance, execute, expand_sym_ops,
    geometrically_equal, geometry_json, squeeze_to_attaches,
)
from shapemacro.lang import (
    PBlock, Program, attach_line, cuboid_line, parse_program, reflect_line,
    squeeze_line, translate_line,
)


def bbox(w=1.0, h=1.0, d=1.0):
    return cuboid_line(w, h, d, True)


def single_block_program(blk):
    p = Program(bbox(), (blk,))
    p.validate()
    return p


def test_first_attach_places_named_point():
    p = single_block_program(
        PBlock(cuboid_line(0.2, 0.2, 0.2), (attach_line(0, 0.5, 0.0, 0.5, 0.5, 0.0, 0.5),))
    )
    g = execute(p)
    assert g.cuboids[1].center == pytest.approx((0.0, 0.1, 0.0), abs=1e-12)


def test_second_attach_stretches_per_axis():
    # First constraint: local y=0 at world y=0. Second: local y=1 at world y=0.8.
    p = single_block_program(
        PBlock(
            cuboid_line(0.2, 0.2, 0.2),
            (
                attach_line(0, 0.5, 0.0, 0.5, 0.5, 0.0, 0.5),
                attach_line(0, 0.5, 1.0, 0.5, 0.5, 0.8, 0.5),
            ),
        )
    )
    g = execute(p)
    c = g.cuboids[1]
    # dim = (t1 - t2) / (l1 - l2) = (0 - 0.8) / (0 - 1) = 0.8
    assert c.dims[1] == pytest.approx(0.8, abs=1e-12)
    assert c.center[1] == pytest.approx(0.4, abs=1e-12)
    # untouched axes keep declared dims
    assert c.dims[0] == pytest.approx(0.2)


def test_second_attach_equal_locals_centers_on_midpoint():
    # On x both constraints use local 0.5 but targets differ: -0.2 and 0.2.
    p = single_block_program(
        PBlock(
            cuboid_line(0.2, 0.2, 0.2),
            (
                attach_line(0, 0.5, 0.0, 0.5, 0.3, 0.0, 0.5),
                attach_line(0, 0.5, 1.0, 0.5, 0.7, 0.8, 0.5),
            ),
        )
    )
    g = execute(p)
    assert g.cuboids[1].center[0] == pytest.approx(0.0, abs=1e-12)
    assert g.cuboids[1].dims[0] == pytest.approx(0.2)


def test_degenerate_stretch_clamps_and_warns():
    # l1=0 at y=0.8, l2=1 at y=0.0 gives dim (0.8-0.0)/(0-1) < 0.
    p = single_block_program(
        PBlock(
            cuboid_line(0.2, 0.2, 0.2),
            (
                attach_line(0, 0.5, 0.0, 0.5, 0.5, 0.8, 0.5),
                attach_line(0, 0.5, 1.0, 0.5, 0.5, 0.0, 0.5),
            ),
        )
    )
    g = execute(p)
    assert g.warnings
    assert g.cuboids[1].dims[1] == pytest.approx(1e-4)


def test_reflect_mirrors_about_bbox_center_plane():
    p = single_block_program(
        PBlock(
            cuboid_line(0.2, 0.2, 0.2),
            (attach_line(0, 0.5, 0.5, 0.5, 0.8, 1.0, 0.5),),
            reflect_line("X"),
        )
    )
    g = execute(p)
    src, copy = g.cuboids[1], g.cuboids[2]
    assert src.center == pytest.approx((0.3, 1.0, 0.0))
    assert copy.center == pytest.approx((-0.3, 1.0, 0.0))
    assert copy.dims == pytest.approx(src.dims)


def test_translate_spacing_rule():
    # m copies, copy k offset by k * di * extent / m; last lands at di * extent.
    p = single_block_program(
        PBlock(
            cuboid_line(0.1, 0.1, 0.1),
            (attach_line(0, 0.5, 0.5, 0.5, 0.2, 0.2, 0.5),),
            translate_line("X", 2, 0.5),
        )
    )
    g = execute(p)
    xs = [c.center[0] for c in g.cuboids[1:]]
    assert xs == pytest.approx([-0.3, -0.05, 0.2])


def test_expand_translate_adds_two_blocks():
    p = single_block_program(
        PBlock(
            cuboid_line(0.1, 0.1, 0.1),
            (attach_line(0, 0.5, 0.5, 0.5, 0.2, 0.2, 0.5),),
            translate_line("X", 2, 0.5),
        )
    )
    q = expand_sym_ops(p)
    assert len(q.blocks) == 3
    assert all(b.sym is None for b in q.blocks)
    assert geometrically_equal(execute(p), execute(q), 1e-6)


def test_expand_reflect_adds_one_block():
    p = single_block_program(
        PBlock(
            cuboid_line(0.2, 0.2, 0.2),
            (attach_line(0, 0.5, 0.0, 0.5, 0.8, 0.0, 0.5),),
            reflect_line("X"),
        )
    )
    q = expand_sym_ops(p)
    assert len(q.blocks) == 2
    assert geometrically_equal(execute(p), execute(q), 1e-6)


def test_expand_without_sym_ops_is_identity():
    p = single_block_program(
        PBlock(cuboid_line(0.2, 0.2, 0.2), (attach_line(0, 0.5, 0.0, 0.5, 0.5, 0.0, 0.5),))
    )
    assert expand_sym_ops(p) == p


def test_expand_is_idempotent():
    p = single_block_program(
        PBlock(
            cuboid_line(0.2, 0.2, 0.2),
            (attach_line(0, 0.5, 0.0, 0.5, 0.7, 0.0, 0.5),),
            reflect_line("X"),
        )
    )
    q = expand_sym_ops(p)
    assert expand_sym_ops(q) == q


def test_squeeze_spans_gap_between_cuboids():
    text = (
        "bbox = Cuboid(1.0,1.0,1.0,True)\n"
        "c1 = Cuboid(0.1,0.6,0.1,True)\n"
        "attach(bbox,0.5,0.0,0.5,0.1,0.0,0.5)\n"
        "c2 = Cuboid(0.1,0.6,0.1,True)\n"
        "attach(bbox,0.5,0.0,0.5,0.9,0.0,0.5)\n"
        "c3 = Cuboid(0.2,0.1,0.1,True)\n"
        "squeeze(c1,c2,right,0.5,0.5)\n"
    )
    p = parse_program(text)
    g = execute(p)
    bar = g.cuboids[3]
    c1, c2 = g.cuboids[1], g.cuboids[2]
    left_face = c1.center[0] + c1.dims[0] / 2
    right_face = c2.center[0] - c2.dims[0] / 2
    assert bar.center[0] == pytest.approx((left_face + right_face) / 2)
    assert bar.dims[0] == pytest.approx(right_face - left_face)
    # squeeze expansion produces exactly two attach lines
    a1, a2 = squeeze_to_attaches(p.blocks[2].attaches[0])
    assert a1.command == "attach" and a2.command == "attach"
    q = expand_sym_ops(p)
    assert geometrically_equal(g, execute(q), 1e-6)


def test_determinism_bit_identical():
    p = parse_program(
        "bbox = Cuboid(1.0,1.0,1.0,True)\n"
        "c1 = Cuboid(0.2,0.3,0.2,True)\n"
        "attach(bbox,0.5,0.0,0.5,0.3,0.0,0.3)\n"
        "reflect(X)\n"
    )
    g1, g2 = execute(p), execute(p)
    assert [c.center for c in g1.cuboids] == [c.center for c in g2.cuboids]
    assert [c.dims for c in g1.cuboids] == [c.dims for c in g2.cuboids]


# --- corner distance ------------------------------------------------------

def geom(*cuboids):
    g = ShapeGeometry()
    g.cuboids = [CuboidGeom(i, tuple(c[0]), tuple(c[1])) for i, c in enumerate(cuboids)]
    return g


def test_corner_distance_identical_is_zero():
    a = geom(((0, 0.5, 0), (1, 1, 1)), ((0.2, 0.1, 0), (0.1, 0.2, 0.1)))
    assert corner_distance(a, a) == 0.0


def test_corner_distance_pure_translation():
    a = geom(((0, 0, 0), (0.2, 0.2, 0.2)))
    b = geom(((0.1, 0, 0), (0.2, 0.2, 0.2)))
    assert corner_distance(a, b) == pytest.approx(0.1)


def test_corner_distance_permutation_invariant():
    a = geom(((0, 0, 0), (0.2, 0.2, 0.2)), ((0.5, 0.5, 0.5), (0.1, 0.1, 0.1)))
    b = geom(((0.5, 0.5, 0.5), (0.1, 0.1, 0.1)), ((0, 0, 0), (0.2, 0.2, 0.2)))
    assert corner_distance(a, b) == 0.0


def test_corner_distance_unmatched_penalty_is_diagonal():
    a = geom(((0, 0, 0), (0.2, 0.2, 0.2)))
    b = geom(((0, 0, 0), (0.2, 0.2, 0.2)), ((1, 1, 1), (0.3, 0.4, 1.2)))
    assert corner_distance(a, b) == pytest.approx(np.linalg.norm([0.3, 0.4, 1.2]))


def test_corner_distance_symmetric_and_triangle_spotcheck():
    rng = np.random.default_rng(7)
    geoms = []
    for _ in range(6):
        cubs = []
        for i in range(rng.integers(1, 4)):
            cubs.append((rng.uniform(-1, 1, 3), rng.uniform(0.05, 0.5, 3)))
        geoms.append(geom(*cubs))
    for a in geoms:
        for b in geoms:
            assert corner_distance(a, b) == pytest.approx(corner_distance(b, a), abs=1e-12)
    for a in geoms[:3]:
        for b in geoms[:3]:
            for c in geoms[:3]:
                ab, bc, ac = corner_distance(a, b), corner_distance(b, c), corner_distance(a, c)
                assert ac <= ab + bc + 1e-9


def test_geometrically_equal_threshold():
    a = geom(((0, 0, 0), (0.2, 0.2, 0.2)))
    b = geom(((1e-3, 0, 0), (0.2, 0.2, 0.2)))
    assert geometrically_equal(a, a, 1e-4)
    assert not geometrically_equal(a, b, 1e-4)


def test_geometry_json_shape():
    a = geom(((0, 0.5, 0), (1, 1, 1)))
    js = geometry_json(a)
    assert js == [{"id": 0, "center": [0, 0.5, 0], "dims": [1, 1, 1]}]
