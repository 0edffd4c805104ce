import pytest

from shapemacro.executor import execute, geometrically_equal
from shapemacro.lang import parse_program
from shapemacro.ordering import (
    OrderingSet, block_dependencies, canonical_order, enumerate_valid_orders,
    permuted_program,
)


def two_legs():
    return parse_program(
        "bbox = Cuboid(1.0,1.0,1.0,True)\n"
        "c1 = Cuboid(0.1,0.4,0.1,True)\n"
        "attach(bbox,0.5,0.0,0.5,0.2,0.0,0.2)\n"
        "c2 = Cuboid(0.1,0.4,0.1,True)\n"
        "attach(bbox,0.5,0.0,0.5,0.8,0.0,0.8)\n"
    )


def chain():
    return parse_program(
        "bbox = Cuboid(1.0,1.0,1.0,True)\n"
        "c1 = Cuboid(0.2,0.2,0.2,True)\n"
        "attach(bbox,0.5,0.0,0.5,0.5,0.0,0.5)\n"
        "c2 = Cuboid(0.1,0.1,0.1,True)\n"
        "attach(c1,0.5,0.0,0.5,0.5,1.0,0.5)\n"
    )


def independent(n):
    lines = ["bbox = Cuboid(1.0,1.0,1.0,True)"]
    for i in range(n):
        lines.append(f"c{i+1} = Cuboid(0.05,0.2,0.05,True)")
        x = 0.1 + 0.8 * i / max(1, n - 1)
        lines.append(f"attach(bbox,0.5,0.0,0.5,{x:.4f},0.0,0.5)")
    return parse_program("\n".join(lines))


def test_two_independent_legs_give_two_orders():
    os = enumerate_valid_orders(two_legs())
    assert sorted(os.orders) == [(0, 1), (1, 0)]


def test_chain_forces_single_order():
    os = enumerate_valid_orders(chain())
    assert os.orders == ((0, 1),)


def test_cap_behavior_on_independent_blocks():
    os = enumerate_valid_orders(independent(4), max_orders=10)
    assert len(os.orders) == 10
    assert len(set(os.orders)) == 10
    assert (0, 1, 2, 3) in os.orders


def test_dependency_extraction():
    deps = block_dependencies(chain())
    assert deps == [set(), {0}]


def test_permuted_program_reindexes_cids():
    p = two_legs()
    q = permuted_program(p, (1, 0))
    # both still attach to bbox only
    assert [blk.attaches[0].value(0) for blk in q.blocks] == [0, 0]
    assert q.blocks[0].cuboid == p.blocks[1].cuboid
    q.validate()


def test_every_order_is_geometry_preserving():
    for prog in (two_legs(), chain(), independent(4)):
        base = execute(prog)
        os = enumerate_valid_orders(prog, max_orders=24)
        for order in os.orders:
            assert geometrically_equal(base, execute(permuted_program(prog, order)), 1e-4)


def test_canonical_order_prefers_declaration_order():
    os = enumerate_valid_orders(two_legs())
    assert canonical_order(os, two_legs()) == (0, 1)
    assert canonical_order(OrderingSet(((1, 0), (0, 1))), two_legs()) == (0, 1)
    assert canonical_order(OrderingSet(((1, 0),)), two_legs()) == (1, 0)


def test_enumeration_is_deterministic():
    p = independent(4)
    a = enumerate_valid_orders(p, max_orders=10, seed=3)
    b = enumerate_valid_orders(p, max_orders=10, seed=3)
    assert a == b
    c = enumerate_valid_orders(p, max_orders=10, seed=4)
    assert set(a.orders) != set(c.orders) or a == c
