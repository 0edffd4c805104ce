import pytest

from shapemacro.lang import cuboid_line, attach_line, fval, parse_program
from shapemacro.library import (
    Call, Const, Formal, FormalRef, Library, LibraryError, LinExpr, Macro,
    ObjectiveWeights, RefactoredProgram,
    base_call_cost, expand, expand_refactored, generalizes, lib_cover_cost,
    library_from_json, library_to_json, macro_call_cost, macro_from_json,
    macro_gain, macro_key, macro_to_json, match_macro, named_macro, objective,
    program_cost, slot_exprs, weighted_dof,
)

W = ObjectiveWeights()


def leg_macro():
    """Cuboid(p0, p1, p0, True); attach(bbox, 0.5, 0, 0.5, p2, 0, p3)."""
    return named_macro(
        formals=(
            Formal("f", 0.0, None), Formal("f", 0.0, None),
            Formal("f", 0.0, 1.0), Formal("f", 0.0, 1.0),
        ),
        body=(
            ("Cuboid", (FormalRef(0), FormalRef(1), FormalRef(0), Const(True))),
            ("attach", (Const(0), Const(0.5), Const(0.0), Const(0.5),
                        FormalRef(2), Const(0.0), FormalRef(3))),
        ),
    )


def test_expand_substitution():
    m = named_macro(
        formals=(Formal("f", 0.0, None), Formal("f", 0.0, None)),
        body=(("Cuboid", (FormalRef(0), FormalRef(1), FormalRef(0), Const(True))),),
    )
    (line,) = expand(m, (0.1, 0.5))
    assert line == cuboid_line(0.1, 0.5, 0.1, True)


def test_expand_linexpr_over_bbox():
    m = named_macro(
        formals=(Formal("f", 0.0, None),),
        body=(
            ("Cuboid", (Const(0.2), FormalRef(0), Const(0.2), Const(True))),
            ("Cuboid", (Const(0.2), LinExpr(-1, 0, 0, None, 0.0).__class__(a=-1, x=0, b=0, y=None, c=0.0), Const(0.2), Const(True))),
        ),
    )
    # h_bbox - p0 with bbox h=1.0, p0=0.3 -> 0.7
    m2 = named_macro(
        formals=(Formal("f", 0.0, None),),
        body=(
            ("Cuboid", (Const(0.2), FormalRef(0), Const(0.2), Const(True))),
            ("Cuboid", (Const(0.2), LinExpr(1, "bbox_h", -1, 0, 0.0), Const(0.2), Const(True))),
        ),
    )
    lines = expand(m2, (0.3,), bbox_dims=(1.0, 1.0, 1.0))
    assert lines[1].value(1) == pytest.approx(0.7)


def test_expand_wrong_arity_and_bounds():
    m = leg_macro()
    with pytest.raises(LibraryError):
        expand(m, (0.1,))
    with pytest.raises(LibraryError):
        expand(m, (0.1, 0.5, 1.4, 0.5))  # coordinate formal above its bound


def test_macro_requires_direct_reference_before_expression_use():
    with pytest.raises(LibraryError):
        Macro(
            "bad",
            (Formal("f"),),
            (("Cuboid", (LinExpr(1, 0), FormalRef(0), Const(0.1), Const(True))),),
        )


def test_match_macro_exact_and_threshold():
    m = leg_macro()
    ok = expand(m, (0.08, 0.4, 0.2, 0.2))
    args, err = match_macro(m, ok, (1, 1, 1), eps=0.05)
    assert err == pytest.approx(0.0)
    assert [a.value for a in args] == pytest.approx([0.08, 0.4, 0.2, 0.2])

    # continuous const off by 0.06 from the macro's Const 0.5 -> no cover
    bad = [ok[0], attach_line(0, 0.56, 0.0, 0.5, 0.2, 0.0, 0.2)]
    assert match_macro(m, bad, (1, 1, 1), eps=0.05) is None


def test_match_macro_shared_formal_spread():
    m = leg_macro()
    # p0 appears as both w and d; spread 0.08 < 2*eps so midpoint still covers
    lines = [cuboid_line(0.06, 0.4, 0.14, True), expand(m, (0.1, 0.4, 0.2, 0.2))[1]]
    args, err = match_macro(m, lines, (1, 1, 1), eps=0.05)
    assert args[0].value == pytest.approx(0.1)
    assert err == pytest.approx(0.08)
    lines = [cuboid_line(0.06, 0.4, 0.18, True), expand(m, (0.1, 0.4, 0.2, 0.2))[1]]
    assert match_macro(m, lines, (1, 1, 1), eps=0.05) is None


def test_match_macro_discrete_must_be_exact():
    m = leg_macro()
    lines = expand(m, (0.08, 0.4, 0.2, 0.2))
    lines[0] = cuboid_line(0.08, 0.4, 0.08, False)  # flips the Const(True)
    assert match_macro(m, lines, (1, 1, 1), eps=0.05) is None


def test_objective_formula_values():
    class Entry:
        def __init__(self, uid):
            self.uid = uid

    class DS:
        def __init__(self, entries):
            self.entries = entries

    lib = Library()
    # empty dataset: f = lam_n * 5
    assert objective(DS([]), lib, W, {}) == pytest.approx(5.0)
    # one call with no free parameters and no error: f = 5 + lam_fn
    rp = RefactoredProgram((Call("m_x", ()),), (0,), 0.0)
    assert objective(DS([Entry(0)]), lib, W, {0: rp}) == pytest.approx(13.0)


def test_objective_monotone_in_library_size():
    class Entry:
        uid = 0

    class DS:
        entries = [Entry()]

    rp = RefactoredProgram((Call("Cuboid", tuple(cuboid_line(1, 1, 1, True).params)),), (0,), 0.0)
    f0 = objective(DS(), Library(), W, {0: rp})
    unused = leg_macro()
    f1 = objective(DS(), Library().with_macro(unused), W, {0: rp})
    assert f1 - f0 == pytest.approx(W.lam_n)


def test_table_scale_weighted_sum_identity():
    # Published compression row: f=411 with |L|=5, fn=29.8, d=17.8, f=84.4,
    # b=11.3; solving the weighted sum for the cid share gives ~8.93.
    known = W.lam_n * 5 + W.lam_fn * 29.8 + W.lam_d * 17.8 + W.lam_f * 84.4 + W.lam_b * 11.3
    implied_cid = (411 - known) / W.lam_cid
    assert implied_cid == pytest.approx(8.93, abs=0.005)
    recomposed = known + W.lam_cid * implied_cid
    assert recomposed == pytest.approx(411.0, abs=1e-9)


def test_weighted_dof_counts_distinct_formals_once():
    assert weighted_dof([("f", None)], W) == pytest.approx(1.0)
    assert weighted_dof([("fn", None), ("b", None)], W) == pytest.approx(8.25)
    m = leg_macro()
    slots = []
    for command, specs in m.body:
        from shapemacro.lang import SIGNATURES
        slots.extend(zip(SIGNATURES[command], specs))
    # p0 used twice but counts once: 4 distinct f formals
    assert weighted_dof(slots, W) == pytest.approx(4.0)
    all_const = [("f", Const(0.5)), ("d", Const("top"))]
    assert weighted_dof(all_const, W) == pytest.approx(0.0)


def test_generalizes_free_const_direction():
    m = leg_macro()
    freed = named_macro(
        formals=m.formals + (Formal("f", 0.0, 1.0),),
        body=(
            m.body[0],
            ("attach", (Const(0), FormalRef(4), Const(0.0), Const(0.5),
                        FormalRef(2), Const(0.0), FormalRef(3))),
        ),
    )
    assert generalizes(freed, slot_exprs(m))
    assert not generalizes(m, slot_exprs(freed))


def test_generalizes_requires_consistent_sharing():
    m = leg_macro()  # w and d share p0
    split = named_macro(
        formals=(Formal("f"), Formal("f"), Formal("f"), Formal("f"), Formal("f")),
        body=(
            ("Cuboid", (FormalRef(0), FormalRef(1), FormalRef(4), Const(True))),
            ("attach", (Const(0), Const(0.5), Const(0.0), Const(0.5),
                        FormalRef(2), Const(0.0), FormalRef(3))),
        ),
    )
    # split generalizes m (independent w/d can mimic shared ones)...
    assert generalizes(split, slot_exprs(m))
    # ...but the shared version cannot reproduce every split instantiation.
    assert not generalizes(m, slot_exprs(split))


def test_macro_gain_against_base_cover():
    m = leg_macro()
    # base cover: Cuboid + attach raw cost; macro exposes 4 f formals
    base = base_call_cost("Cuboid", W) + base_call_cost("attach", W)
    expect = base - macro_call_cost(m, W)
    assert macro_gain(m, Library(), W) == pytest.approx(expect)
    # once the macro itself is in the library the gain vanishes
    assert macro_gain(m, Library().with_macro(m), W) == pytest.approx(0.0)


def test_macro_gain_versus_generalizing_library_macro():
    # library holds a generalization with 3 extra free slots (2 f + 1 b);
    # the candidate's gain is exactly those weighted savings.
    cand = named_macro(
        formals=(Formal("f"),),
        body=(
            ("Cuboid", (FormalRef(0), Const(0.4), Const(0.1), Const(True))),
            ("attach", (Const(0), Const(0.5), Const(0.0), Const(0.5),
                        Const(0.2), Const(0.0), Const(0.2))),
        ),
    )
    general = named_macro(
        formals=(Formal("f"), Formal("f"), Formal("f"), Formal("b")),
        body=(
            ("Cuboid", (FormalRef(0), FormalRef(1), FormalRef(2), FormalRef(3))),
            ("attach", (Const(0), Const(0.5), Const(0.0), Const(0.5),
                        Const(0.2), Const(0.0), Const(0.2))),
        ),
    )
    g = macro_gain(cand, Library().with_macro(general), W)
    assert g == pytest.approx(2 * W.lam_f + W.lam_b)


def test_expand_refactored_roundtrip():
    text = (
        "bbox = Cuboid(1.0,1.0,1.0,True)\n"
        "c1 = Cuboid(0.08,0.4,0.08,True)\n"
        "attach(bbox,0.5,0.0,0.5,0.2,0.0,0.2)\n"
    )
    p = parse_program(text)
    m = leg_macro()
    lib = Library().with_macro(m)
    args, err = match_macro(m, p.lines()[1:], p.bbox_dims(), 0.05)
    rp = RefactoredProgram(
        (Call("Cuboid", tuple(p.bbox.params)), Call(m.name, args)), (0,), err
    )
    assert expand_refactored(lib, rp) == p.lines()


def test_program_cost_components():
    rp = RefactoredProgram(
        (Call("Cuboid", tuple(cuboid_line(1, 1, 1, True).params)),), (0,), 0.1
    )
    # fn + 3f + b + eps*err
    assert program_cost(rp, W) == pytest.approx(8 + 3 + 0.25 + 10 * 0.1)


def test_library_json_roundtrip():
    m = leg_macro()
    rel = named_macro(
        formals=(Formal("f", 0.0, None),),
        body=(
            ("Cuboid", (Const(0.2), FormalRef(0), Const(0.2), Const(True))),
            ("Cuboid", (Const(0.2), LinExpr(1, "bbox_h", -1, 0, 0.0), Const(0.2), Const(True))),
        ),
        uses=(m.name,),
    )
    lib = Library((m, rel))
    again = library_from_json(library_to_json(lib))
    assert again == lib
    assert macro_from_json(macro_to_json(m)) == m
    assert macro_key(again.macros[0]) == macro_key(m)


def test_library_name_uniqueness():
    m = leg_macro()
    with pytest.raises(LibraryError):
        Library((m, m))
