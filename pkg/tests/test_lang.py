import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapemacro.lang import (
    ParseError, ValidationError,
    attach_line, count_params, cuboid_line, parse_program, print_program,
    reflect_line, squeeze_line, translate_line, Line, PBlock, Program,
    dval, fval, round4,
)

MINIMAL = (
    "bbox = Cuboid(1.0,1.0,1.0,True)\n"
    "c1 = Cuboid(0.1,0.5,0.1,True)\n"
    "attach(bbox,0.5,0.0,0.5,0.5,0.0,0.5)"
)


def test_parse_minimal_program():
    p = parse_program(MINIMAL)
    assert len(p.blocks) == 1
    assert p.blocks[0].cuboid.value(0) == pytest.approx(0.1)
    assert p.blocks[0].attaches[0].value(0) == 0


def test_roundtrip_identity_on_minimal():
    p = parse_program(MINIMAL)
    assert parse_program(print_program(p)) == p


def test_dangling_cuboid_reference():
    text = MINIMAL.replace("attach(bbox", "attach(c7")
    with pytest.raises(ParseError, match="unknown cuboid"):
        parse_program(text)


def test_unattached_cuboid_rejected():
    text = MINIMAL + "\nc2 = Cuboid(0.1,0.1,0.1,True)"
    with pytest.raises(ParseError, match="never attached"):
        parse_program(text)


def test_arity_mismatch():
    with pytest.raises(ParseError, match="expects 7 arguments"):
        parse_program("bbox = Cuboid(1,1,1,True)\nc1 = Cuboid(1,1,1,True)\nattach(bbox,0.5,0.5)")


def test_float_formatting_four_decimals():
    p = parse_program(MINIMAL.replace("0.1", "0.05"))
    assert "0.0500" in print_program(p)


def test_bbox_only_program_prints():
    p = Program(cuboid_line(1, 1, 1, True))
    assert print_program(p) == "bbox = Cuboid(1.0000, 1.0000, 1.0000, True)\n"
    assert parse_program(print_program(p)) == p


def test_count_params_minimal():
    counts = count_params(parse_program(MINIMAL))
    assert counts == {"fn": 3, "cid": 1, "f": 12, "d": 0, "b": 2}


def test_count_params_bbox_only():
    counts = count_params(Program(cuboid_line(1, 1, 1, True)))
    assert counts == {"fn": 1, "cid": 0, "f": 3, "d": 0, "b": 1}


def test_count_params_squeeze_contributes_one_discrete():
    p = Program(
        cuboid_line(1, 1, 1, True),
        (
            PBlock(cuboid_line(0.2, 0.2, 0.2), (attach_line(0, 0.5, 0, 0.5, 0.2, 0, 0.2),)),
            PBlock(cuboid_line(0.2, 0.2, 0.2), (attach_line(0, 0.5, 0, 0.5, 0.8, 0, 0.8),)),
            PBlock(cuboid_line(0.1, 0.1, 0.1), (squeeze_line(1, 2, "right", 0.5, 0.5),)),
        ),
    )
    p.validate()
    assert count_params(p)["d"] == 1
    assert count_params(p)["cid"] == 4


def test_count_params_additive_over_blocks():
    p = parse_program(MINIMAL)
    base = count_params(Program(p.bbox))
    per_block = count_params(p)
    extra = {k: per_block[k] - base[k] for k in base}
    p2 = Program(p.bbox, p.blocks + p.blocks)
    assert count_params(p2) == {k: base[k] + 2 * extra[k] for k in base}


def test_translate_count_must_be_positive_int():
    with pytest.raises(ValidationError):
        translate_line("X", 0, 0.5)
    with pytest.raises(ValidationError):
        Line("translate", (dval("X"), dval("Y"), fval(0.5)))


def test_attach_coordinates_must_be_unit_interval():
    with pytest.raises(ValidationError):
        attach_line(0, 0.5, 0.0, 0.5, 1.4, 0.0, 0.5)


def test_sym_op_rules():
    with pytest.raises(ParseError, match="symmetry op before any attachment"):
        parse_program(
            "bbox = Cuboid(1,1,1,True)\nc1 = Cuboid(0.1,0.1,0.1,True)\nreflect(X)"
        )
    text = MINIMAL + "\nreflect(X)\ntranslate(X, 2, 0.2)"
    with pytest.raises(ParseError, match="at most one symmetry op"):
        parse_program(text)


# --- property: parse . print is the identity ------------------------------

@st.composite
def programs(draw):
    n_blocks = draw(st.integers(min_value=0, max_value=4))
    coord = st.integers(min_value=0, max_value=10000).map(lambda i: i / 10000.0)
    dim = st.integers(min_value=1, max_value=9999).map(lambda i: i / 10000.0)
    blocks = []
    for i in range(1, n_blocks + 1):
        cuboid = cuboid_line(draw(dim), draw(dim), draw(dim), draw(st.booleans()))
        parent = draw(st.integers(min_value=0, max_value=i - 1))
        style = draw(st.sampled_from(["attach", "attach2", "squeeze"]))
        if style == "squeeze" and i >= 3:
            a = squeeze_line(
                draw(st.integers(min_value=0, max_value=i - 1)),
                draw(st.integers(min_value=0, max_value=i - 1)),
                draw(st.sampled_from(["right", "left", "top", "bot", "front", "back"])),
                draw(coord), draw(coord),
            )
            attaches = (a,)
        else:
            first = attach_line(parent, *(draw(coord) for _ in range(6)))
            if style == "attach2":
                attaches = (first, attach_line(draw(st.integers(min_value=0, max_value=i - 1)),
                                               *(draw(coord) for _ in range(6))))
            else:
                attaches = (first,)
        sym = None
        sym_kind = draw(st.sampled_from([None, "reflect", "translate"]))
        if sym_kind == "reflect":
            sym = reflect_line(draw(st.sampled_from(["X", "Y", "Z"])))
        elif sym_kind == "translate":
            sym = translate_line(
                draw(st.sampled_from(["X", "Y", "Z"])),
                draw(st.integers(min_value=1, max_value=3)),
                draw(coord),
            )
        blocks.append(PBlock(cuboid, attaches, sym))
    return Program(cuboid_line(draw(dim), draw(dim), draw(dim), True), tuple(blocks))


@given(programs())
@settings(max_examples=60, deadline=None)
def test_parse_print_roundtrip_property(p):
    p.validate()
    assert parse_program(print_program(p)) == p


def test_round4_matches_printer_grid():
    assert round4(0.123456) == 0.1235
    assert f"{round4(0.05):.4f}" == "0.0500"
