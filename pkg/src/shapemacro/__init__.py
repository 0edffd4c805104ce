"""Macro discovery and goal-directed editing for cuboid shape programs."""

from .lang import (
    Line, ParamValue, PBlock, Program,
    count_params, parse_program, print_program,
)
from .executor import (
    CuboidGeom, ShapeGeometry,
    corner_distance, execute, expand_sym_ops, geometrically_equal, geometry_json,
)

__all__ = [
    "Line", "ParamValue", "PBlock", "Program",
    "count_params", "parse_program", "print_program",
    "CuboidGeom", "ShapeGeometry",
    "corner_distance", "execute", "expand_sym_ops", "geometrically_equal",
    "geometry_json",
]
