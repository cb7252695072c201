"""Grids, fields, interpolation and quadrature."""
from .grid import BallFrame, GridSpec, VectorField, default_mask, gradient, laplacian, make_field
from .interp import FieldFunction, as_function, interpolate, linear_sampler, shifted, spline_sampler
from .io import dumps, loads, read_field, write_field
from .quadrature import (BoundaryTrace, ball_integral, ball_rule, ball_weights, boundary_trace,
                         integrate_ball, sphere_nodes, sphere_rule)

__all__ = [
    "BallFrame", "GridSpec", "VectorField", "default_mask", "gradient", "laplacian", "make_field",
    "FieldFunction", "as_function", "interpolate", "linear_sampler", "shifted", "spline_sampler",
    "dumps", "loads", "read_field", "write_field",
    "BoundaryTrace", "ball_integral", "ball_rule", "ball_weights", "boundary_trace",
    "integrate_ball", "sphere_nodes", "sphere_rule",
]
