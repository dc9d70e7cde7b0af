"""Poincaré-ball arithmetic: Möbius gyrovector operations, exp/log maps at
the origin, distances, conformal factor, and numerically safe projection.

Points live in the open ball { x : sqrt(c) * ||x|| < 1 } for curvature
magnitude c > 0 (the space has sectional curvature -c).  All functions act
on the last axis, so a single vector of shape (d,) and a batch of shape
(..., d) are both accepted.  Inputs may be plain ndarrays or tape Vars; the
formulas are compositions of tape primitives, so the Var path is exactly
differentiable.

Every ball-valued result is re-projected to norm <= (1 - EPS_BALL)/sqrt(c):
atanh and the conformal factor diverge at the boundary.
"""

from __future__ import annotations

import math

import numpy as np

from . import tape as tp

EPS_BALL = 1e-5

__all__ = [
    "EPS_BALL",
    "check_curvature",
    "max_norm",
    "project_to_ball",
    "mobius_add",
    "mobius_scalar_mul",
    "exp0",
    "log0",
    "dist",
    "dist_arccosh",
    "dist_to_origin",
    "conformal_factor",
    "geodesic",
]


def check_curvature(c):
    c = float(c)
    if not (c > 0.0 and math.isfinite(c)):
        raise ValueError(f"curvature magnitude must be positive and finite, got {c}")
    return c


def max_norm(c):
    """Largest allowed Euclidean norm for a ball point of curvature c."""
    return (1.0 - EPS_BALL) / math.sqrt(check_curvature(c))


def _sq_norm(x):
    return tp.vsum(x * x, axis=-1, keepdims=True)


def _dot(x, y):
    return tp.vsum(x * y, axis=-1, keepdims=True)


def project_to_ball(x, c):
    """Rescale ``x`` radially onto the safe ball if it lies outside.

    Interior points pass through unchanged; points at or beyond norm
    (1 - EPS_BALL)/sqrt(c) are pulled back to that norm, direction kept.
    The rescaling is part of the differentiable graph.
    """
    c = check_curvature(c)
    xv = tp.value(x)
    if not np.all(np.isfinite(xv)):
        raise ValueError("non-finite input to project_to_ball")
    limit = max_norm(c)
    n = np.sqrt((xv * xv).sum(axis=-1, keepdims=True))
    mask = n > limit
    if not mask.any():
        return x
    nv = tp.norm(x, axis=-1, keepdims=True)
    denom = tp.where(mask, nv, np.ones_like(n))
    scaled = x * (limit / denom)
    return tp.where(mask, scaled, x)


def _mobius_add_raw(x, y, c):
    if tp.value(x).shape[-1] != tp.value(y).shape[-1]:
        raise ValueError("mobius_add: dimension mismatch")
    xy = _dot(x, y)
    x2 = _sq_norm(x)
    y2 = _sq_norm(y)
    num = (1.0 + 2.0 * c * xy + c * y2) * x + (1.0 - c * x2) * y
    den = 1.0 + 2.0 * c * xy + c * c * x2 * y2
    return num / den


def mobius_add(x, y, c):
    """Möbius addition x (+)_c y, re-projected into the safe ball."""
    c = check_curvature(c)
    return project_to_ball(_mobius_add_raw(x, y, c), c)


def mobius_scalar_mul(r, x, c):
    """Möbius scalar multiplication r (x)_c x.

    ``r`` may be a python scalar or an array broadcastable against the
    leading axes of ``x`` (shape (..., 1)).  The x = 0 singularity is
    removable and returns 0.
    """
    c = check_curvature(c)
    sc = math.sqrt(c)
    n = tp.norm(x, axis=-1, keepdims=True)
    nv = tp.value(n)
    safe = tp.where(nv < 1e-15, np.ones_like(nv), n)
    out = (1.0 / sc) * tp.tanh(r * tp.atanh(sc * n)) * (x / safe)
    return project_to_ball(out, c)


def exp0(v, c):
    """Exponential map at the origin: tangent vector -> ball point."""
    c = check_curvature(c)
    sc = math.sqrt(c)
    n = tp.norm(v, axis=-1, keepdims=True)
    nv = tp.value(n)
    safe = tp.where(nv < 1e-15, np.ones_like(nv), n)
    out = tp.tanh(sc * n) * (v / (sc * safe))
    return project_to_ball(out, c)


def log0(y, c):
    """Logarithmic map at the origin: ball point -> tangent vector.

    Raises for points at or outside the ball boundary.
    """
    c = check_curvature(c)
    sc = math.sqrt(c)
    yv = tp.value(y)
    n0 = np.sqrt((yv * yv).sum(axis=-1))
    if np.any(sc * n0 >= 1.0):
        raise ValueError("log0: point at or outside the ball boundary")
    n = tp.norm(y, axis=-1, keepdims=True)
    nv = tp.value(n)
    safe = tp.where(nv < 1e-15, np.ones_like(nv), n)
    return tp.atanh(sc * n) * (y / (sc * safe))


def dist(x, y, c):
    """Hyperbolic distance (2/sqrt(c)) atanh(sqrt(c) ||(-x) (+)_c y||).

    Returns shape (...,) with the last axis reduced.
    """
    c = check_curvature(c)
    sc = math.sqrt(c)
    if tp.value(x).shape[-1] != tp.value(y).shape[-1]:
        raise ValueError("dist: dimension mismatch")
    # the Möbius sum is used only through its norm, which for safe-ball
    # inputs stays strictly below 1/sqrt(c); skipping the ball projection
    # here keeps near-boundary distances from saturating.  The clamp only
    # guards against floating-point rounding at the boundary.
    m = _mobius_add_raw(tp.mul(x, -1.0), y, c)
    arg = sc * tp.norm(m, axis=-1, keepdims=False)
    av = tp.value(arg)
    cap = 1.0 - 1e-15
    if np.any(av >= cap):
        arg = tp.where(av >= cap, np.full_like(av, cap), arg)
    return (2.0 / sc) * tp.atanh(arg)


def dist_arccosh(x, y):
    """Unit-ball (c = 1) closed-form distance, arccosh form.

    Kept as the verbatim c = 1 formula; cross-checked against the Möbius
    form in the tests.
    """
    x2 = _sq_norm(x)
    y2 = _sq_norm(y)
    d2 = _sq_norm(x - y)
    arg = 1.0 + 2.0 * d2 / ((1.0 - x2) * (1.0 - y2))
    out = tp.arccosh(arg)
    if isinstance(out, tp.Var):
        return tp.reshape(out, tp.value(out).shape[:-1])
    return np.squeeze(out, axis=-1)


def dist_to_origin(x, c):
    """Hyperbolic distance to the ball origin, (2/sqrt(c)) atanh(sqrt(c)||x||)."""
    c = check_curvature(c)
    sc = math.sqrt(c)
    n = tp.norm(x, axis=-1, keepdims=False)
    return (2.0 / sc) * tp.atanh(sc * n)


def conformal_factor(x, c, keepdims=False):
    """lambda_x^c = 2 / (1 - c ||x||^2); equals 2 at the origin."""
    c = check_curvature(c)
    return 2.0 / (1.0 - c * (_sq_norm(x) if keepdims else tp.vsum(x * x, axis=-1)))


def geodesic(x, y, t, c):
    """Point on the geodesic from x to y at parameter t in [0, 1].

    gamma(t) = x (+)_c (((-x) (+)_c y) (x)_c t); t may be an array of shape
    (..., 1) for batched evaluation.
    """
    u = mobius_add(tp.mul(x, -1.0), y, c)
    return mobius_add(x, mobius_scalar_mul(t, u, c), c)
