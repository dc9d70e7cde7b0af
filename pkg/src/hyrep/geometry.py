"""Space dispatch: the same classifier and clustering machinery runs either
on the Poincaré ball or in plain Euclidean space (the all-Euclidean model
variant).  A Geometry bundles the handful of operations that differ.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ball
from . import tape as tp

__all__ = ["Geometry", "hyperbolic", "euclidean"]


@dataclass(frozen=True)
class Geometry:
    space: str  # "hyperbolic" | "euclidean"
    curvature: float

    def encode(self, x_e):
        """Feature vector -> point (exp0 on the ball, identity otherwise)."""
        if self.space == "hyperbolic":
            return ball.exp0(x_e, self.curvature)
        return x_e

    def decode(self, x):
        if self.space == "hyperbolic":
            return ball.log0(x, self.curvature)
        return x

    def dist(self, x, y):
        if self.space == "hyperbolic":
            return ball.dist(x, y, self.curvature)
        return tp.norm(tp.sub(x, y), axis=-1)

    def dist_to_origin(self, x):
        if self.space == "hyperbolic":
            return ball.dist_to_origin(x, self.curvature)
        return tp.norm(x, axis=-1)

    def geodesic(self, x, y, t):
        if self.space == "hyperbolic":
            return ball.geodesic(x, y, t, self.curvature)
        return tp.add(x, tp.mul(t, tp.sub(y, x)))

    def project(self, x):
        if self.space == "hyperbolic":
            return ball.project_to_ball(x, self.curvature)
        return x

    def boundary_radius(self):
        if self.space == "hyperbolic":
            return ball.max_norm(self.curvature)
        return None


def hyperbolic(c):
    return Geometry("hyperbolic", ball.check_curvature(c))


def euclidean():
    return Geometry("euclidean", 0.0)


def of(space, c):
    if space == "hyperbolic":
        return hyperbolic(c)
    if space == "euclidean":
        return euclidean()
    raise ValueError(f"unknown space tag: {space!r}")
