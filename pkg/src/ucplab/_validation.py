"""Input validation helpers shared by the estimators and functional API."""

import math
import numbers

import numpy as np

from .exceptions import IncommensurateBox

BOUNDARY_CONDITIONS = ("dirichlet", "periodic")


def check_bc(bc):
    bc = str(bc).lower()
    if bc not in BOUNDARY_CONDITIONS:
        raise ValueError(f"boundary condition must be one of {BOUNDARY_CONDITIONS}, got {bc!r}")
    return bc


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not math.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    if strict and value <= 0:
        raise ValueError(f"{name} must be > 0, got {value!r}")
    if not strict and value < 0:
        raise ValueError(f"{name} must be >= 0, got {value!r}")
    return float(value)


def check_dim(d):
    if not isinstance(d, numbers.Integral) or d < 1:
        raise ValueError(f"dimension must be a positive integer, got {d!r}")
    return int(d)


def as_int_if_close(x, name, tol=1e-9):
    """Return ``round(x)`` if ``x`` is within ``tol`` of an integer, else raise."""
    r = round(float(x))
    if abs(float(x) - r) > tol:
        raise IncommensurateBox(f"{name} must be an integer, got {x!r}")
    return int(r)


def check_odd_side(L, M=1):
    """Validate that L/M is an odd integer and return it."""
    ratio = as_int_if_close(float(L) / float(M), "L/M")
    if ratio < 1 or ratio % 2 == 0:
        raise IncommensurateBox(f"L/M must be an odd positive integer, got L={L}, M={M}")
    return ratio


def check_points(points, d=None):
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1) if d in (None, 1) else pts.reshape(1, -1)
    if pts.ndim != 2:
        raise ValueError("points must be a 2-D array of shape (n, d)")
    if d is not None and pts.shape[0] and pts.shape[1] != d:
        raise ValueError(f"points have dimension {pts.shape[1]}, expected {d}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    return pts
