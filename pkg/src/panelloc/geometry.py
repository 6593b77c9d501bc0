"""Planar scene geometry: wall segments, visibility and mirror images.

Points are length-2 float arrays (anything array-like works); angles are
radians, lengths are meters.  Intersection predicates resolve ties toward
occlusion, so a ray grazing a wall endpoint counts as blocked and visibility
is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

_TOL = 1e-12


def _pt(p) -> np.ndarray:
    q = np.asarray(p, dtype=float)
    if q.shape != (2,):
        raise ValueError(f"expected a 2-D point, got shape {q.shape}")
    return q


@dataclass(frozen=True)
class Wall:
    """A wall segment from ``a`` to ``b``; reflective walls host mirror images."""

    a: np.ndarray
    b: np.ndarray
    reflective: bool = True

    def __post_init__(self):
        object.__setattr__(self, "a", _pt(self.a))
        object.__setattr__(self, "b", _pt(self.b))
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))):
            raise ValueError("wall endpoints must be finite")
        if np.linalg.norm(self.b - self.a) <= 0.0:
            raise ValueError("wall must have positive length")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.b - self.a))


def wrap_angle(theta):
    """Wrap angle(s) to (-pi, pi]."""
    out = np.mod(-np.asarray(theta, dtype=float) + np.pi, 2.0 * np.pi)
    out = np.pi - out
    return float(out) if np.ndim(theta) == 0 else out


def _orient(p, q, r) -> int:
    """Sign of the cross product (q-p) x (r-p), with a scale-aware zero band."""
    v = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    scale = max(abs(q[0] - p[0]), abs(q[1] - p[1]), abs(r[0] - p[0]), abs(r[1] - p[1]), 1.0)
    if abs(v) <= _TOL * scale * scale:
        return 0
    return 1 if v > 0 else -1


def _within(p, q, r) -> bool:
    """Collinear q lies within the closed bounding box of segment p-r."""
    return (
        min(p[0], r[0]) - _TOL <= q[0] <= max(p[0], r[0]) + _TOL
        and min(p[1], r[1]) - _TOL <= q[1] <= max(p[1], r[1]) + _TOL
    )


def segment_intersects(a, b, w: Wall) -> bool:
    """True iff segment a-b meets wall ``w`` (closed test, ties count as hit)."""
    a = _pt(a)
    b = _pt(b)
    if np.array_equal(a, b):
        raise ValueError("degenerate segment: a == b")
    p2, q2 = w.a, w.b
    o1 = _orient(a, b, p2)
    o2 = _orient(a, b, q2)
    o3 = _orient(p2, q2, a)
    o4 = _orient(p2, q2, b)
    if o1 != o2 and o3 != o4:
        return True
    # Collinear / endpoint-touching special cases, resolved toward occlusion.
    if o1 == 0 and _within(a, p2, b):
        return True
    if o2 == 0 and _within(a, q2, b):
        return True
    if o3 == 0 and _within(p2, a, q2):
        return True
    if o4 == 0 and _within(p2, b, q2):
        return True
    return False


def mirror_point(p, w: Wall) -> np.ndarray:
    """Reflect point(s) ``p`` across the infinite line through wall ``w``.

    Accepts a single point (2,) or a stack (N, 2); returns the same shape.
    """
    pts = np.asarray(p, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    d = w.b - w.a
    u = d / np.linalg.norm(d)
    rel = pts - w.a
    foot = w.a + np.outer(rel @ u, u)
    out = 2.0 * foot - pts
    return out[0] if single else out


def point_on_wall(p, w: Wall, tol: float = 1e-9) -> bool:
    """True iff ``p`` lies on the closed segment of ``w`` within ``tol`` meters."""
    p = _pt(p)
    d = w.b - w.a
    L = np.linalg.norm(d)
    u = d / L
    rel = p - w.a
    t = rel @ u
    if t < -tol or t > L + tol:
        return False
    perp = rel - t * u
    return float(np.linalg.norm(perp)) <= tol


def los_visible(agent, pa, walls: Sequence[Wall]) -> bool:
    """Line-of-sight test between agent and panel.

    Walls hosting either endpoint on their boundary are excluded so panels
    mounted flush on a wall do not occlude themselves; the test is symmetric
    in its two endpoints.
    """
    agent = _pt(agent)
    pa = _pt(pa)
    if np.array_equal(agent, pa):
        raise ValueError("agent and panel coincide")
    for w in walls:
        if point_on_wall(pa, w) or point_on_wall(agent, w):
            continue
        if segment_intersects(agent, pa, w):
            return False
    return True


class BouncePath(NamedTuple):
    va: np.ndarray
    distance: float
    reflection_point: np.ndarray


def _segment_crossing(p, q, a, b) -> Optional[tuple[float, float, np.ndarray]]:
    """Proper crossing of segment p-q with segment a-b.

    Returns (t, u, point) with t the parameter along p-q and u along a-b,
    or None when the segments are parallel.
    """
    r = q - p
    s = b - a
    denom = r[0] * s[1] - r[1] * s[0]
    scale = max(abs(r[0]), abs(r[1]), abs(s[0]), abs(s[1]), 1.0)
    if abs(denom) <= _TOL * scale * scale:
        return None
    qp = a - p
    t = (qp[0] * s[1] - qp[1] * s[0]) / denom
    u = (qp[0] * r[1] - qp[1] * r[0]) / denom
    return t, u, p + t * r


def single_bounce_path(agent, pa, w: Wall, walls: Sequence[Wall]) -> Optional[BouncePath]:
    """Construct the specular single-bounce path agent -> wall -> panel.

    Requires ``w`` reflective.  Returns None when the mirror geometry does not
    produce a reflection point in the interior of ``w`` or when either leg is
    blocked by another wall.
    """
    if not w.reflective:
        raise ValueError("single-bounce paths require a reflective wall")
    agent = _pt(agent)
    pa = _pt(pa)
    va = mirror_point(pa, w)
    if np.linalg.norm(va - pa) < 1e-9:
        return None  # panel lies on the mirror plane
    cross = _segment_crossing(agent, va, w.a, w.b)
    if cross is None:
        return None
    t, u, rp = cross
    eps = 1e-12
    if not (eps < t < 1.0 - eps and eps < u < 1.0 - eps):
        return None
    for other in walls:
        if other is w:
            continue
        hosts_pa = point_on_wall(pa, other)
        if not hosts_pa and not point_on_wall(agent, other):
            if segment_intersects(agent, rp, other):
                return None
        if not hosts_pa:
            if segment_intersects(rp, pa, other):
                return None
    return BouncePath(va=va, distance=float(np.linalg.norm(agent - va)), reflection_point=rp)


def aoa_at_panel(pa, orientation: float, src) -> float:
    """Angle of arrival of the ray from ``src`` in the panel's local frame."""
    pa = _pt(pa)
    src = _pt(src)
    if np.array_equal(pa, src):
        raise ValueError("source coincides with the panel")
    bearing = np.arctan2(src[1] - pa[1], src[0] - pa[0])
    return wrap_angle(bearing - orientation)
