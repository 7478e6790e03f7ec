"""Flat tori, separated center sets, ball obstacles and solid regions.

Everything is periodic: distances use the minimal image on ``[0, L)^m``.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.spatial import cKDTree


class GeometryError(ValueError):
    """Raised for invalid geometric input."""


@dataclass(frozen=True)
class Torus:
    """The flat torus ``[0, L)^m``."""

    m: int
    L: float = 1.0

    def __post_init__(self):
        if self.m not in (2, 3):
            raise GeometryError(f"dimension must be 2 or 3, got {self.m}")
        if not self.L > 0:
            raise GeometryError(f"side length must be positive, got {self.L}")

    @property
    def volume(self):
        return self.L ** self.m

    def wrap(self, x):
        return np.mod(np.asarray(x, dtype=float), self.L)


def _displacement(x, y, L):
    d = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    d = np.mod(d, L)
    return np.minimum(d, L - d)


def torus_distance(x, y, torus):
    """Periodic Euclidean distance; broadcasts over leading axes."""
    d = _displacement(x, y, torus.L)
    return np.sqrt(np.sum(d * d, axis=-1))


@dataclass(frozen=True, eq=False)
class SeparatedSet:
    """Centers whose pairwise distances are at least ``2 * sep``."""

    torus: Torus
    centers: np.ndarray
    sep: float
    _tree: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float).reshape(-1, self.torus.m)
        object.__setattr__(self, "centers", self.torus.wrap(c))
        if self.sep <= 0:
            raise GeometryError("separation must be positive")
        if len(c) > 1:
            dmin = min_pairwise_distance(self.centers, self.torus)
            if dmin < 2 * self.sep * (1 - 1e-12):
                raise GeometryError(
                    f"centers not {self.sep}-separated: min distance {dmin}")

    @classmethod
    def empty(cls, torus, sep=None):
        return cls(torus, np.zeros((0, torus.m)), sep or torus.L / 4)

    def __len__(self):
        return len(self.centers)

    def tree(self):
        if self._tree is None:
            # cKDTree wants coordinates strictly below the box size
            pts = np.where(self.centers >= self.torus.L, 0.0, self.centers)
            object.__setattr__(self, "_tree",
                               cKDTree(pts, boxsize=self.torus.L))
        return self._tree

    def nearest(self, x):
        """Distance to and index of the nearest center for each point."""
        x = self.torus.wrap(np.asarray(x, dtype=float).reshape(-1, self.torus.m))
        x = np.where(x >= self.torus.L, 0.0, x)
        if len(self) == 0:
            return np.full(len(x), np.inf), np.full(len(x), -1)
        return self.tree().query(x)

    def subset(self, keep):
        return SeparatedSet(self.torus, self.centers[np.asarray(keep)], self.sep)


def min_pairwise_distance(centers, torus):
    """Smallest periodic distance between distinct centers (exhaustive)."""
    c = np.asarray(centers, dtype=float)
    if len(c) < 2:
        return math.inf
    best = math.inf
    for i in range(len(c) - 1):
        best = min(best, float(np.min(torus_distance(c[i], c[i + 1:], torus))))
    return best


def make_lattice_centers(torus, spacing):
    """Cubic lattice of the given spacing, offset by half a spacing.

    The spacing must divide ``L``; the result is ``spacing/2``-separated.
    """
    if spacing <= 0:
        raise GeometryError("spacing must be positive")
    count = round(torus.L / spacing)
    if count < 1 or abs(count * spacing - torus.L) > 1e-9 * torus.L:
        raise GeometryError(f"spacing {spacing} does not divide L={torus.L}")
    spacing = torus.L / count
    axis = (np.arange(count) + 0.5) * spacing
    mesh = np.meshgrid(*([axis] * torus.m), indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=1)
    return SeparatedSet(torus, pts, spacing / 2)


@dataclass(frozen=True, eq=False)
class ObstacleSet:
    """Union of open balls of a common radius around separated centers."""

    centers: SeparatedSet
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise GeometryError("radius must be positive")
        # open balls with radius <= sep are pairwise disjoint
        if len(self.centers) and self.radius > self.centers.sep * (1 + 1e-12):
            raise GeometryError(
                f"radius {self.radius} exceeds the separation {self.centers.sep}")

    @property
    def torus(self):
        return self.centers.torus

    def contains(self, x):
        return in_obstacle(x, self)


def in_obstacle(x, obstacles):
    """True where the point lies in an open ball of the obstacle set."""
    dist, _ = obstacles.centers.nearest(x)
    out = dist < obstacles.radius
    return out if np.ndim(x) > 1 else bool(out[0])


@dataclass(frozen=True, eq=False)
class SolidRegion:
    """A closed box or ball inside one fundamental domain of the torus."""

    torus: Torus
    kind: str
    center: np.ndarray
    half_extent: np.ndarray = None
    radius: float = None

    @classmethod
    def box(cls, torus, lo, hi):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if lo.shape != (torus.m,) or hi.shape != (torus.m,) or np.any(hi <= lo):
            raise GeometryError("box corners must satisfy lo < hi componentwise")
        if np.any(hi - lo >= torus.L):
            raise GeometryError("box does not fit in one fundamental domain")
        return cls(torus, "box", (lo + hi) / 2, half_extent=(hi - lo) / 2)

    @classmethod
    def ball(cls, torus, center, radius):
        if not 0 < radius < torus.L / 2:
            raise GeometryError("ball radius must lie in (0, L/2)")
        return cls(torus, "ball", np.asarray(center, dtype=float), radius=float(radius))

    @property
    def collar_width(self):
        """Width of the outer collar on which signed distance is unambiguous."""
        lo, hi = self.bounding_box()
        return float((self.torus.L - np.max(hi - lo)) / 2)

    def bounding_box(self):
        half = self.half_extent if self.kind == "box" else np.full(self.torus.m, self.radius)
        return self.center - half, self.center + half

    def signed_distance(self, x):
        return signed_distance_to_S(x, self)

    def contains(self, x):
        return signed_distance_to_S(x, self) <= 0


def signed_distance_to_S(x, S):
    """Signed distance to the boundary of ``S``: negative inside."""
    x = np.asarray(x, dtype=float)
    L = S.torus.L
    d = np.mod(x - S.center + L / 2, L) - L / 2
    if S.kind == "ball":
        return np.sqrt(np.sum(d * d, axis=-1)) - S.radius
    q = np.abs(d) - S.half_extent
    outside = np.sqrt(np.sum(np.maximum(q, 0.0) ** 2, axis=-1))
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return outside + inside


def _sample_region(S, spacing):
    lo, hi = S.bounding_box()
    axes = []
    for a, b in zip(lo, hi):
        k = max(2, int(math.ceil((b - a) / spacing)) + 1)
        axes.append(np.linspace(a, b, k))
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=1)
    if S.kind == "ball":
        pts = pts[signed_distance_to_S(pts, S) <= 0]
        k = max(16, int(2 * math.pi * S.radius / spacing))
        if S.torus.m == 2:
            th = np.linspace(0, 2 * math.pi, k, endpoint=False)
            rim = S.center + S.radius * np.stack([np.cos(th), np.sin(th)], axis=1)
        else:
            rng = np.random.default_rng(0)
            v = rng.normal(size=(k * k, 3))
            rim = S.center + S.radius * v / np.linalg.norm(v, axis=1, keepdims=True)
        pts = np.vstack([pts, rim])
    return pts


def check_cover_multiplicity(centers, eta, S):
    """Check that the eta-balls cover ``S`` and count overlaps.

    Covering uses closed eta-neighbourhoods, checked on a sample of ``S``
    with spacing ``eta/8``. The multiplicity is the largest number of open
    eta-balls meeting a single ball (itself included).
    Returns ``(covers, multiplicity)``.
    """
    if len(centers) == 0:
        return False, 0
    pts = _sample_region(S, eta / 8)
    dist, _ = centers.nearest(pts)
    covers = bool(np.all(dist <= eta * (1 + 1e-12)))
    c = centers.centers
    mult = 0
    for i in range(len(c)):
        mult = max(mult, int(np.sum(torus_distance(c[i], c, centers.torus) < 2 * eta)))
    return covers, mult


def tubular_band(S, width):
    """Predicate for the outer collar ``0 < sd(x) < width`` around ``S``."""
    if not 0 < width < S.collar_width:
        raise GeometryError(
            f"band width {width} must lie in (0, {S.collar_width})")

    def in_band(x):
        sd = signed_distance_to_S(x, S)
        return (sd > 0) & (sd < width)

    return in_band
