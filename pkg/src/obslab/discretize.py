"""Cell-centered finite differences on the torus.

A grid of ``n^m`` cubic cells of side ``h = L/n``. A cell belongs to the
discrete domain when its center lies outside the removed region. The energy
form is ``K = D^T W D`` with one row of ``D`` per grid edge and ``W = h^(m-2)``;
the mass is ``h^m`` per cell. Neumann omits edges to removed cells, Dirichlet
keeps them with a zero ghost value.
"""

from dataclasses import dataclass
import math

import numpy as np
import scipy.sparse as sp

from obslab.geometry import ObstacleSet, SeparatedSet, SolidRegion, signed_distance_to_S

NEUMANN = "neumann"
DIRICHLET = "dirichlet"
MIN_CELLS = 3


class ResolutionError(ValueError):
    """Raised when a feature is too small for the grid."""


@dataclass(frozen=True)
class Grid:
    torus: object
    n: int

    @property
    def m(self):
        return self.torus.m

    @property
    def h(self):
        return self.torus.L / self.n

    @property
    def shape(self):
        return (self.n,) * self.m

    @property
    def size(self):
        return self.n ** self.m

    def cell_centers(self, flat=None):
        """Coordinates of cell centers, all cells or the given flat indices."""
        if flat is None:
            flat = np.arange(self.size)
        idx = np.stack(np.unravel_index(flat, self.shape), axis=-1)
        return (idx + 0.5) * self.h

    def neighbor(self, flat, axis, step):
        idx = list(np.unravel_index(flat, self.shape))
        idx[axis] = (idx[axis] + step) % self.n
        return np.ravel_multi_index(idx, self.shape)


def build_grid(torus, n):
    if int(n) != n or n < MIN_CELLS:
        raise ResolutionError(f"need at least {MIN_CELLS} cells per side, got {n}")
    return Grid(torus, int(n))


def stamp_balls(grid, centers, radius):
    """Cells whose centers lie within ``radius`` of some center.

    Returns ``(flat, dist, owner)``: flat cell index, distance to the owning
    center and the center's index. Balls must not overlap.
    """
    c = np.asarray(centers.centers if isinstance(centers, SeparatedSet) else centers, dtype=float)
    m, h, n = grid.m, grid.h, grid.n
    if len(c) == 0:
        e = np.zeros(0, dtype=np.int64)
        return e, np.zeros(0), e
    reach = int(math.ceil(radius / h)) + 1
    offs = np.arange(-reach, reach + 1)
    mesh = np.meshgrid(*([offs] * m), indexing="ij")
    offsets = np.stack([g.ravel() for g in mesh], axis=1)
    base = np.floor(c / h - 0.5).astype(np.int64)
    idx = base[:, None, :] + offsets[None, :, :]
    pos = (idx + 0.5) * h
    dist = np.sqrt(np.sum((pos - c[:, None, :]) ** 2, axis=-1))
    keep = dist < radius
    owner = np.broadcast_to(np.arange(len(c))[:, None], keep.shape)[keep]
    wrapped = np.mod(idx[keep], n)
    flat = np.ravel_multi_index(tuple(wrapped.T), grid.shape)
    return flat, dist[keep], owner


def _removed(grid, region, min_resolution):
    removed = np.zeros(grid.size, dtype=bool)
    if region is None:
        return removed
    parts = region if isinstance(region, (list, tuple)) else [region]
    for part in parts:
        if isinstance(part, ObstacleSet):
            if len(part.centers) == 0:
                continue
            if part.radius / grid.h < min_resolution * (1 - 1e-12):
                raise ResolutionError(
                    f"obstacle radius/h = {part.radius / grid.h:.3g} below guard {min_resolution}")
            flat, _, owner = stamp_balls(grid, part.centers, part.radius)
            if len(np.unique(owner)) < len(part.centers):
                raise ResolutionError("an obstacle ball contains no cell center")
            removed[flat] = True
        elif isinstance(part, SolidRegion):
            removed |= signed_distance_to_S(grid.cell_centers(), part) <= 0
        elif callable(part):
            removed |= np.asarray(part(grid.cell_centers()), dtype=bool)
        else:
            raise TypeError(f"unsupported region {part!r}")
    return removed


@dataclass
class CellMask:
    grid: Grid
    active: np.ndarray
    bc: str = DIRICHLET

    def __post_init__(self):
        if self.bc not in (NEUMANN, DIRICHLET):
            raise ValueError(f"unknown boundary condition {self.bc!r}")
        self.active = np.asarray(self.active, dtype=bool).ravel()

    @property
    def count(self):
        return int(self.active.sum())

    def subset_of(self, other):
        return bool(np.all(other.active[self.active]))

    def to_bitmap(self):
        """Portable text bitmap: a header line then row-major 0/1 rows."""
        g = self.grid
        rows = self.active.reshape(-1, g.n).astype(np.uint8)
        body = "\n".join("".join("1" if v else "0" for v in row) for row in rows)
        return f"obslab-mask m={g.m} n={g.n} L={g.torus.L!r} bc={self.bc}\n{body}\n"

    @classmethod
    def from_bitmap(cls, text):
        from obslab.geometry import Torus

        lines = text.strip().splitlines()
        fields = dict(tok.split("=") for tok in lines[0].split()[1:])
        torus = Torus(int(fields["m"]), float(fields["L"]))
        grid = build_grid(torus, int(fields["n"]))
        bits = np.array([c == "1" for line in lines[1:] for c in line.strip()])
        if bits.size != grid.size:
            raise ValueError("bitmap size does not match header")
        return cls(grid, bits, fields["bc"])


def classify_cells(grid, region=None, min_resolution=8.0, bc=DIRICHLET):
    """Active-cell mask of the torus minus ``region``.

    ``region`` may be None, an ObstacleSet, a SolidRegion, a predicate on
    point arrays, or a list of these (their union is removed).
    """
    removed = _removed(grid, region, min_resolution)
    return CellMask(grid, ~removed, bc)


class DiscreteSpace:
    """Grid functions on the active cells with the ``h^m``-weighted inner product."""

    def __init__(self, mask):
        self.mask = mask
        self.grid = mask.grid
        self.index = np.flatnonzero(mask.active)
        self.position = np.full(self.grid.size, -1, dtype=np.int64)
        self.position[self.index] = np.arange(len(self.index))
        self.weight = self.grid.h ** self.grid.m
        self.mass = np.full(len(self.index), self.weight)

    @property
    def dim(self):
        return len(self.index)

    @property
    def bc(self):
        return self.mask.bc

    @property
    def is_full(self):
        return self.dim == self.grid.size

    def inner(self, f, g):
        return self.weight * float(np.dot(f, g))

    def norm(self, f):
        return math.sqrt(self.inner(f, f))

    def extend(self, u):
        out = np.zeros(self.grid.size)
        out[self.index] = u
        return out

    def restrict(self, values):
        return np.asarray(values)[self.index]

    def embedding(self, other):
        """Selection matrix from this space into ``other`` (zero elsewhere)."""
        rows = other.position[self.index]
        if np.any(rows < 0):
            raise ValueError("space is not contained in the target space")
        return sp.csr_matrix((np.ones(self.dim), (rows, np.arange(self.dim))),
                             shape=(other.dim, self.dim))


def _edges(grid):
    """All oriented grid edges ``(a, b)`` with ``b`` the +1 neighbour of ``a``."""
    a = np.arange(grid.size)
    tails, heads = [], []
    for axis in range(grid.m):
        tails.append(a)
        heads.append(grid.neighbor(a, axis, 1))
    return np.concatenate(tails), np.concatenate(heads)


class DiscreteForm:
    """Energy form ``K = D^T W D`` on a discrete space."""

    def __init__(self, space, D, edge_weight):
        self.space = space
        self.D = D
        self.edge_weight = edge_weight
        self.K = (D.T @ D).tocsr() * edge_weight
        self.K.sum_duplicates()
        self.K.sort_indices()

    @property
    def dim(self):
        return self.space.dim

    @property
    def mass(self):
        return self.space.mass

    @property
    def grid(self):
        return self.space.grid

    def energy(self, f, g=None):
        g = f if g is None else g
        return float(np.dot(f, self.K @ g))

    def h1_norm(self, f):
        return math.sqrt(self.energy(f) + self.space.inner(f, f))


def assemble_form(space):
    grid = space.grid
    tails, heads = _edges(grid)
    pt, ph = space.position[tails], space.position[heads]
    if space.bc == NEUMANN:
        keep = (pt >= 0) & (ph >= 0)
    else:
        keep = (pt >= 0) | (ph >= 0)
    pt, ph = pt[keep], ph[keep]
    rows = np.arange(len(pt))
    r_list, c_list, v_list = [], [], []
    for cols, sign in ((ph, 1.0), (pt, -1.0)):
        ok = cols >= 0
        r_list.append(rows[ok])
        c_list.append(cols[ok])
        v_list.append(np.full(ok.sum(), sign))
    D = sp.csr_matrix((np.concatenate(v_list), (np.concatenate(r_list), np.concatenate(c_list))),
                      shape=(len(rows), space.dim))
    return DiscreteForm(space, D, grid.h ** (grid.m - 2))


def assemble_stencil(space):
    """Assemble ``K`` directly from the 2m-point stencil (second route)."""
    grid = space.grid
    w = grid.h ** (grid.m - 2)
    cells = space.index
    diag = np.zeros(space.dim)
    rows, cols = [], []
    for axis in range(grid.m):
        for step in (1, -1):
            nb = space.position[grid.neighbor(cells, axis, step)]
            ok = nb >= 0
            rows.append(np.flatnonzero(ok))
            cols.append(nb[ok])
            diag += 1.0 if space.bc == DIRICHLET else ok
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    off = sp.csr_matrix((np.full(len(rows), -w), (rows, cols)), shape=(space.dim, space.dim))
    K = (off + sp.diags(w * diag)).tocsr()
    K.sort_indices()
    return K


def radial_profile(r, m):
    """Radial fundamental solution: log r in 2D, -r^(2-m)/(m-2) otherwise."""
    r = np.asarray(r, dtype=float)
    if m == 2:
        return np.log(r)
    return -1.0 / ((m - 2) * r ** (m - 2))


@dataclass(frozen=True, eq=False)
class RadialCutoff:
    """Capacitary cutoff: 0 inside ``eps``, 1 beyond ``eps_plus``, harmonic between."""

    centers: SeparatedSet
    eps: float
    eps_plus: float

    def __post_init__(self):
        if not 0 < self.eps < self.eps_plus:
            raise ValueError("need 0 < eps < eps_plus")

    def profile(self, r, m):
        lo, hi = radial_profile(self.eps, m), radial_profile(self.eps_plus, m)
        r = np.clip(np.asarray(r, dtype=float), self.eps, self.eps_plus)
        return (radial_profile(r, m) - lo) / (hi - lo)


@dataclass(frozen=True, eq=False)
class TubularCutoff:
    """Smoothstep in the signed distance: 0 on S, 1 beyond ``width``."""

    solid: SolidRegion
    width: float

    def __post_init__(self):
        if not 0 < self.width < self.solid.collar_width:
            raise ValueError(
                f"collar width {self.width} must lie in (0, {self.solid.collar_width})")


def smoothstep(x):
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def sample_cutoff(grid, cutoff, space=None):
    """Cutoff values at cell centers, restricted to ``space`` if given."""
    if isinstance(cutoff, RadialCutoff):
        values = np.ones(grid.size)
        flat, dist, _ = stamp_balls(grid, cutoff.centers, cutoff.eps_plus)
        values[flat] = cutoff.profile(dist, grid.m)
    elif isinstance(cutoff, TubularCutoff):
        sd = signed_distance_to_S(grid.cell_centers(), cutoff.solid)
        values = smoothstep(sd / cutoff.width)
    else:
        raise TypeError(f"unsupported cutoff {cutoff!r}")
    return values if space is None else space.restrict(values)


def discrete_h2_seminorm(form, f):
    """l2 norm of pure second differences over stencils with all-active points."""
    space, grid = form.space, form.grid
    cells = space.index
    total = 0.0
    for axis in range(grid.m):
        up = space.position[grid.neighbor(cells, axis, 1)]
        down = space.position[grid.neighbor(cells, axis, -1)]
        ok = (up >= 0) & (down >= 0)
        s = (f[up[ok]] - 2.0 * f[ok] + f[down[ok]]) / grid.h ** 2
        total += float(np.dot(s, s))
    return math.sqrt(space.weight * total)
