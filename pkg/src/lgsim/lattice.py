"""Lattice geometry for the growth engines.

Points are tuples of integers in Z^d.  All engines run on a dense,
origin-centered square window [-L, L]^d with a bijective flat index;
dense arrays beat hash maps here because every engine touches a
near-ball region densely and cache locality dominates at large sizes.
"""

import math
import os

import numpy as np

__all__ = [
    "WindowOverflowError",
    "MemoryCapError",
    "unit_ball_volume",
    "norm",
    "norm2",
    "Direction",
    "directions",
    "CyclicOrder",
    "neighbors",
    "in_ball",
    "in_shell",
    "GridWindow",
    "window_for",
    "default_margin",
    "ball_mask",
    "ball_points",
]

MEM_CAP_ENV = "LGSIM_MEM_CAP_MB"
DEFAULT_MEM_CAP_MB = 4096

# Engines account roughly this many bytes per cell across all their arrays;
# used only for the up-front memory-cap check.
BYTES_PER_CELL_ESTIMATE = 40


class WindowOverflowError(RuntimeError):
    """An engine write (or settle/topple) hit the window guard ring."""


class MemoryCapError(RuntimeError):
    """Requested window exceeds the configured memory cap."""


def unit_ball_volume(d):
    """Volume of the unit ball in R^d (pi in d=2, 4*pi/3 in d=3)."""
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)


def norm2(p):
    """Squared Euclidean norm of a lattice point (exact integer)."""
    return sum(c * c for c in p)


def norm(p):
    return math.sqrt(norm2(p))


class Direction:
    """One of the 2d cardinal directions, identified by its canonical index.

    index <-> (axis, sign) is a bijection.  The canonical index order for
    d=2 is N, E, S, W so that cycling 0,1,2,3 rotates clockwise; for
    general d the order is +e_{d-1}, ..., +e_0, -e_{d-1}, ..., -e_0,
    which reduces to N,E,S,W when d=2.
    """

    __slots__ = ("index", "axis", "sign", "d")

    def __init__(self, index, d):
        if not 0 <= index < 2 * d:
            raise ValueError(f"direction index {index} out of range for d={d}")
        self.index = index
        self.d = d
        self.sign = 1 if index < d else -1
        self.axis = d - 1 - (index % d)

    def vector(self):
        v = [0] * self.d
        v[self.axis] = self.sign
        return tuple(v)

    def __repr__(self):
        if self.d == 2:
            return "Direction(%s)" % "NESW"[self.index]
        return f"Direction(index={self.index}, axis={self.axis}, sign={self.sign:+d})"

    def __eq__(self, other):
        return (self.index, self.d) == (other.index, other.d)

    def __hash__(self):
        return hash((self.index, self.d))


def directions(d):
    """The 2d cardinal directions in canonical index order."""
    return [Direction(i, d) for i in range(2 * d)]


class CyclicOrder:
    """Cyclic ordering of the 2d directions that a rotor steps through.

    The default (identity permutation) gives the clockwise N,E,S,W cycle
    in d=2.  `successor(i)` is the direction index that follows direction
    i in the cycle.
    """

    def __init__(self, d, permutation=None):
        self.d = d
        if permutation is None:
            permutation = tuple(range(2 * d))
        permutation = tuple(int(i) for i in permutation)
        if sorted(permutation) != list(range(2 * d)):
            raise ValueError(f"permutation must be a permutation of 0..{2*d-1}")
        self.permutation = permutation
        pos = {v: i for i, v in enumerate(permutation)}
        self._succ = tuple(
            permutation[(pos[i] + 1) % (2 * d)] for i in range(2 * d)
        )

    def successor(self, direction_index):
        return self._succ[direction_index]

    def successor_table(self):
        return np.array(self._succ, dtype=np.int64)

    def advance(self, direction_index, steps):
        """Direction index after rotating `steps` times from the given one."""
        pos = self.permutation.index(direction_index)
        return self.permutation[(pos + steps) % (2 * self.d)]

    @classmethod
    def from_letters(cls, letters):
        """Build a d=2 order from a string like 'NESW' (the default)."""
        lut = {"N": 0, "E": 1, "S": 2, "W": 3}
        try:
            perm = tuple(lut[c] for c in letters.upper())
        except KeyError as exc:
            raise ValueError(f"unknown direction letter in {letters!r}") from exc
        if len(perm) != 4:
            raise ValueError("d=2 order needs exactly 4 letters")
        return cls(2, perm)

    def __repr__(self):
        if self.d == 2:
            return "CyclicOrder(%s)" % "".join("NESW"[i] for i in self.permutation)
        return f"CyclicOrder(d={self.d}, permutation={self.permutation})"


def neighbors(p, d=None):
    """The 2d lattice neighbors of p, in canonical direction-index order."""
    if d is None:
        d = len(p)
    out = []
    for dirn in directions(d):
        q = list(p)
        q[dirn.axis] += dirn.sign
        out.append(tuple(q))
    return out


def in_ball(p, r):
    """True iff |p| < r (strict).  B_r = {x : |x| < r}."""
    if r < 0:
        raise ValueError("r must be >= 0")
    return norm2(p) < r * r


def in_shell(p, rho):
    """True iff rho <= |p| < rho + 1, for integer rho >= 0 (exact integer test)."""
    rho = int(rho)
    if rho < 0:
        raise ValueError("rho must be >= 0")
    n2 = norm2(p)
    return rho * rho <= n2 < (rho + 1) * (rho + 1)


def _mem_cap_bytes(cap_mb=None):
    if cap_mb is None:
        cap_mb = float(os.environ.get(MEM_CAP_ENV, DEFAULT_MEM_CAP_MB))
    return int(cap_mb * 1024 * 1024)


class GridWindow:
    """Dense origin-centered window [-L, L]^d with flat row-major indexing.

    Axis 0 varies slowest: flat(p) = sum_i (p_i + L) * side^(d-1-i) with
    side = 2L + 1.  Immutable after construction except through an owning
    engine; read-only snapshots are safe to share across analysis tasks.
    """

    def __init__(self, d, L, mem_cap_mb=None):
        if d < 2:
            raise ValueError("dimension must be >= 2")
        if L < 1:
            raise ValueError("half-width L must be >= 1")
        self.d = int(d)
        self.L = int(L)
        self.side = 2 * self.L + 1
        self.shape = (self.side,) * self.d
        self.ncells = self.side ** self.d
        cap = _mem_cap_bytes(mem_cap_mb)
        if self.ncells * BYTES_PER_CELL_ESTIMATE > cap:
            raise MemoryCapError(
                f"window d={d} L={L} needs ~{self.ncells * BYTES_PER_CELL_ESTIMATE // 2**20} MB "
                f"(> cap {cap // 2**20} MB; raise {MEM_CAP_ENV} to override)"
            )
        # flat-index stride per axis
        self.strides = tuple(self.side ** (self.d - 1 - i) for i in range(self.d))
        self._norm2_grid = None

    def contains(self, p):
        return all(-self.L <= c <= self.L for c in p)

    def contains_interior(self, p, guard=1):
        """True iff p is at least `guard` cells away from the window edge."""
        lim = self.L - guard
        return all(-lim <= c <= lim for c in p)

    def index(self, p):
        """Flat index of p; raises WindowOverflowError outside the window."""
        if len(p) != self.d:
            raise ValueError(f"point {p} has wrong dimension (want {self.d})")
        if not self.contains(p):
            raise WindowOverflowError(f"point {p} outside window [-{self.L},{self.L}]^{self.d}")
        idx = 0
        for c, s in zip(p, self.strides):
            idx += (c + self.L) * s
        return idx

    def unindex(self, idx):
        """Inverse of index()."""
        if not 0 <= idx < self.ncells:
            raise ValueError(f"flat index {idx} out of range")
        coords = []
        for s in self.strides:
            coords.append(idx // s - self.L)
            idx %= s
        return tuple(coords)

    def origin_index(self):
        return self.index((0,) * self.d)

    def step_offsets(self):
        """Flat-index delta for each canonical direction (length 2d)."""
        out = []
        for dirn in directions(self.d):
            out.append(dirn.sign * self.strides[dirn.axis])
        return np.array(out, dtype=np.int64)

    def coordinate_axes(self):
        """1-d coordinate array [-L..L] (shared by all axes)."""
        return np.arange(-self.L, self.L + 1, dtype=np.int64)

    def norm2_grid(self):
        """|x|^2 over the window, shape self.shape, int64 (cached)."""
        if self._norm2_grid is None:
            ax = self.coordinate_axes()
            g = np.zeros(self.shape, dtype=np.int64)
            for i in range(self.d):
                sh = [1] * self.d
                sh[i] = self.side
                g = g + (ax ** 2).reshape(sh)
            self._norm2_grid = g
        return self._norm2_grid

    def zeros(self, dtype):
        return np.zeros(self.shape, dtype=dtype)

    def points_of_mask(self, mask):
        """Set of lattice points where the boolean grid is true."""
        coords = np.argwhere(mask)
        return {tuple(int(c) - self.L for c in row) for row in coords}

    def mask_of_points(self, points):
        mask = np.zeros(self.shape, dtype=bool)
        for p in points:
            if not self.contains(p):
                raise WindowOverflowError(f"point {p} outside window")
            mask[tuple(c + self.L for c in p)] = True
        return mask

    def __eq__(self, other):
        return isinstance(other, GridWindow) and (self.d, self.L) == (other.d, other.L)

    def __repr__(self):
        return f"GridWindow(d={self.d}, L={self.L})"


def default_margin(r, d):
    """Safety margin beyond the nominal radius for engine windows.

    Generous enough to cover the outer-bound fluctuations of all three
    growth models at desk scale: 2 * (r^(1-1/d) * ln(r+2) + 16).
    """
    return 2.0 * (r ** (1.0 - 1.0 / d) * math.log(r + 2.0) + 16.0)


def window_for(n_or_m, d, margin=None, mem_cap_mb=None):
    """Window sized for a run of total size n (particles/grains) or mass m.

    L >= r + margin with r = (n_or_m / omega_d)^(1/d).  Fails fast with
    MemoryCapError rather than silently reallocating; engines may regrow
    on overflow when explicitly asked to.
    """
    if n_or_m <= 0:
        raise ValueError("size parameter must be > 0")
    r = (n_or_m / unit_ball_volume(d)) ** (1.0 / d)
    if margin is None:
        margin = default_margin(r, d)
    L = int(math.ceil(r + margin))
    return GridWindow(d, max(L, 2), mem_cap_mb=mem_cap_mb)


def ball_mask(window, r):
    """Boolean grid of B_r = {|x| < r} on the window."""
    return window.norm2_grid() < float(r) * float(r)


def ball_points(r, d):
    """B_r as a set of points (small r only; used by tests and reports)."""
    R = int(math.ceil(r))
    win = GridWindow(d, max(R, 1) + 1)
    return win.points_of_mask(ball_mask(win, r))
