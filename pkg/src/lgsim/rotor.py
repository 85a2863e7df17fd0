"""Rotor-router aggregation engine.

n particles walk from the origin; at each step the rotor at the current
site rotates to the next direction of the cyclic order and the particle
follows it, settling at the first unoccupied site.  Everything is
deterministic given (n, initial rotors, order).  The engine also runs the
shell-stopped staged mode (particles frozen on a spherical shell, then
released), whose agreement with direct runs is an exact abelian-property
check.
"""

import math
import time
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .lattice import (
    CyclicOrder,
    GridWindow,
    WindowOverflowError,
    unit_ball_volume,
    window_for,
)

__all__ = [
    "RotorField",
    "RotorOdometer",
    "EdgeFlux",
    "AggregateResult",
    "StagedResult",
    "aggregate",
    "aggregate_for",
    "aggregate_staged",
    "aggregate_stopped",
    "check_odometer_flow",
    "flux_divergence_report",
    "exit_counts_by_direction",
    "flux_from_exit_counts",
    "rotor_consistency_ok",
]

GUARD = 2  # settle this close to the edge and the run is declared overflowed


class RotorField:
    """Per-site rotor directions on a window, plus the cyclic order.

    The grid stores canonical direction indices (0..2d-1).  init_policy
    records how the field was built so a regrown window can be
    re-initialized identically ("north", "random:<seed>", "table").
    """

    def __init__(self, window, dirs, order=None, init_policy="table"):
        self.window = window
        self.order = order or CyclicOrder(window.d)
        dirs = np.asarray(dirs, dtype=np.uint8).reshape(window.shape)
        if dirs.max() >= 2 * window.d:
            raise ValueError("rotor direction index out of range")
        self.dirs = dirs
        self.init_policy = init_policy

    @classmethod
    def uniform(cls, window, direction_index=0, order=None):
        """All rotors pointing one way; index 0 is north in d=2."""
        dirs = np.full(window.shape, direction_index, dtype=np.uint8)
        return cls(window, dirs, order, init_policy=f"uniform:{direction_index}")

    @classmethod
    def random(cls, window, seed, order=None):
        """Seeded uniform-random rotors (numpy default_rng)."""
        rng = np.random.default_rng(seed)
        dirs = rng.integers(0, 2 * window.d, size=window.shape, dtype=np.uint8)
        return cls(window, dirs, order, init_policy=f"random:{seed}")

    @classmethod
    def from_policy(cls, window, policy, order=None):
        if policy.startswith("uniform:"):
            return cls.uniform(window, int(policy.split(":")[1]), order)
        if policy in ("north", "uniform"):
            return cls.uniform(window, 0, order)
        if policy.startswith("random:"):
            return cls.random(window, int(policy.split(":")[1]), order)
        raise ValueError(f"unknown rotor init policy {policy!r}")

    def copy(self):
        return RotorField(self.window, self.dirs.copy(), self.order, self.init_policy)


@dataclass
class RotorOdometer:
    """Exit counts per site (64-bit: the origin alone exits ~r^2 log r times)."""

    window: GridWindow
    exits: np.ndarray


class EdgeFlux:
    """Net particle crossings kappa on +axis edges.

    net[a][x] = net crossings from x to x + e_a; antisymmetry
    kappa(x,y) = -kappa(y,x) is by construction, not stored.
    """

    def __init__(self, window, net):
        self.window = window
        self.net = net  # shape (d,) + window.shape, int64

    def divergence(self):
        """2d * div kappa at every site: sum_y kappa(x, y), exact integers."""
        d = self.window.d
        out = np.zeros(self.window.shape, dtype=np.int64)
        for a in range(d):
            na = self.net[a]
            out += na  # outflow along +e_a
            lo = [slice(None)] * d
            hi = [slice(None)] * d
            lo[a] = slice(None, -1)
            hi[a] = slice(1, None)
            out[tuple(hi)] -= na[tuple(lo)]  # inflow from x - e_a
        return out


@dataclass
class AggregateResult:
    region: np.ndarray          # bool grid of A_n
    rotors: RotorField          # final rotor state
    odometer: RotorOdometer | None
    flux: EdgeFlux | None
    n: int
    steps: int | None
    runtime_s: float

    @property
    def window(self):
        return self.rotors.window

    def region_points(self):
        return self.window.points_of_mask(self.region)


def _state_tables(window, order):
    """256-entry nxt/step tables indexed by the packed state byte."""
    d = window.d
    offsets = window.step_offsets()
    nxt = np.zeros(256, dtype=np.uint8)
    step = np.zeros(256, dtype=np.uint64)
    fluxoff = np.zeros(256, dtype=np.uint64)
    fluxsign = np.zeros(256, dtype=np.int64)
    ncells = window.ncells
    for dir_idx in range(2 * d):
        s = 0x80 | dir_idx
        nd = order.successor(dir_idx)
        nxt[s] = 0x80 | nd
        off = int(offsets[nd])
        step[s] = np.uint64(off % (1 << 64))
        axis = d - 1 - (nd % d)
        sign = 1 if nd < d else -1
        # +axis edges live at their smaller endpoint
        base = axis * ncells if sign > 0 else axis * ncells + off
        fluxoff[s] = np.uint64(base % (1 << 64))
        fluxsign[s] = sign
    return nxt, step, fluxoff, fluxsign


def _packed_state(rotors):
    return rotors.dirs.reshape(-1).copy()  # occupied bits all clear


def aggregate(n, rotors, track="full", grow=False):
    """Run rotor-router aggregation of n particles.

    track="full" records the odometer and the per-edge flux; track="fast"
    records only occupancy and rotors (used for large shape sweeps, where
    the accounting arrays would double the runtime).  With grow=True an
    overflowing run is retried from scratch on a 1.5x window (legitimate
    because the whole run is deterministic); otherwise overflow raises.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    window = rotors.window
    while True:
        order = rotors.order
        d = window.d
        state = _packed_state(rotors)
        nxt, step, fluxoff, fluxsign = _state_tables(window, order)
        origin = np.uint64(window.origin_index())
        t0 = time.perf_counter()
        if track == "fast":
            rc = _kernels.rotor_walk_fast(
                n, state, nxt, step, origin, window.side, d, GUARD
            )
            exits = flux = None
        elif track == "full":
            exits = np.zeros(window.ncells, dtype=np.int64)
            flux = np.zeros(d * window.ncells, dtype=np.int64)
            rc = _kernels.rotor_walk_full(
                n, state, nxt, step, exits, flux, fluxoff, fluxsign,
                origin, window.side, d, GUARD,
            )
        else:
            raise ValueError(f"unknown track mode {track!r}")
        runtime = time.perf_counter() - t0
        if rc < 0:
            if not grow:
                raise WindowOverflowError(
                    f"particle {-rc} reached the window guard ring (L={window.L})"
                )
            window = GridWindow(d, int(math.ceil(window.L * 1.5)) + 1)
            rotors = RotorField.from_policy(window, rotors.init_policy, order)
            continue
        break

    occupied = (state & 0x80) != 0
    final = RotorField(
        window, (state & 0x7F).reshape(window.shape), order, rotors.init_policy
    )
    odom = None
    ef = None
    steps = None
    if track == "full":
        odom = RotorOdometer(window, exits.reshape(window.shape))
        ef = EdgeFlux(window, flux.reshape((d,) + window.shape))
        steps = int(exits.sum())
    return AggregateResult(
        region=occupied.reshape(window.shape),
        rotors=final,
        odometer=odom,
        flux=ef,
        n=n,
        steps=steps,
        runtime_s=runtime,
    )


def aggregate_for(n, d=2, init="uniform:0", order=None, track="full", grow=True):
    """Convenience: size the window from n and build rotors from a policy."""
    window = window_for(n, d)
    order = order or CyclicOrder(d)
    rotors = RotorField.from_policy(window, init, order)
    return aggregate(n, rotors, track=track, grow=grow)


@dataclass
class StagedResult:
    region: np.ndarray
    window: GridWindow
    n_inner: int      # particles that reached the inner shell (N_rho)
    n_outer: int      # particles that reached the outer shell (N_rho+h)
    frozen_outer: np.ndarray


def aggregate_stopped(n, rotors, rho):
    """Aggregation with every particle frozen on first reaching shell S_rho.

    Returns (state bytes, frozen counts, N_rho).  Building block for the
    staged mode and for direct-run shell counts.
    """
    window = rotors.window
    if rho + 1 > window.L - GUARD:
        raise WindowOverflowError("stopping shell does not fit in the window")
    state = _packed_state(rotors)
    frozen = np.zeros(window.ncells, dtype=np.int64)
    norm2 = window.norm2_grid().reshape(-1)
    nxt, step, _, _ = _state_tables(window, rotors.order)
    rc = _kernels.rotor_walk_stopped(
        n, state, frozen, norm2, np.int64(rho) ** 2, nxt, step,
        np.uint64(window.origin_index()), window.side, window.d, GUARD,
    )
    if rc < 0:
        raise WindowOverflowError(f"particle {-rc} reached the window guard ring")
    return state, frozen, int(rc)


def aggregate_staged(n, rotors, rho, h, release_order="forward"):
    """Two-stage shell-stopped aggregation.

    Stage 1 freezes particles on S_rho; stage 2 settles one particle per
    occupied-to-be shell site and walks the extras onward until they
    settle or reach S_{rho+h}.  The abelian property makes the final
    configuration and the shell counts independent of the release order
    ("forward", "reverse", or "shuffle:<seed>").
    """
    window = rotors.window
    r_nominal = (n / unit_ball_volume(window.d)) ** (1.0 / window.d)
    if rho < math.ceil(r_nominal):
        raise ValueError("rho must be at least ceil((n/omega_d)^(1/d))")
    if h < 1:
        raise ValueError("h must be >= 1")
    state, frozen, n_inner = aggregate_stopped(n, rotors, rho)

    shell_sites = np.nonzero(frozen)[0].astype(np.int64)
    if release_order == "forward":
        pass
    elif release_order == "reverse":
        shell_sites = shell_sites[::-1].copy()
    elif release_order.startswith("shuffle:"):
        rng = np.random.default_rng(int(release_order.split(":")[1]))
        rng.shuffle(shell_sites)
    else:
        raise ValueError(f"unknown release order {release_order!r}")

    norm2 = window.norm2_grid().reshape(-1)
    nxt, step, _, _ = _state_tables(window, rotors.order)
    frozen2 = np.zeros(window.ncells, dtype=np.int64)
    rc = _kernels.rotor_release_frozen(
        shell_sites, state, frozen, frozen2, norm2,
        np.int64(rho + h) ** 2, nxt, step, window.side, window.d, GUARD,
    )
    if rc < 0:
        raise WindowOverflowError("released particle reached the window guard ring")
    return StagedResult(
        region=((state & 0x80) != 0).reshape(window.shape),
        window=window,
        n_inner=n_inner,
        n_outer=int(rc),
        frozen_outer=frozen2.reshape(window.shape),
    )


@dataclass
class FlowReport:
    max_abs_r: int
    bound: int
    ok: bool
    edges_checked: int


def check_odometer_flow(odometer, flux):
    """Lemma-style flow bound: |u(y) - u(x) + 2d kappa(x,y)| <= 4d - 2.

    Exact integer check over every +axis edge with both endpoints in the
    window (each edge once; antisymmetry covers the reverse orientation).
    """
    window = odometer.window
    d = window.d
    u = odometer.exits
    worst = 0
    edges = 0
    for a in range(d):
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[a] = slice(None, -1)
        hi[a] = slice(1, None)
        du = u[tuple(hi)] - u[tuple(lo)]
        r = du + 2 * d * flux.net[a][tuple(lo)]
        worst = max(worst, int(np.abs(r).max()))
        edges += r.size
    bound = 4 * d - 2
    return FlowReport(max_abs_r=worst, bound=bound, ok=worst <= bound, edges_checked=edges)


@dataclass
class DivergenceReport:
    ok: bool
    origin_value: int
    expected_origin: int
    bad_sites: int


def flux_divergence_report(flux, region, n):
    """Exact conservation of particles through edge crossings.

    sum_y kappa(o,y) = n - 1; for x != o it is -1 on occupied sites and 0
    on never-visited sites.
    """
    window = flux.window
    div = flux.divergence()
    center = (window.L,) * window.d
    origin_value = int(div[center])
    expected = np.where(region, -1, 0).astype(np.int64)
    expected[center] = n - 1
    bad = int(np.count_nonzero(div != expected))
    return DivergenceReport(
        ok=(origin_value == n - 1) and bad == 0,
        origin_value=origin_value,
        expected_origin=n - 1,
        bad_sites=bad,
    )


def exit_counts_by_direction(initial, final_odometer):
    """N(x, j): exits from x along direction j, from rotor arithmetic.

    The t-th exit from x follows direction advance(d0, t); direction j is
    used floor((u - delta_j)/2d) + 1 times where delta_j in [1, 2d] is the
    first t hitting j.  Exact, no simulation state needed.
    """
    order = initial.order
    window = initial.window
    d = window.d
    u = final_odometer.exits
    pos = {v: i for i, v in enumerate(order.permutation)}
    pos_grid = np.vectorize(lambda di: pos[di])(initial.dirs).astype(np.int64)
    counts = np.zeros((2 * d,) + window.shape, dtype=np.int64)
    for j in range(2 * d):
        delta = (pos[j] - pos_grid - 1) % (2 * d) + 1
        counts[j] = np.where(u >= delta, (u - delta) // (2 * d) + 1, 0)
    return counts


def flux_from_exit_counts(counts, window):
    """Reconstruct kappa on +axis edges from per-direction exit counts."""
    d = window.d
    net = np.zeros((d,) + window.shape, dtype=np.int64)
    for a in range(d):
        j_plus = d - 1 - a          # canonical index of +e_a
        j_minus = j_plus + d        # canonical index of -e_a
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[a] = slice(None, -1)
        hi[a] = slice(1, None)
        # crossings x -> x+e_a  minus  x+e_a -> x
        net[a][tuple(lo)] = counts[j_plus][tuple(lo)] - counts[j_minus][tuple(hi)]
    return net


def rotor_consistency_ok(initial, final, odometer):
    """Final rotor == initial rotor advanced exits(x) times in the order."""
    order = initial.order
    twod = 2 * initial.window.d
    pos = {v: i for i, v in enumerate(order.permutation)}
    perm = np.array(order.permutation, dtype=np.int64)
    pos_grid = np.vectorize(lambda di: pos[di])(initial.dirs).astype(np.int64)
    expected = perm[(pos_grid + odometer.exits) % twod]
    return bool(np.array_equal(expected.astype(np.uint8), final.dirs))
