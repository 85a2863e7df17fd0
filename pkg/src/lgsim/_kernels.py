"""Numba kernels for the three growth engines.

All kernels work on flat arrays with uint64 indices.  Step offsets are
stored as uint64 two's-complement values so that negative moves wrap
correctly without a sign check in the hot loop (the index stays far from
2^63 because engine windows are guarded).  Rotor state is one byte per
site: bit 7 = occupied, low bits = current direction index; `nxt` and
`step` are 256-entry tables indexed by the raw state byte, which encode
the cyclic order and the lattice strides and make one kernel serve every
dimension and rotor ordering.
"""

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_OVERFLOW = 1
STATUS_CAP = 2

OCC = 0x80  # occupied bit in the rotor state byte


@njit(cache=True, nogil=True)
def rotor_walk_fast(n, state, nxt, step, origin, side, d, guard):
    """Aggregate n particles, tracking only rotors and occupancy.

    Returns the number of particles settled; a negative return -(p+1)
    means particle p wanted to settle inside the guard ring (window
    overflow).
    """
    for p in range(n):
        idx = origin
        s = state[idx]
        while s & OCC:
            state[idx] = nxt[s]
            idx += step[s]
            s = state[idx]
        v = np.int64(idx)
        for _ in range(d):
            c = v % side
            if c < guard or c >= side - guard:
                return -np.int64(p + 1)
            v //= side
        state[idx] = s | OCC
    return np.int64(n)


@njit(cache=True, nogil=True)
def rotor_walk_full(n, state, nxt, step, exits, flux, fluxoff, fluxsign,
                    origin, side, d, guard):
    """Aggregate with odometer and per-edge net-crossing accounting.

    exits[x] counts departures from x; flux is a flat (d * ncells) array
    of net crossings along +axis edges, updated through the fluxoff /
    fluxsign tables (indexed by state byte like nxt/step).
    """
    for p in range(n):
        idx = origin
        s = state[idx]
        while s & OCC:
            state[idx] = nxt[s]
            exits[idx] += 1
            flux[idx + fluxoff[s]] += fluxsign[s]
            idx += step[s]
            s = state[idx]
        v = np.int64(idx)
        for _ in range(d):
            c = v % side
            if c < guard or c >= side - guard:
                return -np.int64(p + 1)
            v //= side
        state[idx] = s | OCC
    return np.int64(n)


@njit(cache=True, nogil=True)
def rotor_walk_stopped(n, state, frozen, norm2, shell_lo2, nxt, step,
                       origin, side, d, guard):
    """Stage-1 staged aggregation: freeze arrivals on the shell.

    A particle stops when it reaches the shell {norm2 >= shell_lo2}
    (frozen count bumped, site NOT occupied) or an unoccupied off-shell
    site (settles).  Returns total frozen arrivals, or -(p+1) on overflow.
    """
    nfrozen = np.int64(0)
    for p in range(n):
        idx = origin
        while True:
            if norm2[idx] >= shell_lo2:
                frozen[idx] += 1
                nfrozen += 1
                break
            s = state[idx]
            if not s & OCC:
                v = np.int64(idx)
                for _ in range(d):
                    c = v % side
                    if c < guard or c >= side - guard:
                        return -np.int64(p + 1)
                    v //= side
                state[idx] = s | OCC
                break
            state[idx] = nxt[s]
            idx += step[s]
    return nfrozen


@njit(cache=True, nogil=True)
def rotor_release_frozen(release_order, state, frozen, frozen2, norm2,
                         shell_hi2, nxt, step, side, d, guard):
    """Stage-2 staged aggregation: walk the extra frozen particles onward.

    Visits shell sites in release_order; the first particle at an
    unoccupied shell site settles there, the rest perform rotor walks
    stopped at unoccupied sites or at the outer shell {norm2 >= shell_hi2}
    (arrivals recorded in frozen2).  Returns arrivals at the outer shell,
    or -1 on overflow.
    """
    n2out = np.int64(0)
    for k in range(release_order.shape[0]):
        start = np.uint64(release_order[k])
        if frozen[start] == 0:
            continue
        extra = frozen[start]
        frozen[start] = 0
        if not state[start] & OCC:
            state[start] |= OCC
            extra -= 1
        for _ in range(extra):
            idx = start
            while True:
                if norm2[idx] >= shell_hi2:
                    frozen2[idx] += 1
                    n2out += 1
                    break
                s = state[idx]
                if not s & OCC:
                    v = np.int64(idx)
                    for _ in range(d):
                        c = v % side
                        if c < guard or c >= side - guard:
                            return np.int64(-1)
                        v //= side
                    state[idx] = s | OCC
                    break
                state[idx] = nxt[s]
                idx += step[s]
    return n2out


@njit(cache=True, nogil=True)
def div_stabilize_queue(mass, emitted, interior, offs, queue, inqueue,
                        eps_stop, lifo, max_pops):
    """Divisible-sandpile relaxation with a FIFO queue (or LIFO stack).

    Pops a site, emits its full excess (mass - 1) in equal shares to the
    2d neighbors, and enqueues any neighbor pushed above 1 + eps_stop.
    Seed sites must already be in the queue.  Returns (status, pops).
    """
    twod = offs.shape[0]
    share_div = float(twod)
    ncells = mass.shape[0]
    cap = np.int64(ncells + 1)
    head = np.int64(0)
    tail = np.int64(0)
    # count entries already seeded
    for i in range(ncells):
        if inqueue[i]:
            queue[tail] = i
            tail += 1
    pops = np.int64(0)
    thresh = 1.0 + eps_stop
    while head != tail:
        if lifo:
            tail -= 1
            if tail < 0:
                tail += cap
            idx = queue[tail]
        else:
            idx = queue[head]
            head += 1
            if head == cap:
                head = 0
        inqueue[idx] = 0
        m = mass[idx]
        if m <= thresh:
            continue
        pops += 1
        if pops > max_pops:
            return STATUS_CAP, pops
        alpha = m - 1.0
        mass[idx] = 1.0
        emitted[idx] += alpha
        share = alpha / share_div
        for j in range(twod):
            nb = idx + offs[j]
            mass[nb] += share
            if mass[nb] > thresh and not inqueue[nb]:
                if not interior[nb]:
                    return STATUS_OVERFLOW, pops
                inqueue[nb] = 1
                queue[tail] = nb
                tail += 1
                if tail == cap:
                    tail = 0
    return STATUS_OK, pops


@njit(cache=True, nogil=True)
def div_stabilize_perm(mass, emitted, interior, offs, order, eps_stop, max_passes):
    """Divisible relaxation sweeping a fixed site permutation repeatedly.

    Gauss-Seidel in the given order; used for the seeded-random toppling
    strategy of the abelian-property checks.  Returns (status, passes).
    """
    twod = offs.shape[0]
    thresh = 1.0 + eps_stop
    for ps in range(max_passes):
        toppled = np.int64(0)
        for k in range(order.shape[0]):
            idx = order[k]
            m = mass[idx]
            if m <= thresh:
                continue
            if not interior[idx]:
                return STATUS_OVERFLOW, np.int64(ps)
            toppled += 1
            alpha = m - 1.0
            mass[idx] = 1.0
            emitted[idx] += alpha
            share = alpha / float(twod)
            for j in range(twod):
                mass[idx + offs[j]] += share
        if toppled == 0:
            return STATUS_OK, np.int64(ps + 1)
    return STATUS_CAP, np.int64(max_passes)


@njit(cache=True, nogil=True)
def obstacle_majorant(s, obstacle, interior_mask, offs, tol, max_iters):
    """Least-superharmonic-majorant iteration (Jacobi with projection).

    s starts at any superharmonic function >= obstacle and decreases to
    the majorant under s <- max(obstacle, neighbor average); boundary
    entries (interior_mask == 0) stay fixed.  Returns (iterations, final
    sup-change); iterations == max_iters means no convergence.
    """
    twod = offs.shape[0]
    n = s.shape[0]
    work = s.copy()
    delta = 0.0
    for it in range(max_iters):
        delta = 0.0
        for i in range(n):
            if not interior_mask[i]:
                continue
            acc = 0.0
            for j in range(twod):
                acc += s[i + offs[j]]
            v = acc / twod
            o = obstacle[i]
            if v < o:
                v = o
            work[i] = v
        for i in range(n):
            if interior_mask[i]:
                ch = s[i] - work[i]
                if ch < 0.0:
                    ch = -ch
                if ch > delta:
                    delta = ch
                s[i] = work[i]
        if delta < tol:
            return np.int64(it + 1), delta
    return np.int64(max_iters), delta


@njit(cache=True, nogil=True)
def sand_stabilize_queue(count, topples, interior, offs, queue, inqueue,
                         hole, twod, multi, lifo, max_pops):
    """Classical-sandpile stabilization with hole depth via threshold shift.

    A site topples when its running count is >= 2d + hole; multi mode
    emits floor((count - hole)/2d) topplings at once.  Exact integer
    arithmetic throughout.  Returns (status, pops).
    """
    ncells = count.shape[0]
    cap = np.int64(ncells + 1)
    head = np.int64(0)
    tail = np.int64(0)
    for i in range(ncells):
        if inqueue[i]:
            queue[tail] = i
            tail += 1
    pops = np.int64(0)
    thresh = np.int64(twod + hole)
    while head != tail:
        if lifo:
            tail -= 1
            if tail < 0:
                tail += cap
            idx = queue[tail]
        else:
            idx = queue[head]
            head += 1
            if head == cap:
                head = 0
        inqueue[idx] = 0
        c = count[idx]
        if c < thresh:
            continue
        pops += 1
        if pops > max_pops:
            return STATUS_CAP, pops
        if multi:
            k = (c - hole) // twod
        else:
            k = np.int64(1)
        count[idx] = c - twod * k
        topples[idx] += k
        for j in range(offs.shape[0]):
            nb = idx + offs[j]
            count[nb] += k
            if count[nb] >= thresh and not inqueue[nb]:
                if not interior[nb]:
                    return STATUS_OVERFLOW, pops
                inqueue[nb] = 1
                queue[tail] = nb
                tail += 1
                if tail == cap:
                    tail = 0
        if count[idx] >= thresh and not inqueue[idx]:
            # single-topple mode can leave the site still over threshold
            inqueue[idx] = 1
            queue[tail] = idx
            tail += 1
            if tail == cap:
                tail = 0
    return STATUS_OK, pops
