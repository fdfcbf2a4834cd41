# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled subset-DP kernel.

Twin of _kernels_py.solve: the same enumeration order, the same pinned
floating-point operand order, the same tie-breaking. Either backend must
produce bitwise-identical KernelResult tables; the equivalence suite holds
them to exact equality.
"""

from libc.math cimport ceil
from libc.stdlib cimport free, malloc

from .problem import KernelResult

cdef extern from *:
    int __builtin_ctzll(unsigned long long) nogil

cdef double INF = float("inf")


cdef inline int _ctz(long long x) nogil:
    return __builtin_ctzll(<unsigned long long>x)


cdef inline double _cross_sel(
    int m, const int* eu, const int* ev, const double* es,
    long long a, long long b,
) nogil:
    cdef double s = 1.0
    cdef int k
    cdef long long ub, vb
    for k in range(m):
        ub = (<long long>1) << eu[k]
        vb = (<long long>1) << ev[k]
        if ((ub & a) != 0 and (vb & b) != 0) or ((ub & b) != 0 and (vb & a) != 0):
            s *= es[k]
    return s


cdef inline double _inc_cost(
    int kind, double lam, double mem,
    double ra, double rb, double ro, double sel, int op, bint reuse,
) nogil:
    cdef double match_per_probe, pair_sum, smaller, refund
    if op == 1:  # index probe
        match_per_probe = (lam * rb) * sel
        return match_per_probe * ra
    if kind == 1:  # memory-aware hash join
        pair_sum = ra + rb
        if pair_sum <= mem:
            return ro
        smaller = ra if ra < rb else rb
        if smaller <= mem * mem:
            return (2.0 * pair_sum) + ro
        return rb + (ceil(rb / mem) * ra)
    if kind == 2 and reuse:  # reuse-aware: refund the build side
        refund = ro - rb
        return refund if refund > 0.0 else 0.0
    return ro


cdef inline bint _reuse_possible(
    int m, const int* eu, const int* ev, const int* eau, const int* eav,
    const int* offsets, const unsigned long long* attr_masks,
    long long a, long long b,
) nogil:
    cdef int k, j, attr
    cdef long long ub, vb, pm
    if (b & (b - 1)) == 0:
        return False
    for k in range(m):
        ub = (<long long>1) << eu[k]
        vb = (<long long>1) << ev[k]
        if (ub & a) != 0 and (vb & b) != 0:
            attr = eav[k]
        elif (vb & a) != 0 and (ub & b) != 0:
            attr = eau[k]
        else:
            continue
        if attr < 0:
            continue
        for j in range(offsets[attr], offsets[attr + 1]):
            pm = <long long>attr_masks[j]
            if (pm & ~b) == 0:
                return True
    return False


cdef inline bint _left_key_less(long long a, long long b) nogil:
    cdef long long d = a ^ b
    cdef long long low, above
    if d == 0:
        return False
    low = d & (-d)
    above = ~(low - 1) & ~low
    if (a & low) != 0:
        return (b & above) != 0
    return (a & above) == 0


def solve(p, int shape=0, bint allow_cartesian=False):
    """Optimal plan table over every subset, within the given shape class."""
    cdef int n = len(p.names)
    cdef long long size = (<long long>1) << n
    cdef long long full = size - 1

    cdef double[::1] base = p.base_rows
    cdef int[::1] eu_v = p.edge_u
    cdef int[::1] ev_v = p.edge_v
    cdef double[::1] es_v = p.edge_sel
    cdef int[::1] eau_v = p.edge_au
    cdef int[::1] eav_v = p.edge_av
    cdef unsigned long long[::1] adj_v = p.adj_mask
    cdef unsigned long long[::1] idx_v = p.idx_partner_mask
    cdef int[::1] off_v = p.attr_offsets
    cdef unsigned long long[::1] am_v = p.attr_masks

    cdef int m = eu_v.shape[0]
    cdef const int* eu = &eu_v[0] if m else NULL
    cdef const int* ev = &ev_v[0] if m else NULL
    cdef const double* es = &es_v[0] if m else NULL
    cdef const int* eau = &eau_v[0] if m else NULL
    cdef const int* eav = &eav_v[0] if m else NULL
    cdef const int* offsets = &off_v[0]
    cdef const unsigned long long* attr_masks = (
        &am_v[0] if am_v.shape[0] else NULL
    )

    cdef int kind = p.kind_id
    cdef double lam = p.lam
    cdef double mem = p.mem
    cdef bint has_index = kind == 0 or kind == 2  # CM1, CM3
    cdef bint reuse_on = kind == 2  # CM3

    cdef double* rows = <double*>malloc(size * sizeof(double))
    cdef double* best = <double*>malloc(size * sizeof(double))
    cdef long long* best_left = <long long*>malloc(size * sizeof(long long))
    cdef int* best_op = <int*>malloc(size * sizeof(int))
    cdef char* best_reuse = <char*>malloc(size * sizeof(char))
    cdef char* conn = <char*>malloc(size * sizeof(char))
    if (rows == NULL or best == NULL or best_left == NULL
            or best_op == NULL or best_reuse == NULL or conn == NULL):
        free(rows); free(best); free(best_left)
        free(best_op); free(best_reuse); free(conn)
        raise MemoryError()

    cdef long long mask, sub, a, b, low, rest, reach, frontier, nxt, bl
    cdef long long adj_i, idx_i
    cdef int i, k, r, bidx, bo
    cdef double acc, ra, rb, ro, sel, part, inc, cand, bc
    cdef bint ok, reuse
    cdef char br
    cdef long long evals = 0

    with nogil:
        # canonical rows: peel the lowest bit, crossing edges in array order
        for mask in range(size):
            rows[mask] = 0.0
        for i in range(n):
            rows[(<long long>1) << i] = base[i]
        for mask in range(3, size):
            low = mask & (-mask)
            rest = mask ^ low
            if rest == 0:
                continue
            r = _ctz(low)
            acc = base[r] * rows[rest]
            for k in range(m):
                if (eu[k] == r and (((<long long>1) << ev[k]) & rest) != 0) or (
                    ev[k] == r and (((<long long>1) << eu[k]) & rest) != 0
                ):
                    acc *= es[k]
            rows[mask] = acc

        # connectivity over the problem's adjacency masks
        for mask in range(size):
            conn[mask] = 0
        for i in range(n):
            conn[(<long long>1) << i] = 1
        for mask in range(3, size):
            if (mask & (mask - 1)) == 0:
                continue
            reach = mask & (-mask)
            frontier = reach
            while frontier != 0:
                nxt = 0
                while frontier != 0:
                    low = frontier & (-frontier)
                    frontier ^= low
                    adj_i = <long long>adj_v[_ctz(low)]
                    nxt |= adj_i
                frontier = nxt & mask & ~reach
                reach |= frontier
            conn[mask] = 1 if reach == mask else 0

        # subset DP
        for mask in range(size):
            best[mask] = INF
            best_left[mask] = 0
            best_op[mask] = -1
            best_reuse[mask] = 0
        for i in range(n):
            best[(<long long>1) << i] = 0.0

        for mask in range(3, size):
            if (mask & (mask - 1)) == 0:
                continue
            if not allow_cartesian and conn[mask] == 0:
                continue
            bc = INF
            bl = 0
            bo = -1
            br = 0
            ro = rows[mask]
            sub = (mask - 1) & mask
            while sub != 0:
                a = sub
                b = mask ^ sub
                if shape == 1:  # left-deep
                    ok = (b & (b - 1)) == 0
                elif shape == 2:  # right-deep
                    ok = (a & (a - 1)) == 0
                elif shape == 3:  # zig-zag
                    ok = ((a & (a - 1)) == 0) or ((b & (b - 1)) == 0)
                else:
                    ok = True
                if ok and best[a] < INF and best[b] < INF:
                    ra = rows[a]
                    rb = rows[b]
                    sel = _cross_sel(m, eu, ev, es, a, b)
                    part = best[a] + best[b]

                    reuse = (
                        reuse_on
                        and (b & (b - 1)) != 0
                        and _reuse_possible(
                            m, eu, ev, eau, eav, offsets, attr_masks, a, b
                        )
                    )
                    inc = _inc_cost(kind, lam, mem, ra, rb, ro, sel, 0, reuse)
                    evals += 1
                    cand = part + inc
                    if cand < bc or (
                        cand == bc
                        and (_left_key_less(a, bl) or (a == bl and 0 < bo))
                    ):
                        bc = cand
                        bl = a
                        bo = 0
                        br = 1 if reuse else 0

                    if has_index and (b & (b - 1)) == 0:
                        bidx = _ctz(b)
                        idx_i = <long long>idx_v[bidx]
                        if (idx_i & a) != 0:
                            inc = _inc_cost(
                                kind, lam, mem, ra, rb, ro, sel, 1, False
                            )
                            evals += 1
                            cand = part + inc
                            if cand < bc or (
                                cand == bc
                                and (
                                    _left_key_less(a, bl)
                                    or (a == bl and 1 < bo)
                                )
                            ):
                                bc = cand
                                bl = a
                                bo = 1
                                br = 0
                sub = (sub - 1) & mask
            best[mask] = bc
            best_left[mask] = bl
            best_op[mask] = bo
            best_reuse[mask] = br

    out_cost = [0.0] * size
    out_left = [0] * size
    out_op = [0] * size
    out_reuse = [0] * size
    out_rows = [0.0] * size
    out_conn = [False] * size
    for mask in range(size):
        out_cost[mask] = best[mask]
        out_left[mask] = best_left[mask]
        out_op[mask] = best_op[mask]
        out_reuse[mask] = best_reuse[mask]
        out_rows[mask] = rows[mask]
        out_conn[mask] = conn[mask] != 0
    free(rows)
    free(best)
    free(best_left)
    free(best_op)
    free(best_reuse)
    free(conn)

    return KernelResult(
        best_cost=out_cost,
        best_left=out_left,
        best_op=out_op,
        best_reuse=out_reuse,
        rows=out_rows,
        evals=evals,
        connected=out_conn,
    )
