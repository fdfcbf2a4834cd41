"""Pure-Python subset-DP kernel.

Twin of the compiled kernel in _kernels.pyx: same arrays, same enumeration
order, same pinned floating-point arithmetic (via the mirrors in problem),
same tie-breaking. Either backend must produce bitwise-identical results.
"""

from __future__ import annotations

from .problem import (
    OP_HASH,
    OP_INDEX,
    KernelResult,
    Problem,
    SHAPE_EX,
    SHAPE_LD,
    SHAPE_RD,
    SHAPE_ZZ,
    connectivity,
    cross_selectivity,
    inc_cost,
    left_key_less,
    reuse_possible,
    subset_rows,
)

INF = float("inf")


def solve(p: Problem, shape: int = SHAPE_EX, allow_cartesian: bool = False) -> KernelResult:
    """Optimal plan table over every subset, within the given shape class.

    best_cost[mask] is the cheapest cumulative cost of joining exactly the
    relations in mask; best_left/best_op/best_reuse record the winning
    split for reconstruction. Ties break on (cost, left child's canonical
    relation key, operator rank).
    """
    n = p.n
    size = 1 << n
    rows = subset_rows(p)
    conn = connectivity(p)
    best = [INF] * size
    best_left = [0] * size
    best_op = [-1] * size
    best_reuse = [0] * size
    for i in range(n):
        best[1 << i] = 0.0
    evals = 0
    idx_partner = [int(x) for x in p.idx_partner_mask]
    has_index = p.has_index_op
    reuse_on = p.reuse_enabled

    for mask in range(3, size):
        if mask & (mask - 1) == 0:
            continue
        if not allow_cartesian and not conn[mask]:
            continue
        bc = INF
        bl = 0
        bo = -1
        br = 0
        ro = rows[mask]
        sub = (mask - 1) & mask
        while sub:
            a = sub
            b = mask ^ sub
            if shape == SHAPE_LD:
                ok = (b & (b - 1)) == 0
            elif shape == SHAPE_RD:
                ok = (a & (a - 1)) == 0
            elif shape == SHAPE_ZZ:
                ok = ((a & (a - 1)) == 0) or ((b & (b - 1)) == 0)
            else:
                ok = True
            if ok and best[a] < INF and best[b] < INF:
                ra = rows[a]
                rb = rows[b]
                sel = cross_selectivity(p, a, b)
                part_cost = best[a] + best[b]

                reuse = (
                    reuse_on
                    and (b & (b - 1)) != 0
                    and reuse_possible(p, a, b)
                )
                inc = inc_cost(p, ra, rb, ro, sel, OP_HASH, reuse)
                evals += 1
                cand = part_cost + inc
                if cand < bc or (
                    cand == bc
                    and (left_key_less(a, bl) or (a == bl and OP_HASH < bo))
                ):
                    bc = cand
                    bl = a
                    bo = OP_HASH
                    br = 1 if reuse else 0

                if has_index and (b & (b - 1)) == 0:
                    bidx = b.bit_length() - 1
                    if idx_partner[bidx] & a:
                        inc = inc_cost(p, ra, rb, ro, sel, OP_INDEX, False)
                        evals += 1
                        cand = part_cost + inc
                        if cand < bc or (
                            cand == bc
                            and (
                                left_key_less(a, bl)
                                or (a == bl and OP_INDEX < bo)
                            )
                        ):
                            bc = cand
                            bl = a
                            bo = OP_INDEX
                            br = 0
            sub = (sub - 1) & mask
        best[mask] = bc
        best_left[mask] = bl
        best_op[mask] = bo
        best_reuse[mask] = br

    return KernelResult(
        best_cost=best,
        best_left=best_left,
        best_op=best_op,
        best_reuse=best_reuse,
        rows=rows,
        evals=evals,
        connected=conn,
    )
