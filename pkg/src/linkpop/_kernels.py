"""Inner sampling loops, JIT-compiled when numba is importable.

Both kernels consume pre-generated uniforms so that runs are reproducible
for a fixed seed regardless of batching.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True)
def mu_sweep(cells, resid, lik, uniforms):
    """One full-conditional sweep over the units of one file.

    cells   : per-unit index into the occupied-cell arrays (updated in place)
    resid   : population count minus this file's usage per occupied cell
    lik     : (n, m) observation likelihood of each unit at each occupied cell
    uniforms: one uniform variate per unit

    Returns 0 on success, -1 when some unit has no admissible cell.
    """
    n = cells.shape[0]
    m = resid.shape[0]
    for s in range(n):
        c = cells[s]
        resid[c] += 1
        tot = 0.0
        for j in range(m):
            tot += resid[j] * lik[s, j]
        if tot <= 0.0:
            resid[c] -= 1
            return -1
        u = uniforms[s] * tot
        acc = 0.0
        new = m - 1
        for j in range(m):
            acc += resid[j] * lik[s, j]
            if acc > u:
                new = j
                break
        resid[new] -= 1
        cells[s] = new
    return 0


@njit(cache=True)
def matching_moves(
    row_match,
    col_match,
    pattern_ids,
    bits,
    loglam_pat,
    g_of_t,
    t_current,
    match_bit_sums,
    uniforms,
):
    """Metropolis moves on a one-to-one matching: add / delete / swap a pair.

    row_match, col_match: current partner (0-based) or -1, updated in place
    pattern_ids         : (nA, nB) comparison-pattern index per pair
    bits                : (P, h) 0/1 field agreements per pattern
    loglam_pat          : per-pattern log likelihood ratio (match vs nonmatch)
    g_of_t              : log prior mass of any single matching with T pairs
    match_bit_sums      : per-field agreement totals over matched pairs,
                          updated in place
    uniforms            : (n_moves, 5) uniform variates

    Move mix: add 40%, delete 40%, swap 20%; unavailable moves leave the
    state unchanged. Returns the new matched-pair count.
    """
    n_a = row_match.shape[0]
    n_b = col_match.shape[0]
    h = bits.shape[1]
    T = t_current
    n_moves = uniforms.shape[0]
    for mv in range(n_moves):
        u_move = uniforms[mv, 0]
        if u_move < 0.4:
            # add a pair among free rows x free columns
            R = n_a - T
            Bf = n_b - T
            if R == 0 or Bf == 0:
                continue
            ra = int(uniforms[mv, 1] * R)
            if ra >= R:
                ra = R - 1
            rb = int(uniforms[mv, 2] * Bf)
            if rb >= Bf:
                rb = Bf - 1
            a = -1
            cnt = -1
            for i in range(n_a):
                if row_match[i] < 0:
                    cnt += 1
                    if cnt == ra:
                        a = i
                        break
            b = -1
            cnt = -1
            for j in range(n_b):
                if col_match[j] < 0:
                    cnt += 1
                    if cnt == rb:
                        b = j
                        break
            log_alpha = (
                loglam_pat[pattern_ids[a, b]]
                + g_of_t[T + 1]
                - g_of_t[T]
                + np.log(R * Bf / (T + 1.0))
            )
            if np.log(uniforms[mv, 4]) < log_alpha:
                row_match[a] = b
                col_match[b] = a
                pid = pattern_ids[a, b]
                for i in range(h):
                    match_bit_sums[i] += bits[pid, i]
                T += 1
        elif u_move < 0.8:
            # delete an existing pair
            if T == 0:
                continue
            rp = int(uniforms[mv, 1] * T)
            if rp >= T:
                rp = T - 1
            a = -1
            cnt = -1
            for i in range(n_a):
                if row_match[i] >= 0:
                    cnt += 1
                    if cnt == rp:
                        a = i
                        break
            b = row_match[a]
            R = n_a - T
            Bf = n_b - T
            log_alpha = (
                -loglam_pat[pattern_ids[a, b]]
                + g_of_t[T - 1]
                - g_of_t[T]
                + np.log(T / ((R + 1.0) * (Bf + 1.0)))
            )
            if np.log(uniforms[mv, 4]) < log_alpha:
                row_match[a] = -1
                col_match[b] = -1
                pid = pattern_ids[a, b]
                for i in range(h):
                    match_bit_sums[i] -= bits[pid, i]
                T -= 1
        else:
            # re-match one side of an existing pair to a free partner
            if T == 0:
                continue
            rp = int(uniforms[mv, 1] * T)
            if rp >= T:
                rp = T - 1
            a = -1
            cnt = -1
            for i in range(n_a):
                if row_match[i] >= 0:
                    cnt += 1
                    if cnt == rp:
                        a = i
                        break
            b = row_match[a]
            if uniforms[mv, 2] < 0.5:
                # move the row to a new free column
                Bf = n_b - T
                if Bf == 0:
                    continue
                rb = int(uniforms[mv, 3] * Bf)
                if rb >= Bf:
                    rb = Bf - 1
                b2 = -1
                cnt = -1
                for j in range(n_b):
                    if col_match[j] < 0:
                        cnt += 1
                        if cnt == rb:
                            b2 = j
                            break
                log_alpha = (
                    loglam_pat[pattern_ids[a, b2]] - loglam_pat[pattern_ids[a, b]]
                )
                if np.log(uniforms[mv, 4]) < log_alpha:
                    row_match[a] = b2
                    col_match[b] = -1
                    col_match[b2] = a
                    pid_old = pattern_ids[a, b]
                    pid_new = pattern_ids[a, b2]
                    for i in range(h):
                        match_bit_sums[i] += bits[pid_new, i] - bits[pid_old, i]
            else:
                # move the column to a new free row
                R = n_a - T
                if R == 0:
                    continue
                ra = int(uniforms[mv, 3] * R)
                if ra >= R:
                    ra = R - 1
                a2 = -1
                cnt = -1
                for i in range(n_a):
                    if row_match[i] < 0:
                        cnt += 1
                        if cnt == ra:
                            a2 = i
                            break
                log_alpha = (
                    loglam_pat[pattern_ids[a2, b]] - loglam_pat[pattern_ids[a, b]]
                )
                if np.log(uniforms[mv, 4]) < log_alpha:
                    row_match[a] = -1
                    row_match[a2] = b
                    col_match[b] = a2
                    pid_old = pattern_ids[a, b]
                    pid_new = pattern_ids[a2, b]
                    for i in range(h):
                        match_bit_sums[i] += bits[pid_new, i] - bits[pid_old, i]
    return T
