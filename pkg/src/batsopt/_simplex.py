"""Dense bounded-variable two-phase revised simplex kernel.

Internal canonical form: minimize c @ x subject to A @ x = b and
lb <= x <= ub, where A already contains slack columns and one artificial
column per row that could not start feasible on its slack.  The driver
(`lp.solve`) builds that form, picks the starting basis, and certifies the
result; this module only pivots.

Implementation notes, chosen for the tolerance contract rather than speed:

* explicit basis inverse with product-form updates and periodic
  refactorization through ``np.linalg.inv`` (drift washed every
  ``refactor_every`` pivots and again before declaring optimality);
* Dantzig pricing, switching to Bland's rule after a long run of
  degenerate steps and back on the first strict improvement, so cycling
  terminates without paying Bland's slowness everywhere;
* a two-pass Harris-style ratio test: the first pass relaxes each bound by
  a fixed slack to find the largest safe step, the second picks the
  best-conditioned pivot among rows that block within it;
* bound flips handled without basis changes (variables may sit at either
  finite bound).

The whole loop is written in numba-compatible vectorized numpy so the same
source runs compiled or interpreted (see ``_accel``).
"""

from __future__ import annotations

import numpy as np

from ._accel import njit

# variable states
AT_LB = 0
AT_UB = 1
BASIC = 2
FREE_NB = 3

# kernel status codes
OK = 0
INFEASIBLE = 1
UNBOUNDED = 2
MAXITER = 3

_DEGEN_STEP = 1e-11
_BLAND_AFTER = 400
_BOUND_SLACK = 1e-9  # per-bound overshoot budget of the ratio test


@njit(cache=True)
def _refactorize(A, b, basis, vstat, x):
    m, N = A.shape
    B = np.empty((m, m))
    for k in range(m):
        B[:, k] = A[:, basis[k]]
    B_inv = np.linalg.inv(B)
    xn = x.copy()
    for k in range(m):
        xn[basis[k]] = 0.0
    r = b - A @ xn
    xb = B_inv @ r
    for k in range(m):
        x[basis[k]] = xb[k]
    # one refinement pass: near-degenerate vertices leave B ill-conditioned
    # enough that the straight inverse misses the feasibility tolerance
    r2 = b - A @ x
    dx = B_inv @ r2
    for k in range(m):
        x[basis[k]] += dx[k]
    return B_inv


@njit(cache=True)
def _choose_entering(d, vstat, span, tol, bland):
    can_inc = ((vstat == AT_LB) | (vstat == FREE_NB)) & (span > 0.0)
    can_dec = ((vstat == AT_UB) | (vstat == FREE_NB)) & (span > 0.0)
    if bland:
        elig = (can_inc & (d < -tol)) | (can_dec & (d > tol))
        nz = np.nonzero(elig)[0]
        if nz.shape[0] == 0:
            return -1, 0.0
        j = int(nz[0])
        sigma = 1.0 if (can_inc[j] and d[j] < -tol) else -1.0
        return j, sigma
    vi = np.where(can_inc, -d, 0.0)
    vd = np.where(can_dec, d, 0.0)
    ji = int(np.argmax(vi))
    jd = int(np.argmax(vd))
    if vi[ji] >= vd[jd]:
        if vi[ji] > tol:
            return ji, 1.0
        return -1, 0.0
    if vd[jd] > tol:
        return jd, -1.0
    return -1, 0.0


@njit(cache=True)
def _ratio_test(w, sigma, basis, x, lb, ub, piv_tol, bland):
    """Pick the leaving row for entering direction sigma * w.

    Returns (row, step, leaves_to_upper); row = -1 when nothing blocks.
    """
    m = w.shape[0]
    xb = x[basis]
    lbb = lb[basis]
    ubb = ub[basis]
    ws = sigma * w
    dec = ws > piv_tol
    inc = ws < -piv_tol
    lb_ok = dec & (lbb > -np.inf)
    ub_ok = inc & (ubb < np.inf)
    denom_dec = np.where(dec, ws, 1.0)
    denom_inc = np.where(inc, -ws, 1.0)
    # numerators deliberately unclamped: a basic value already past its bound
    # yields a negative ratio, forcing a zero step that snaps it back on exit
    num_dec = xb - lbb
    num_inc = ubb - xb
    t = np.full(m, np.inf)
    t = np.where(lb_ok, num_dec / denom_dec, t)
    t = np.where(ub_ok, num_inc / denom_inc, t)
    if bland:
        tmin = t.min()
        if tmin == np.inf:
            return -1, np.inf, False
        cand = np.nonzero(t <= tmin)[0]
        r = int(cand[0])
        bestb = basis[r]
        for k in range(1, cand.shape[0]):
            i = int(cand[k])
            if basis[i] < bestb:
                bestb = basis[i]
                r = i
        return r, max(t[r], 0.0), bool(inc[r])
    # pass 1: largest step allowed when every bound is relaxed by the budget
    t_rel = np.full(m, np.inf)
    t_rel = np.where(lb_ok, (num_dec + _BOUND_SLACK) / denom_dec, t_rel)
    t_rel = np.where(ub_ok, (num_inc + _BOUND_SLACK) / denom_inc, t_rel)
    t_allow = t_rel.min()
    if t_allow == np.inf:
        return -1, np.inf, False
    # pass 2: best pivot among rows blocking within the allowance
    cand_mask = t <= t_allow
    scores = np.where(cand_mask, np.abs(w), -1.0)
    r = int(np.argmax(scores))
    if scores[r] <= 0.0:
        # every exact ratio sits above the relaxed allowance (degenerate
        # crumbs); fall back to the plain minimum
        r = int(np.argmin(t))
        if t[r] == np.inf:
            return -1, np.inf, False
    return r, max(t[r], 0.0), bool(inc[r])


@njit(cache=True)
def _run_phase(A, b, c, lb, ub, basis, vstat, x, opt_tol, piv_tol, max_iter, refactor_every, stop_obj_at):
    """Iterate one simplex phase to optimality.

    ``stop_obj_at``: finish early once c @ x falls to this value or below
    (used by phase 1, whose objective is bounded below by zero);
    pass -inf to disable.
    Returns (status, iterations_used).
    """
    m, N = A.shape
    B_inv = _refactorize(A, b, basis, vstat, x)
    span = ub - lb
    iters = 0
    since_refactor = 0
    degen_run = 0
    bland = False
    final_checked = False
    while iters < max_iter:
        if stop_obj_at > -np.inf and c @ x <= stop_obj_at:
            return OK, iters
        cB = c[basis]
        y = cB @ B_inv
        d = c - y @ A
        j, sigma = _choose_entering(d, vstat, span, opt_tol, bland)
        if j < 0:
            if final_checked:
                return OK, iters
            # wash accumulated drift, then confirm optimality once more
            B_inv = _refactorize(A, b, basis, vstat, x)
            since_refactor = 0
            final_checked = True
            continue
        final_checked = False
        col = A[:, j].copy()
        w = B_inv @ col
        r, t_row, to_upper = _ratio_test(w, sigma, basis, x, lb, ub, piv_tol, bland)
        t_self = span[j]
        if r < 0 and not t_self < np.inf:
            return UNBOUNDED, iters
        iters += 1
        if t_self < t_row:
            # entering variable crosses to its other bound; no basis change
            t = t_self
            x[basis] -= (sigma * t) * w
            x[j] = ub[j] if sigma > 0.0 else lb[j]
            vstat[j] = AT_UB if sigma > 0.0 else AT_LB
        else:
            t = t_row
            x[basis] -= (sigma * t) * w
            x[j] = x[j] + sigma * t
            leaving = basis[r]
            x[leaving] = ub[leaving] if to_upper else lb[leaving]
            vstat[leaving] = AT_UB if to_upper else AT_LB
            basis[r] = j
            vstat[j] = BASIC
            piv = w[r]
            rowr = B_inv[r, :] / piv
            wc = w.copy()
            wc[r] = 0.0
            B_inv -= wc.reshape(m, 1) * rowr.reshape(1, m)
            B_inv[r, :] = rowr
            since_refactor += 1
            if since_refactor >= refactor_every:
                B_inv = _refactorize(A, b, basis, vstat, x)
                since_refactor = 0
        if t <= _DEGEN_STEP:
            degen_run += 1
            if degen_run > _BLAND_AFTER:
                bland = True
        else:
            degen_run = 0
            bland = False
    return MAXITER, iters


@njit(cache=True)
def simplex_solve(A, b, c, lb, ub, basis, vstat, x, n_real, opt_tol, piv_tol, feas_tol, max_iter, refactor_every):
    """Two-phase driver.  Returns (status, iterations, duals).

    ``n_real`` is the first artificial column; columns beyond it exist only
    to complete the starting basis and are locked to zero after phase 1.
    """
    m, N = A.shape
    iters_total = 0
    if n_real < N:
        art_sum = 0.0
        for j in range(n_real, N):
            art_sum += x[j]
        bscale = 1.0 + np.abs(b).max()
        if art_sum > 0.0:
            c1 = np.zeros(N)
            c1[n_real:] = 1.0
            st, it1 = _run_phase(
                A, b, c1, lb, ub, basis, vstat, x,
                opt_tol, piv_tol, max_iter, refactor_every, 1e-12 * bscale,
            )
            iters_total += it1
            if st == MAXITER:
                return MAXITER, iters_total, np.zeros(m)
            if st == UNBOUNDED:
                # impossible for a sum of nonnegatives; treat as failure
                return MAXITER, iters_total, np.zeros(m)
            art_sum = 0.0
            for j in range(n_real, N):
                art_sum += x[j]
            if art_sum > feas_tol * bscale:
                return INFEASIBLE, iters_total, np.zeros(m)
        # pin artificials at zero
        for j in range(n_real, N):
            lb[j] = 0.0
            ub[j] = 0.0
            if vstat[j] != BASIC:
                x[j] = 0.0
                vstat[j] = AT_LB
        # push basic artificials out where the row allows it
        B_inv = _refactorize(A, b, basis, vstat, x)
        for i in range(m):
            bi = basis[i]
            if bi >= n_real:
                row = B_inv[i, :].copy()
                alphas = row @ A
                elig = (vstat[:n_real] != BASIC) & ((ub[:n_real] - lb[:n_real]) > 0.0)
                scores = np.where(elig, np.abs(alphas[:n_real]), 0.0)
                jj = int(np.argmax(scores))
                if scores[jj] > 1e-7:
                    x[bi] = 0.0
                    vstat[bi] = AT_LB
                    basis[i] = jj
                    vstat[jj] = BASIC
                    col = A[:, jj].copy()
                    w = B_inv @ col
                    piv = w[i]
                    rowr = B_inv[i, :] / piv
                    wc = w.copy()
                    wc[i] = 0.0
                    B_inv -= wc.reshape(m, 1) * rowr.reshape(1, m)
                    B_inv[i, :] = rowr
                else:
                    # dependent row: the artificial floats at ~0 harmlessly
                    lb[bi] = -np.inf
                    ub[bi] = np.inf
    st, it2 = _run_phase(
        A, b, c, lb, ub, basis, vstat, x,
        opt_tol, piv_tol, max_iter - iters_total, refactor_every, -np.inf,
    )
    iters_total += it2
    if st != OK:
        return st, iters_total, np.zeros(m)
    B_inv = _refactorize(A, b, basis, vstat, x)
    cB = c[basis]
    y = cB @ B_inv
    B = np.empty((m, m))
    for k in range(m):
        B[:, k] = A[:, basis[k]]
    y = y + (cB - y @ B) @ B_inv  # refine the dual solve as well
    return OK, iters_total, y
