"""Dense bounded-variable primal simplex for small linear programs.

Solves ``max c.x  s.t.  A x <= b,  0 <= x <= u`` with ``b >= 0`` so the slack
basis is feasible from the start. Upper bounds are handled implicitly by
bound flipping rather than as extra rows. Pricing is Dantzig's rule, switched
to Bland's rule while pivots are degenerate, which rules out cycling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LPIterationLimit(RuntimeError):
    pass


class LPUnbounded(RuntimeError):
    pass


@dataclass
class LPResult:
    x: np.ndarray
    objective: float
    iterations: int


def simplex_max(c, A, b, upper=None, tol=1e-11, max_iter=None):
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if np.any(b < 0):
        raise ValueError("simplex_max needs b >= 0 (slack basis must be feasible)")
    ub = np.full(n + m, np.inf)
    if upper is not None:
        ub[:n] = np.asarray(upper, dtype=float)
    if np.any(ub < 0):
        raise ValueError("upper bounds must be non-negative")
    if max_iter is None:
        max_iter = 50 * (n + m) + 1000

    tab = np.hstack([A, np.eye(m)])
    cost = np.concatenate([c, np.zeros(m)])
    basis = np.arange(n, n + m)
    xb = b.copy()
    at_upper = np.zeros(n + m, dtype=bool)
    # reduced costs d_j = c_j - c_B B^-1 a_j; slack basis has c_B = 0
    d = cost.copy()
    is_basic = np.zeros(n + m, dtype=bool)
    is_basic[basis] = True
    bland = False

    for it in range(max_iter):
        gain = np.where(at_upper, -d, d)
        gain[is_basic] = 0.0
        eligible = np.flatnonzero(gain > tol)
        if eligible.size == 0:
            break
        j = eligible[0] if bland else eligible[np.argmax(gain[eligible])]
        direction = -1.0 if at_upper[j] else 1.0
        col = tab[:, j] * direction

        # step limits from basic variables hitting a bound
        step = ub[j]
        leave, leave_to_upper = -1, False
        pos = col > tol
        if np.any(pos):
            ratios = np.full(m, np.inf)
            ratios[pos] = xb[pos] / col[pos]
            r = _argmin_bland(ratios, basis) if bland else int(np.argmin(ratios))
            if ratios[r] < step:
                step, leave, leave_to_upper = ratios[r], r, False
        neg = col < -tol
        if np.any(neg):
            ubb = ub[basis]
            ratios = np.full(m, np.inf)
            sel = neg & np.isfinite(ubb)
            ratios[sel] = (ubb[sel] - xb[sel]) / -col[sel]
            r = _argmin_bland(ratios, basis) if bland else int(np.argmin(ratios))
            if ratios[r] < step:
                step, leave, leave_to_upper = ratios[r], r, True
        if not np.isfinite(step):
            raise LPUnbounded("linear program is unbounded")
        step = max(step, 0.0)
        bland = step <= tol

        xb -= step * col
        if leave < 0:
            at_upper[j] = not at_upper[j]
            continue

        entering_value = (ub[j] if at_upper[j] else 0.0) + direction * step
        out = basis[leave]
        piv = tab[leave, j]
        tab[leave] /= piv
        others = np.arange(m) != leave
        tab[others] -= np.outer(tab[others, j], tab[leave])
        d -= d[j] * tab[leave]
        basis[leave] = j
        is_basic[j], is_basic[out] = True, False
        at_upper[j] = False
        at_upper[out] = leave_to_upper
        xb[leave] = entering_value
    else:
        raise LPIterationLimit(f"simplex did not converge in {max_iter} iterations")

    x_full = np.where(at_upper, ub, 0.0)
    x_full[~np.isfinite(x_full)] = 0.0
    # recompute basic values from the original columns to shed pivot round-off
    full = np.hstack([A, np.eye(m)])
    rhs = b - full[:, ~is_basic] @ x_full[~is_basic]
    try:
        x_full[basis] = np.linalg.solve(full[:, basis], rhs)
    except np.linalg.LinAlgError:
        x_full[basis] = xb
    x = x_full[:n]
    return LPResult(x=x, objective=float(c @ x), iterations=it)


def _argmin_bland(ratios, basis):
    best = np.min(ratios)
    ties = np.flatnonzero(ratios <= best + 1e-14 * max(1.0, abs(best)))
    return int(ties[np.argmin(basis[ties])])
