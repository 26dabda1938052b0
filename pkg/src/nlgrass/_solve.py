"""Vectorised Newton iterations shared by projection and inversion code."""

from __future__ import annotations

import numpy as np


def _solve_small(mat, rhs):
    # batched k x k solve; k is 1 or 2
    if mat.shape[-1] == 1:
        return rhs / mat[..., 0]
    return np.linalg.solve(mat, rhs[..., None])[..., 0]


def newton_solve(residual_jac, x0, clamp=None, tol=1e-14, max_iter=60):
    """Solve residual(x) = 0 row-wise.

    ``residual_jac(x, rows)`` returns (r, J) for the rows ``rows`` of the
    problem, with r of shape (q, k) and J of shape (q, k, k).  Steps are halved while they increase |r|.
    """
    x = np.array(x0, float)
    r, jac = residual_jac(x, np.arange(len(x)))
    norm = np.linalg.norm(r, axis=1)
    active = np.ones(len(x), bool)
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        with np.errstate(all="ignore"):
            step = -_solve_small(jac[idx], r[idx])
        step = np.where(np.isfinite(step), step, 0.0)
        scale = np.ones(len(idx))
        accepted = np.zeros(len(idx), bool)
        x_new = x[idx].copy()
        r_new = r[idx].copy()
        j_new = jac[idx].copy()
        n_new = norm[idx].copy()
        for _ in range(12):
            pending = ~accepted
            if not pending.any():
                break
            cand = x[idx][pending] + scale[pending, None] * step[pending]
            if clamp is not None:
                cand = clamp(cand)
            rc, jc = residual_jac(cand, idx[pending])
            nc = np.linalg.norm(rc, axis=1)
            ok = nc <= norm[idx][pending] * (1 + 1e-12) + 1e-300
            sel = np.flatnonzero(pending)
            good = sel[ok]
            x_new[good], r_new[good], j_new[good], n_new[good] = cand[ok], rc[ok], jc[ok], nc[ok]
            accepted[good] = True
            scale[sel[~ok]] *= 0.5
        moved = np.linalg.norm(x_new - x[idx], axis=1)
        x[idx], r[idx], jac[idx], norm[idx] = x_new, r_new, j_new, n_new
        done = (moved <= tol * (1 + np.linalg.norm(x[idx], axis=1))) | (n_new == 0) | ~accepted
        active[idx[done]] = False
    return x


def newton_project(evaluate, jacobian, hessian, points, seeds, clamp=None, tol=1e-14, max_iter=80):
    """Closest-point parameters of ``points`` on a parametrised image.

    Minimises |f(p) - x|^2 by Newton steps on the gradient J^T (f - x), using
    the full Hessian where it is positive definite and Gauss-Newton otherwise.
    """
    points = np.asarray(points, float)
    p = np.array(seeds, float)
    k = p.shape[1]

    def energy(params, idx):
        return 0.5 * np.sum((evaluate(params) - points[idx]) ** 2, axis=1)

    all_idx = np.arange(len(p))
    e = energy(p, all_idx)
    active = np.ones(len(p), bool)
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        pa = p[idx]
        res = evaluate(pa) - points[idx]
        jac = jacobian(pa)
        grad = np.einsum("qmk,qm->qk", jac, res)
        gn = np.einsum("qmk,qml->qkl", jac, jac)
        full = gn + np.einsum("qm,qmkl->qkl", res, hessian(pa))
        if k == 1:
            pd = full[:, 0, 0] > 1e-3 * gn[:, 0, 0]
        else:
            det = full[:, 0, 0] * full[:, 1, 1] - full[:, 0, 1] * full[:, 1, 0]
            pd = (full[:, 0, 0] > 0) & (det > 1e-6 * np.linalg.det(gn))
        mat = np.where(pd[:, None, None], full, gn)
        with np.errstate(all="ignore"):
            step = -_solve_small(mat, grad)
        step = np.where(np.isfinite(step), step, 0.0)
        scale = np.ones(len(idx))
        accepted = np.zeros(len(idx), bool)
        p_new = pa.copy()
        e_new = e[idx].copy()
        for _ in range(20):
            pending = ~accepted
            if not pending.any():
                break
            cand = pa[pending] + scale[pending, None] * step[pending]
            if clamp is not None:
                cand = clamp(cand)
            ec = energy(cand, idx[pending])
            ok = ec <= e[idx][pending] + 1e-15 * (1 + e[idx][pending])
            sel = np.flatnonzero(pending)
            p_new[sel[ok]] = cand[ok]
            e_new[sel[ok]] = ec[ok]
            accepted[sel[ok]] = True
            scale[sel[~ok]] *= 0.5
        moved = np.linalg.norm(p_new - pa, axis=1)
        p[idx], e[idx] = p_new, e_new
        done = (moved <= tol * (1 + np.linalg.norm(pa, axis=1))) | ~accepted
        active[idx[done]] = False
    return p
