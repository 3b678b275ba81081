"""Pure numpy implementation of the batched shadow-distance minimiser.

For each item we are given an orthogonal ``U = k^T k_q`` and the Cartan
projection ``m = mu(q)`` of the target ``q = k_q exp(m) l_q``, and minimise

    f(v) = d(k exp(v) o, q o)^2 = 1/4 sum log^2 eig(M),
    M = exp(-v) U exp(2 m) U^T exp(-v),

over the closed dominant cone.  The cone is parametrised as ``v = W c`` with
``c >= 0`` (``W`` has the coweights as columns) and ``f`` is minimised by a
projected Newton method with an Armijo search on the projection arc.
The Hessian of ``f`` in ``v`` dominates ``2 I``, so ``f`` is strongly convex
and the strong-convexity lower bound lets non-members exit early.

Small eigenvalues of ``M`` are read off ``M^{-1}``, which is available in
closed form, so the lower half of the spectrum keeps relative accuracy.
"""

from __future__ import annotations

import numpy as np

ARMIJO_SIGMA = 1e-4
ARMIJO_BETA = 0.5
MAX_BACKTRACK = 40
ACTIVE_EPS = 1e-3

STATUS_NONMEMBER = 0
STATUS_MEMBER = 1
STATUS_MAXITER = -1


def cone_basis(d: int) -> np.ndarray:
    i = np.arange(1, d)
    W = np.where(np.arange(d)[:, None] < i[None, :], (d - i) / d, -i / d)
    return W


def _spectrum(U, mu, v):
    """Eigen-data of M at ``v``: log-eigenvalues (desc) and eigenvectors.

    Works with the singular values of ``X = exp(-v) U exp(m)`` (``M = X X^T``)
    and of ``X^{-T}`` rather than with ``M`` itself, which would square the
    dynamic range.
    """
    d = U.shape[-1]
    E = mu[:, None, :] - v[:, :, None]
    X = U * np.exp(E)
    Xi = U * np.exp(-E)
    Q, sx, _ = np.linalg.svd(X)
    Qi, si, _ = np.linalg.svd(Xi)
    # j-th largest singular value of X is 1 / (j-th smallest of X^{-T}); take
    # each from whichever matrix holds it at the larger relative size
    Qi, si = Qi[:, :, ::-1], si[:, ::-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        lm = 2.0 * np.log(sx)
        li = -2.0 * np.log(si)
    top, bot = lm[:, :1], li[:, -1:]
    from_m = 2.0 * lm >= top + bot
    from_m[:, 0] = True
    from_m[:, -1] = d == 1
    loglam = np.where(from_m, lm, li)
    Qc = np.where(from_m[:, None, :], Q, Qi)
    return loglam, Qc


def _value(U, mu, v):
    loglam, _ = _spectrum(U, mu, v)
    return 0.25 * np.sum(loglam**2, axis=1)


def _kmatrix(loglam):
    la = loglam[:, :, None]
    lb = loglam[:, None, :]
    diff = la - lb
    # (x+1) log x / (x-1) with log x = diff, written stably
    with np.errstate(divide="ignore", invalid="ignore"):
        K = diff / np.tanh(diff / 2.0)
    K[np.abs(diff) < 1e-12] = 2.0
    return K


def _derivs(U, mu, v, W):
    loglam, Q = _spectrum(U, mu, v)
    f = 0.25 * np.sum(loglam**2, axis=1)
    gv = -np.einsum("nia,na,nia->ni", Q, loglam, Q)
    K = _kmatrix(loglam)
    P = Q[:, :, :, None] * Q[:, :, None, :]  # n, i, a, b
    Hv = np.einsum("niab,njab,nab->nij", P, P, K)
    gc = gv @ W
    Hc = np.einsum("ia,nij,jb->nab", W, Hv, W)
    return f, gc, Hc


def minimize_batch(U, mu, r2, early_stop=True, max_iter=100, tol=1e-10):
    """Minimise the squared shadow distance for a batch of (flag, target) pairs.

    Parameters
    ----------
    U : ndarray, shape (n, d, d)
        Relative frames ``k^T k_q``.
    mu : ndarray, shape (n, d)
        Cartan projections of the targets.
    r2 : float or ndarray
        Squared radius; only used for early exits when ``early_stop``.
    early_stop : bool
        Stop as soon as membership is decided.

    Returns
    -------
    f : ndarray (n,)
        Squared distance at the final iterate (an upper bound for the
        minimum), or the certified lower bound when a non-member exits early.
    status : ndarray of int8 (n,)
        1 member, 0 non-member, -1 iteration limit reached.
    c : ndarray (n, d-1)
        Simple-root coordinates of the final iterate.
    """
    U = np.ascontiguousarray(U, dtype=float)
    mu = np.ascontiguousarray(mu, dtype=float)
    n, d, _ = U.shape
    r2 = np.broadcast_to(np.asarray(r2, dtype=float), (n,)).copy()
    W = cone_basis(d)
    strong = 2.0 * np.linalg.eigvalsh(W.T @ W)[0]
    c = np.maximum(mu[:, :-1] - mu[:, 1:], 0.0)
    fout = np.full(n, np.nan)
    status = np.full(n, STATUS_MAXITER, dtype=np.int8)
    live = np.arange(n)
    eye = np.eye(d - 1)
    for _ in range(max_iter):
        if live.size == 0:
            break
        Ul, ml, cl = U[live], mu[live], c[live]
        f, g, H = _derivs(Ul, ml, cl @ W.T, W)
        pg = cl - np.maximum(cl - g, 0.0)
        pgn = np.linalg.norm(pg, axis=1)
        # strong-convexity lower bound on the cone
        step = -g / strong
        lb_terms = np.where(step >= -cl, -g * g / (2 * strong), -g * cl + 0.5 * strong * cl * cl)
        lower = f + lb_terms.sum(axis=1)
        done = pgn <= tol * np.maximum(1.0, f)
        if early_stop:
            mem = f <= r2[live]
            non = (lower > r2[live]) & ~mem
            fout[live[mem]] = f[mem]
            status[live[mem]] = STATUS_MEMBER
            fout[live[non]] = lower[non]
            status[live[non]] = STATUS_NONMEMBER
            fin = done & ~mem & ~non
            fout[live[fin]] = f[fin]
            status[live[fin]] = (f[fin] <= r2[live[fin]]).astype(np.int8)
            keep = ~(mem | non | done)
        else:
            fout[live[done]] = f[done]
            status[live[done]] = (f[done] <= r2[live[done]]).astype(np.int8)
            keep = ~done
        live, cl, f, g, H = live[keep], cl[keep], f[keep], g[keep], H[keep]
        if live.size == 0:
            break
        eps = np.minimum(ACTIVE_EPS, pgn[keep])[:, None]
        active = (cl <= eps) & (g > 0)
        Hr = np.where(active[:, :, None] | active[:, None, :], 0.0, H)
        diagH = np.einsum("nii->ni", H)
        Hr = Hr + np.where(active, diagH, 0.0)[:, :, None] * eye
        p = np.linalg.solve(Hr, g[:, :, None])[:, :, 0]
        alpha = np.ones(live.size)
        accepted = np.zeros(live.size, dtype=bool)
        cnew = cl.copy()
        fnew = f.copy()
        for _ in range(MAX_BACKTRACK):
            todo = ~accepted
            if not todo.any():
                break
            ct = np.maximum(cl[todo] - alpha[todo, None] * p[todo], 0.0)
            ft = _value(U[live[todo]], mu[live[todo]], ct @ W.T)
            act = active[todo]
            dec = np.where(act, g[todo] * (cl[todo] - ct), alpha[todo, None] * g[todo] * p[todo]).sum(axis=1)
            ok = ft <= f[todo] - ARMIJO_SIGMA * dec
            idx = np.flatnonzero(todo)
            cnew[idx[ok]] = ct[ok]
            fnew[idx[ok]] = ft[ok]
            accepted[idx[ok]] = True
            alpha[idx[~ok]] *= ARMIJO_BETA
        stalled = ~accepted | (f - fnew <= 1e-15 * np.maximum(1.0, f))
        c[live] = cnew
        if stalled.any():
            s = live[stalled]
            fout[s] = fnew[stalled]
            status[s] = (fnew[stalled] <= r2[s]).astype(np.int8)
            live = live[~stalled]
    if live.size:
        fout[live] = _value(U[live], mu[live], c[live] @ W.T)
    return fout, status, c


def value_batch(U, mu, V):
    """Objective ``f`` at points ``V`` (shape (n, d)) of a batch."""
    return _value(np.asarray(U, dtype=float), np.asarray(mu, dtype=float), np.asarray(V, dtype=float))
