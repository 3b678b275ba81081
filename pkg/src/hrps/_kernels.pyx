# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled shadow-distance minimiser.

Same algorithm as ``_kernels_py.minimize_batch`` (projected Newton over the
dominant cone with an Armijo arc search), written per item with a cyclic
Jacobi eigensolver so that small dimensions avoid LAPACK call overhead.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs, sqrt, tanh, fmax, fmin

cnp.import_array()

cdef enum:
    MAXD = 8

cdef double ARMIJO_SIGMA = 1e-4
cdef double ARMIJO_BETA = 0.5
cdef int MAX_BACKTRACK = 40
cdef double ACTIVE_EPS = 1e-3


cdef void sort_desc(double* w, double* V, int n) noexcept nogil:
    cdef int i, j, k, best
    cdef double tmp
    for i in range(n):
        best = i
        for j in range(i + 1, n):
            if w[j] > w[best]:
                best = j
        if best != i:
            tmp = w[i]; w[i] = w[best]; w[best] = tmp
            for k in range(n):
                tmp = V[k * n + i]; V[k * n + i] = V[k * n + best]; V[k * n + best] = tmp


cdef void svd_rows(double* B, int n, double* sv, double* V) noexcept nogil:
    """One-sided Jacobi on the rows of B (destroyed).

    On return ``sv`` holds the singular values and the columns of V the left
    singular vectors of the input (eigenvectors of ``B B^T``).
    """
    cdef int i, j, p, q, sweep, rotated
    cdef double a, b, g, zeta, t, c, s, bp, bq, vp, vq
    for i in range(n):
        for j in range(n):
            V[i * n + j] = 1.0 if i == j else 0.0
    for sweep in range(60):
        rotated = 0
        for p in range(n - 1):
            for q in range(p + 1, n):
                a = 0.0
                b = 0.0
                g = 0.0
                for j in range(n):
                    a += B[p * n + j] * B[p * n + j]
                    b += B[q * n + j] * B[q * n + j]
                    g += B[p * n + j] * B[q * n + j]
                if g == 0.0 or fabs(g) <= 1e-16 * sqrt(a * b):
                    continue
                rotated = 1
                zeta = (b - a) / (2.0 * g)
                if zeta >= 0:
                    t = 1.0 / (zeta + sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + sqrt(1.0 + zeta * zeta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                for j in range(n):
                    bp = B[p * n + j]
                    bq = B[q * n + j]
                    B[p * n + j] = c * bp - s * bq
                    B[q * n + j] = s * bp + c * bq
                for i in range(n):
                    vp = V[i * n + p]
                    vq = V[i * n + q]
                    V[i * n + p] = c * vp - s * vq
                    V[i * n + q] = s * vp + c * vq
        if not rotated:
            break
    for i in range(n):
        a = 0.0
        for j in range(n):
            a += B[i * n + j] * B[i * n + j]
        sv[i] = sqrt(a)


cdef void spectrum(const double* U, const double* mu, const double* v, int d,
                   double* loglam, double* Q) noexcept nogil:
    """log-eigenvalues (descending) and eigenvectors of M at v.

    Uses singular values of ``X = exp(-v) U exp(mu)`` and of ``X^{-T}``;
    forming ``M`` would square the dynamic range.
    """
    cdef double X[MAXD * MAXD]
    cdef double Xi[MAXD * MAXD]
    cdef double w[MAXD]
    cdef double wi[MAXD]
    cdef double V[MAXD * MAXD]
    cdef double Vi[MAXD * MAXD]
    cdef int i, j
    cdef double e, top, bot, lm
    for i in range(d):
        for j in range(d):
            e = mu[j] - v[i]
            X[i * d + j] = U[i * d + j] * exp(e)
            Xi[i * d + j] = U[i * d + j] * exp(-e)
    svd_rows(X, d, w, V)
    svd_rows(Xi, d, wi, Vi)
    sort_desc(w, V, d)
    sort_desc(wi, Vi, d)
    # j-th largest singular value of X is 1 / (j-th smallest of X^{-T}); take
    # each from whichever matrix holds it at the larger relative size
    top = 2.0 * log(w[0])
    bot = -2.0 * log(wi[0])
    for j in range(d):
        lm = 2.0 * log(w[j])
        if j == 0 or (j < d - 1 and 2.0 * lm >= top + bot):
            loglam[j] = lm
            for i in range(d):
                Q[i * d + j] = V[i * d + j]
        else:
            loglam[j] = -2.0 * log(wi[d - 1 - j])
            for i in range(d):
                Q[i * d + j] = Vi[i * d + (d - 1 - j)]


cdef double value(const double* U, const double* mu, const double* v, int d) noexcept nogil:
    cdef double loglam[MAXD]
    cdef double Q[MAXD * MAXD]
    cdef int i
    cdef double f = 0.0
    spectrum(U, mu, v, d, loglam, Q)
    for i in range(d):
        f += loglam[i] * loglam[i]
    return 0.25 * f


cdef double derivs(const double* U, const double* mu, const double* v, int d,
                   const double* W, double* gc, double* Hc) noexcept nogil:
    cdef double loglam[MAXD]
    cdef double Q[MAXD * MAXD]
    cdef double gv[MAXD]
    cdef double Hv[MAXD * MAXD]
    cdef double K[MAXD * MAXD]
    cdef double T[MAXD * MAXD]
    cdef int i, j, a, b, m = d - 1
    cdef double f = 0.0, acc, diff
    spectrum(U, mu, v, d, loglam, Q)
    for i in range(d):
        f += loglam[i] * loglam[i]
    for a in range(d):
        for b in range(d):
            diff = loglam[a] - loglam[b]
            if fabs(diff) < 1e-12:
                K[a * d + b] = 2.0
            else:
                K[a * d + b] = diff / tanh(0.5 * diff)
    for i in range(d):
        acc = 0.0
        for a in range(d):
            acc += Q[i * d + a] * Q[i * d + a] * loglam[a]
        gv[i] = -acc
    for i in range(d):
        for j in range(i, d):
            acc = 0.0
            for a in range(d):
                for b in range(d):
                    acc += Q[i * d + a] * Q[i * d + b] * Q[j * d + a] * Q[j * d + b] * K[a * d + b]
            Hv[i * d + j] = acc
            Hv[j * d + i] = acc
    for a in range(m):
        acc = 0.0
        for i in range(d):
            acc += gv[i] * W[i * m + a]
        gc[a] = acc
    # T = Hv W, Hc = W^T T
    for i in range(d):
        for b in range(m):
            acc = 0.0
            for j in range(d):
                acc += Hv[i * d + j] * W[j * m + b]
            T[i * m + b] = acc
    for a in range(m):
        for b in range(m):
            acc = 0.0
            for i in range(d):
                acc += W[i * m + a] * T[i * m + b]
            Hc[a * m + b] = acc
    return 0.25 * f


cdef int solve_small(double* A, double* x, int n) noexcept nogil:
    """Gaussian elimination with partial pivoting; solution overwrites x."""
    cdef int i, j, k, piv
    cdef double tmp, factor
    for k in range(n):
        piv = k
        for i in range(k + 1, n):
            if fabs(A[i * n + k]) > fabs(A[piv * n + k]):
                piv = i
        if A[piv * n + k] == 0.0:
            return -1
        if piv != k:
            for j in range(n):
                tmp = A[k * n + j]; A[k * n + j] = A[piv * n + j]; A[piv * n + j] = tmp
            tmp = x[k]; x[k] = x[piv]; x[piv] = tmp
        for i in range(k + 1, n):
            factor = A[i * n + k] / A[k * n + k]
            for j in range(k, n):
                A[i * n + j] -= factor * A[k * n + j]
            x[i] -= factor * x[k]
    for k in range(n - 1, -1, -1):
        tmp = x[k]
        for j in range(k + 1, n):
            tmp -= A[k * n + j] * x[j]
        x[k] = tmp / A[k * n + k]
    return 0


cdef void to_v(const double* W, const double* c, double* v, int d) noexcept nogil:
    cdef int i, a, m = d - 1
    cdef double acc
    for i in range(d):
        acc = 0.0
        for a in range(m):
            acc += W[i * m + a] * c[a]
        v[i] = acc


cdef signed char run_one(const double* U, const double* mu, double r2, int early, int max_iter,
                         double tol, const double* W, double strong, int d,
                         double* c, double* fout) noexcept nogil:
    cdef int m = d - 1
    cdef double v[MAXD]
    cdef double g[MAXD]
    cdef double H[MAXD * MAXD]
    cdef double Hr[MAXD * MAXD]
    cdef double p[MAXD]
    cdef double ct[MAXD]
    cdef double cbest[MAXD]
    cdef int active[MAXD]
    cdef int it, a, b, bt, accepted
    cdef double f, ft, pgn, lower, step, eps, alpha, dec, t
    for a in range(m):
        c[a] = fmax(mu[a] - mu[a + 1], 0.0)
    for it in range(max_iter):
        to_v(W, c, v, d)
        f = derivs(U, mu, v, d, W, g, H)
        pgn = 0.0
        lower = f
        for a in range(m):
            t = c[a] - fmax(c[a] - g[a], 0.0)
            pgn += t * t
            step = -g[a] / strong
            if step >= -c[a]:
                lower += -g[a] * g[a] / (2.0 * strong)
            else:
                lower += -g[a] * c[a] + 0.5 * strong * c[a] * c[a]
        pgn = sqrt(pgn)
        if early:
            if f <= r2:
                fout[0] = f
                return 1
            if lower > r2:
                fout[0] = lower
                return 0
        if pgn <= tol * fmax(1.0, f):
            fout[0] = f
            return 1 if f <= r2 else 0
        eps = fmin(ACTIVE_EPS, pgn)
        for a in range(m):
            active[a] = 1 if (c[a] <= eps and g[a] > 0) else 0
        for a in range(m):
            p[a] = g[a]
            for b in range(m):
                if active[a] or active[b]:
                    Hr[a * m + b] = H[a * m + a] if a == b else 0.0
                else:
                    Hr[a * m + b] = H[a * m + b]
        if solve_small(Hr, p, m) != 0:
            for a in range(m):
                p[a] = g[a]
        alpha = 1.0
        accepted = 0
        for bt in range(MAX_BACKTRACK):
            dec = 0.0
            for a in range(m):
                ct[a] = fmax(c[a] - alpha * p[a], 0.0)
                if active[a]:
                    dec += g[a] * (c[a] - ct[a])
                else:
                    dec += alpha * g[a] * p[a]
            to_v(W, ct, v, d)
            ft = value(U, mu, v, d)
            if ft <= f - ARMIJO_SIGMA * dec:
                accepted = 1
                break
            alpha *= ARMIJO_BETA
        if not accepted or f - ft <= 1e-15 * fmax(1.0, f):
            if accepted:
                for a in range(m):
                    c[a] = ct[a]
                f = ft
            fout[0] = f
            return 1 if f <= r2 else 0
        for a in range(m):
            c[a] = ct[a]
    to_v(W, c, v, d)
    fout[0] = value(U, mu, v, d)
    return -1


def minimize_batch(U, mu, r2, early_stop=True, int max_iter=100, double tol=1e-10):
    """Compiled counterpart of :func:`hrps._kernels_py.minimize_batch`."""
    cdef cnp.ndarray[cnp.float64_t, ndim=3, mode="c"] Ua = np.ascontiguousarray(U, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] mua = np.ascontiguousarray(mu, dtype=np.float64)
    cdef Py_ssize_t n = Ua.shape[0]
    cdef int d = Ua.shape[1]
    if d > MAXD:
        raise ValueError(f"compiled kernel supports d <= {MAXD}")
    if d < 2:
        raise ValueError("need d >= 2")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] r2a = np.ascontiguousarray(
        np.broadcast_to(np.asarray(r2, dtype=np.float64), (n,)))
    cdef int m = d - 1
    idx = np.arange(1, d)
    Wnp = np.where(np.arange(d)[:, None] < idx[None, :], (d - idx) / d, -idx / d)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] Wa = np.ascontiguousarray(Wnp)
    cdef double strong = 2.0 * np.linalg.eigvalsh(Wnp.T @ Wnp)[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] fo = np.empty(n)
    cdef cnp.ndarray[cnp.int8_t, ndim=1] st = np.empty(n, dtype=np.int8)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] co = np.empty((n, m))
    cdef int early = 1 if early_stop else 0
    cdef Py_ssize_t k
    cdef double* Wp = &Wa[0, 0]
    cdef double fval
    with nogil:
        for k in range(n):
            st[k] = run_one(&Ua[k, 0, 0], &mua[k, 0], r2a[k], early, max_iter, tol, Wp, strong, d,
                            &co[k, 0], &fval)
            fo[k] = fval
    return fo, st, co


def value_batch(U, mu, V):
    """Objective ``f`` at points ``V`` (shape (n, d)) of a batch."""
    cdef cnp.ndarray[cnp.float64_t, ndim=3, mode="c"] Ua = np.ascontiguousarray(U, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] mua = np.ascontiguousarray(mu, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] Va = np.ascontiguousarray(V, dtype=np.float64)
    cdef Py_ssize_t n = Ua.shape[0]
    cdef int d = Ua.shape[1]
    if d > MAXD:
        raise ValueError(f"compiled kernel supports d <= {MAXD}")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] fo = np.empty(n)
    cdef Py_ssize_t k
    with nogil:
        for k in range(n):
            fo[k] = value(&Ua[k, 0, 0], &mua[k, 0], &Va[k, 0], d)
    return fo
