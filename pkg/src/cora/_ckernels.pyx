# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sampling kernels; same contracts as ``cora._pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport log, INFINITY

cnp.import_array()


cdef inline Py_ssize_t _draw(const double* w, Py_ssize_t K, double u) noexcept nogil:
    cdef double total = 0.0, cum = 0.0, target
    cdef Py_ssize_t k, last = 0
    for k in range(K):
        total += w[k]
        if w[k] > 0:
            last = k
    target = u * total
    for k in range(K):
        cum += w[k]
        if cum > target:
            return k if k < last else last
    return last


def sample_layer(const double[:, :, ::1] tri, const double[:, :, ::1] box,
                 const long[:, ::1] coarse, const double[:, ::1] u_tri,
                 const double[:, ::1] u_box):
    cdef Py_ssize_t n = tri.shape[2], nn = tri.shape[1]
    cdef Py_ssize_t S = coarse.shape[0], M = coarse.shape[1], size = 2 * M
    cdef Py_ssize_t i, s, b, k, y, a, c, ts, bs, col
    cdef Py_ssize_t T = tri.shape[0], B = box.shape[0]
    out = np.empty((S, size), dtype=np.int64)
    cdef long[:, ::1] fine = out
    cdef long[::1] wires = np.empty(size, dtype=np.int64)
    cdef double[::1] w = np.empty(nn)
    with nogil:
        for i in range(S):
            for s in range(M):
                ts = s if T > 1 else 0
                col = coarse[i, s]
                for k in range(nn):
                    w[k] = tri[ts, k, col]
                y = _draw(&w[0], nn, u_tri[i, s])
                wires[2 * s] = y // n
                wires[2 * s + 1] = y % n
            for b in range(M):
                a = (2 * b + 1) % size
                c = (2 * b + 2) % size
                bs = b if B > 1 else 0
                col = wires[a] * n + wires[c]
                for k in range(nn):
                    w[k] = box[bs, k, col]
                y = _draw(&w[0], nn, u_box[i, b])
                fine[i, a] = y // n
                fine[i, c] = y % n
    return out


def ring_ffbs(const double[:, ::1] phi, const double[:, :, ::1] box,
              const double[:, :, ::1] pair, const long[:, ::1] x,
              const double[:, ::1] unif):
    cdef Py_ssize_t M = phi.shape[0], U = phi.shape[1]
    cdef Py_ssize_t n = <Py_ssize_t>(round(U ** (1.0 / 3.0)))
    cdef Py_ssize_t V = n * n, S = x.shape[0], size = 2 * M, B = box.shape[0]
    cdef Py_ssize_t i, s, p, q, r, a, xo, bs, zp, zq, wb
    cdef double m, tot, tr, ls

    zs = np.empty((S, M), dtype=np.int64)
    lev = np.empty(S)
    cdef long[:, ::1] z = zs
    cdef double[::1] logev = lev
    cdef double[:, :, ::1] T = np.empty((M, V, V))
    cdef double[:, ::1] P = np.empty((V, V))
    cdef double[:, ::1] Q = np.empty((V, V))
    cdef double[:, ::1] F = np.empty((M, V))
    cdef double[::1] w = np.empty(V)
    cdef long[::1] v = np.empty(M, dtype=np.int64)

    with nogil:
        for i in range(S):
            # block states (z, wa); wb is summed through box s
            for s in range(M):
                bs = s if B > 1 else 0
                xo = x[i, (2 * s + 1) % size] * n + x[i, (2 * s + 2) % size]
                for p in range(V):
                    zp = p // n
                    for q in range(V):
                        zq = q // n
                        tot = 0.0
                        for wb in range(n):
                            tot += phi[s, p * n + wb] * box[bs, xo, wb * n + q % n]
                        T[s, p, q] = tot * pair[s, zp, zq]
            for p in range(V):
                for q in range(V):
                    P[p, q] = T[0, p, q]
            ls = 0.0
            for s in range(1, M + 1):
                m = 0.0
                for p in range(V):
                    for q in range(V):
                        if P[p, q] > m:
                            m = P[p, q]
                if m == 0.0:
                    m = 1.0
                for p in range(V):
                    for q in range(V):
                        P[p, q] /= m
                ls += log(m)
                if s < M:
                    for p in range(V):
                        for q in range(V):
                            tot = 0.0
                            for r in range(V):
                                tot += P[p, r] * T[s, r, q]
                            Q[p, q] = tot
                    for p in range(V):
                        for q in range(V):
                            P[p, q] = Q[p, q]
            tr = 0.0
            for p in range(V):
                w[p] = P[p, p]
                tr += w[p]
            if tr <= 0.0:
                logev[i] = -INFINITY
                for s in range(M):
                    z[i, s] = -1
                continue
            logev[i] = log(tr) + ls
            a = _draw(&w[0], V, unif[i, 0])
            v[0] = a
            if M > 1:
                for q in range(V):
                    F[1, q] = T[0, a, q]
                for s in range(1, M):
                    tot = 0.0
                    for q in range(V):
                        tot += F[s, q]
                    if tot == 0.0:
                        tot = 1.0
                    for q in range(V):
                        F[s, q] /= tot
                    if s < M - 1:
                        for q in range(V):
                            m = 0.0
                            for p in range(V):
                                m += F[s, p] * T[s, p, q]
                            F[s + 1, q] = m
                for p in range(V):
                    w[p] = F[M - 1, p] * T[M - 1, p, a]
                v[M - 1] = _draw(&w[0], V, unif[i, M - 1])
                for s in range(M - 2, 0, -1):
                    for p in range(V):
                        w[p] = F[s, p] * T[s, p, v[s + 1]]
                    v[s] = _draw(&w[0], V, unif[i, s])
            for s in range(M):
                z[i, s] = v[s] // n
    return zs, lev
