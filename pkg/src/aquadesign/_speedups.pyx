# cython: language_level=3
"""Compiled twins of the 2D elastic kernels in ``_kernels_py``.

Same signatures, same math, loop-based instead of vectorized.  The NumPy
module remains the reference; parity is covered by tests.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

BACKEND_NAME = "compiled"


cdef inline int _polar2(double f00, double f01, double f10, double f11,
                        double* r) nogil:
    cdef double x = f00 + f11
    cdef double y = f01 - f10
    cdef double n = sqrt(x * x + y * y)
    if n == 0.0:
        return -1
    r[0] = x / n
    r[1] = y / n
    r[2] = -y / n
    r[3] = x / n
    return 0


@cython.boundscheck(False)
@cython.wraparound(False)
def elastic2d_force(q, cells, grads, double wq, mu, lam, act, fibers):
    cdef double[:, ::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef long[:, ::1] cv = np.ascontiguousarray(cells, dtype=np.int64)
    cdef double[:, :, ::1] gv = np.ascontiguousarray(grads, dtype=np.float64)
    cdef double[::1] muv = np.ascontiguousarray(mu, dtype=np.float64)
    cdef double[::1] lamv = np.ascontiguousarray(lam, dtype=np.float64)
    cdef bint has_act = act is not None and np.any(np.asarray(act) != 0.0)
    cdef double[::1] actv
    cdef double[:, ::1] fibv
    if has_act:
        actv = np.ascontiguousarray(act, dtype=np.float64)
        fibv = np.ascontiguousarray(fibers, dtype=np.float64)
    out = np.zeros_like(np.asarray(q, dtype=np.float64))
    cdef double[:, ::1] fv = out
    cdef Py_ssize_t nc = cv.shape[0], nq = gv.shape[0]
    cdef Py_ssize_t c, qp, a, node
    cdef double f00, f01, f10, f11, trs, p00, p01, p10, p11
    cdef double r[4]
    cdef double det, m2, la, av, ff0, ff1, g0, g1, x0, x1
    for c in range(nc):
        m2 = 2.0 * muv[c]
        la = lamv[c]
        for qp in range(nq):
            f00 = 0.0; f01 = 0.0; f10 = 0.0; f11 = 0.0
            for a in range(4):
                node = cv[c, a]
                x0 = qv[node, 0]; x1 = qv[node, 1]
                g0 = gv[qp, a, 0]; g1 = gv[qp, a, 1]
                f00 += x0 * g0; f01 += x0 * g1
                f10 += x1 * g0; f11 += x1 * g1
            det = f00 * f11 - f01 * f10
            if det <= 0.0:
                raise ValueError(f"inverted element in cell {c}")
            _polar2(f00, f01, f10, f11, r)
            trs = r[0] * f00 + r[1] * f01 + r[2] * f10 + r[3] * f11
            p00 = m2 * (f00 - r[0]) + la * (trs - 2.0) * r[0]
            p01 = m2 * (f01 - r[1]) + la * (trs - 2.0) * r[1]
            p10 = m2 * (f10 - r[2]) + la * (trs - 2.0) * r[2]
            p11 = m2 * (f11 - r[3]) + la * (trs - 2.0) * r[3]
            if has_act and actv[c] != 0.0:
                av = actv[c]
                ff0 = f00 * fibv[c, 0] + f01 * fibv[c, 1]
                ff1 = f10 * fibv[c, 0] + f11 * fibv[c, 1]
                p00 += av * ff0 * fibv[c, 0]
                p01 += av * ff0 * fibv[c, 1]
                p10 += av * ff1 * fibv[c, 0]
                p11 += av * ff1 * fibv[c, 1]
            for a in range(4):
                node = cv[c, a]
                g0 = gv[qp, a, 0]; g1 = gv[qp, a, 1]
                fv[node, 0] -= wq * (p00 * g0 + p01 * g1)
                fv[node, 1] -= wq * (p10 * g0 + p11 * g1)
    return out


@cython.boundscheck(False)
@cython.wraparound(False)
def elastic2d_energy(q, cells, grads, double wq, mu, lam, act, fibers):
    cdef double[:, ::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef long[:, ::1] cv = np.ascontiguousarray(cells, dtype=np.int64)
    cdef double[:, :, ::1] gv = np.ascontiguousarray(grads, dtype=np.float64)
    cdef double[::1] muv = np.ascontiguousarray(mu, dtype=np.float64)
    cdef double[::1] lamv = np.ascontiguousarray(lam, dtype=np.float64)
    cdef bint has_act = act is not None and np.any(np.asarray(act) != 0.0)
    cdef double[::1] actv
    cdef double[:, ::1] fibv
    if has_act:
        actv = np.ascontiguousarray(act, dtype=np.float64)
        fibv = np.ascontiguousarray(fibers, dtype=np.float64)
    cdef Py_ssize_t nc = cv.shape[0], nq = gv.shape[0]
    cdef Py_ssize_t c, qp, a, node
    cdef double f00, f01, f10, f11, trs, dev, det
    cdef double r[4]
    cdef double total = 0.0, g0, g1, x0, x1, ff0, ff1
    for c in range(nc):
        for qp in range(nq):
            f00 = 0.0; f01 = 0.0; f10 = 0.0; f11 = 0.0
            for a in range(4):
                node = cv[c, a]
                x0 = qv[node, 0]; x1 = qv[node, 1]
                g0 = gv[qp, a, 0]; g1 = gv[qp, a, 1]
                f00 += x0 * g0; f01 += x0 * g1
                f10 += x1 * g0; f11 += x1 * g1
            det = f00 * f11 - f01 * f10
            if det <= 0.0:
                raise ValueError(f"inverted element in cell {c}")
            _polar2(f00, f01, f10, f11, r)
            trs = r[0] * f00 + r[1] * f01 + r[2] * f10 + r[3] * f11
            dev = ((f00 - r[0]) ** 2 + (f01 - r[1]) ** 2
                   + (f10 - r[2]) ** 2 + (f11 - r[3]) ** 2)
            total += wq * (muv[c] * dev + 0.5 * lamv[c] * (trs - 2.0) ** 2)
            if has_act and actv[c] != 0.0:
                ff0 = f00 * fibv[c, 0] + f01 * fibv[c, 1]
                ff1 = f10 * fibv[c, 0] + f11 * fibv[c, 1]
                total += wq * 0.5 * actv[c] * (ff0 * ff0 + ff1 * ff1)
    return total


@cython.boundscheck(False)
@cython.wraparound(False)
def elastic2d_hessian_blocks(q, cells, grads, double wq, mu, lam, act,
                             fibers, bmats):
    cdef double[:, ::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef long[:, ::1] cv = np.ascontiguousarray(cells, dtype=np.int64)
    cdef double[:, :, ::1] gv = np.ascontiguousarray(grads, dtype=np.float64)
    cdef double[::1] muv = np.ascontiguousarray(mu, dtype=np.float64)
    cdef double[::1] lamv = np.ascontiguousarray(lam, dtype=np.float64)
    cdef double[:, :, ::1] bv = np.ascontiguousarray(bmats, dtype=np.float64)
    cdef bint has_act = act is not None and np.any(np.asarray(act) != 0.0)
    cdef double[::1] actv
    cdef double[:, ::1] fibv
    if has_act:
        actv = np.ascontiguousarray(act, dtype=np.float64)
        fibv = np.ascontiguousarray(fibers, dtype=np.float64)
    cdef Py_ssize_t nc = cv.shape[0], nq = gv.shape[0]
    out = np.zeros((nc, 8, 8))
    cdef double[:, :, ::1] hv = out
    cdef Py_ssize_t c, qp, a, b, i, j, node
    cdef double f00, f01, f10, f11, trs, beta, det
    cdef double r[4]
    cdef double rj[4]
    cdef double d[4][4]
    cdef double tmp[4]
    cdef double m2, la, av, g0, g1, x0, x1, acc
    for c in range(nc):
        m2 = 2.0 * muv[c]
        la = lamv[c]
        for qp in range(nq):
            f00 = 0.0; f01 = 0.0; f10 = 0.0; f11 = 0.0
            for a in range(4):
                node = cv[c, a]
                x0 = qv[node, 0]; x1 = qv[node, 1]
                g0 = gv[qp, a, 0]; g1 = gv[qp, a, 1]
                f00 += x0 * g0; f01 += x0 * g1
                f10 += x1 * g0; f11 += x1 * g1
            det = f00 * f11 - f01 * f10
            if det <= 0.0:
                raise ValueError(f"inverted element in cell {c}")
            _polar2(f00, f01, f10, f11, r)
            trs = r[0] * f00 + r[1] * f01 + r[2] * f10 + r[3] * f11
            beta = la * (trs - 2.0) - m2
            rj[0] = r[1]; rj[1] = -r[0]; rj[2] = r[3]; rj[3] = -r[2]
            for i in range(4):
                for j in range(4):
                    d[i][j] = (la * r[i] * r[j]
                               + (beta / trs) * rj[i] * rj[j])
                d[i][i] += m2
            if has_act and actv[c] != 0.0:
                av = actv[c]
                for i in range(2):
                    for j in range(2):
                        d[i][j] += av * fibv[c, i] * fibv[c, j]
                        d[2 + i][2 + j] += av * fibv[c, i] * fibv[c, j]
            for a in range(8):
                for i in range(4):
                    acc = 0.0
                    for j in range(4):
                        acc += d[i][j] * bv[qp, j, a]
                    tmp[i] = acc
                for b in range(8):
                    acc = 0.0
                    for i in range(4):
                        acc += bv[qp, i, b] * tmp[i]
                    hv[c, b, a] += wq * acc
    return out


@cython.boundscheck(False)
@cython.wraparound(False)
def elastic2d_dots(q, y, cells, grads, double wq, double mu_unit,
                   double lam_unit, fibers):
    cdef double[:, ::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef double[:, ::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef long[:, ::1] cv = np.ascontiguousarray(cells, dtype=np.int64)
    cdef double[:, :, ::1] gv = np.ascontiguousarray(grads, dtype=np.float64)
    cdef double[:, ::1] fibv = np.ascontiguousarray(fibers, dtype=np.float64)
    cdef Py_ssize_t nc = cv.shape[0], nq = gv.shape[0]
    de = np.zeros(nc)
    da = np.zeros(nc)
    cdef double[::1] dev = de
    cdef double[::1] dav = da
    cdef Py_ssize_t c, qp, a, node
    cdef double f00, f01, f10, f11, trs, det
    cdef double r[4]
    cdef double p00, p01, p10, p11, q00, q01, q10, q11
    cdef double ff0, ff1, g0, g1, x0, x1, acc_e, acc_a, m2
    for c in range(nc):
        acc_e = 0.0
        acc_a = 0.0
        for qp in range(nq):
            f00 = 0.0; f01 = 0.0; f10 = 0.0; f11 = 0.0
            for a in range(4):
                node = cv[c, a]
                x0 = qv[node, 0]; x1 = qv[node, 1]
                g0 = gv[qp, a, 0]; g1 = gv[qp, a, 1]
                f00 += x0 * g0; f01 += x0 * g1
                f10 += x1 * g0; f11 += x1 * g1
            det = f00 * f11 - f01 * f10
            if det <= 0.0:
                raise ValueError(f"inverted element in cell {c}")
            _polar2(f00, f01, f10, f11, r)
            trs = r[0] * f00 + r[1] * f01 + r[2] * f10 + r[3] * f11
            m2 = 2.0 * mu_unit
            p00 = m2 * (f00 - r[0]) + lam_unit * (trs - 2.0) * r[0]
            p01 = m2 * (f01 - r[1]) + lam_unit * (trs - 2.0) * r[1]
            p10 = m2 * (f10 - r[2]) + lam_unit * (trs - 2.0) * r[2]
            p11 = m2 * (f11 - r[3]) + lam_unit * (trs - 2.0) * r[3]
            ff0 = f00 * fibv[c, 0] + f01 * fibv[c, 1]
            ff1 = f10 * fibv[c, 0] + f11 * fibv[c, 1]
            q00 = ff0 * fibv[c, 0]; q01 = ff0 * fibv[c, 1]
            q10 = ff1 * fibv[c, 0]; q11 = ff1 * fibv[c, 1]
            for a in range(4):
                node = cv[c, a]
                g0 = gv[qp, a, 0]; g1 = gv[qp, a, 1]
                acc_e -= wq * (yv[node, 0] * (p00 * g0 + p01 * g1)
                               + yv[node, 1] * (p10 * g0 + p11 * g1))
                acc_a -= wq * (yv[node, 0] * (q00 * g0 + q01 * g1)
                               + yv[node, 1] * (q10 * g0 + q11 * g1))
        dev[c] = acc_e
        dav[c] = acc_a
    return de, da
