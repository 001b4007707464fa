# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled iteration engine: the same contract as ``_reference.Engine``.

Every buffer is Fortran-ordered and preallocated; products go straight to
BLAS dgemm and the elementwise updates are fused loops, so a step does no
Python-level allocation.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport isfinite
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemm, ddot

cnp.import_array()

cdef enum:
    CONTINUE = 0
    CONVERGED = 1
    DIVERGED = 2

METHODS = {"gd": 0, "altgd": 1, "nag": 2}


cdef inline void _copy(double[::1, :] dst, double[::1, :] src) noexcept nogil:
    memcpy(&dst[0, 0], &src[0, 0], src.shape[0] * src.shape[1] * sizeof(double))


cdef inline double _sumsq(double[::1, :] a) noexcept nogil:
    cdef int n = <int>(a.shape[0] * a.shape[1])
    cdef int one = 1
    return ddot(&n, &a[0, 0], &one, &a[0, 0], &one)


cdef inline double _distsq(double[::1, :] a, double[::1, :] b) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double acc = 0.0, v
    for j in range(a.shape[1]):
        for i in range(a.shape[0]):
            v = a[i, j] - b[i, j]
            acc += v * v
    return acc


cdef inline void _gemm(char ta, char tb, double alpha, double[::1, :] A, double[::1, :] B,
                       double beta, double[::1, :] C) noexcept nogil:
    # C = alpha op(A) op(B) + beta C
    cdef int m = <int>C.shape[0]
    cdef int n = <int>C.shape[1]
    cdef int k = <int>(A.shape[1] if ta == b'N' else A.shape[0])
    cdef int lda = <int>A.shape[0]
    cdef int ldb = <int>B.shape[0]
    cdef int ldc = <int>C.shape[0]
    dgemm(&ta, &tb, &m, &n, &k, &alpha, &A[0, 0], &lda, &B[0, 0], &ldb, &beta, &C[0, 0], &ldc)


cdef inline void _extrapolate(double[::1, :] out, double[::1, :] z, double[::1, :] zp,
                              double b) noexcept nogil:
    # z + b (z - zp) is exact when zp == z or b == 0
    cdef Py_ssize_t i, j
    for j in range(out.shape[1]):
        for i in range(out.shape[0]):
            out[i, j] = z[i, j] + b * (z[i, j] - zp[i, j])


cdef class Engine:
    cdef public str method, order
    cdef public double eta, beta
    cdef public long t
    cdef int code
    cdef bint lnn, yfirst
    cdef object _X, _Y, _Xp, _Yp, _R, _G, _W, _T, _D, _Zx, _Zy, _Zxp, _Zyp
    cdef double[::1, :] mX, mY, mXp, mYp, mR, mG, mW, mT, mD, mZx, mZy, mZxp, mZyp

    def __init__(self, X, Y, X_prev, Y_prev, target, data, method, eta, beta, order="xy"):
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}")
        if order not in ("xy", "yx"):
            raise ValueError("order must be 'xy' or 'yx'")
        self.method = method
        self.order = order
        self.code = METHODS[method]
        self.yfirst = order == "yx"
        self.eta = eta
        self.beta = beta
        self.t = 0
        self.lnn = data is not None
        self._X = np.array(X, dtype=np.float64, order="F")
        self._Y = np.array(Y, dtype=np.float64, order="F")
        self._Xp = np.array(X_prev, dtype=np.float64, order="F")
        self._Yp = np.array(Y_prev, dtype=np.float64, order="F")
        self._T = np.array(target, dtype=np.float64, order="F")
        m, d = self._X.shape
        n = self._Y.shape[0]
        self._Zx = np.zeros((m, d), order="F")
        self._Zy = np.zeros((n, d), order="F")
        self._Zxp = np.zeros((m, d), order="F")
        self._Zyp = np.zeros((n, d), order="F")
        self._R = np.zeros(self._T.shape, order="F")
        if self.lnn:
            self._D = np.array(data, dtype=np.float64, order="F")
            self._W = np.zeros((m, n), order="F")
            self._G = np.zeros((m, n), order="F")
        else:
            self._D = np.zeros((1, 1), order="F")
            self._W = self._R
            self._G = self._R
        self.mX, self.mY, self.mXp, self.mYp = self._X, self._Y, self._Xp, self._Yp
        self.mR, self.mG, self.mW, self.mT, self.mD = self._R, self._G, self._W, self._T, self._D
        self.mZx, self.mZy, self.mZxp, self.mZyp = self._Zx, self._Zy, self._Zxp, self._Zyp
        if self.code == 2:
            # gradient point of the previous iterate, reusing the current buffers
            self._refresh_from(self.mXp, self.mYp)
            self._gradient_point(self.mXp, self.mYp, self.mZxp, self.mZyp)
        self._refresh_from(self.mX, self.mY)

    property X:
        def __get__(self):
            return self._X
    property Y:
        def __get__(self):
            return self._Y
    property X_prev:
        def __get__(self):
            return self._Xp
    property Y_prev:
        def __get__(self):
            return self._Yp
    property R:
        def __get__(self):
            return self._R
    property G:
        def __get__(self):
            return self._G

    cdef void _refresh_from(self, double[::1, :] X, double[::1, :] Y) noexcept nogil:
        if self.lnn:
            _gemm(b'N', b'T', 1.0, X, Y, 0.0, self.mW)
            _copy(self.mR, self.mT)
            _gemm(b'N', b'N', 1.0, self.mW, self.mD, -1.0, self.mR)
            _gemm(b'N', b'T', 1.0, self.mR, self.mD, 0.0, self.mG)
        else:
            _copy(self.mR, self.mT)
            _gemm(b'N', b'T', 1.0, X, Y, -1.0, self.mR)

    cdef void _gradient_point(self, double[::1, :] X, double[::1, :] Y,
                              double[::1, :] zx, double[::1, :] zy) noexcept nogil:
        _copy(zx, X)
        _gemm(b'N', b'N', -self.eta, self.mG, Y, 1.0, zx)
        _copy(zy, Y)
        _gemm(b'T', b'N', -self.eta, self.mG, X, 1.0, zy)

    cdef void _step(self) noexcept nogil:
        _copy(self.mXp, self.mX)
        _copy(self.mYp, self.mY)
        if self.code == 1:
            if self.yfirst:
                _gemm(b'T', b'N', -self.eta, self.mG, self.mX, 1.0, self.mY)
                self._refresh_from(self.mX, self.mY)
                _gemm(b'N', b'N', -self.eta, self.mG, self.mY, 1.0, self.mX)
            else:
                _gemm(b'N', b'N', -self.eta, self.mG, self.mY, 1.0, self.mX)
                self._refresh_from(self.mX, self.mY)
                _gemm(b'T', b'N', -self.eta, self.mG, self.mX, 1.0, self.mY)
        else:
            self._gradient_point(self.mXp, self.mYp, self.mZx, self.mZy)
            if self.code == 0:
                _copy(self.mX, self.mZx)
                _copy(self.mY, self.mZy)
            else:
                _extrapolate(self.mX, self.mZx, self.mZxp, self.beta)
                _extrapolate(self.mY, self.mZy, self.mZyp, self.beta)
                _copy(self.mZxp, self.mZx)
                _copy(self.mZyp, self.mZy)
        self._refresh_from(self.mX, self.mY)
        self.t += 1

    def step(self):
        with nogil:
            self._step()

    def advance(self, long n_steps, double stop_sq, double div_sq, X0, Y0,
                double[::1] resid_sq, double[::1] dx_sq, double[::1] dy_sq):
        cdef double[::1, :] x0 = np.asfortranarray(X0, dtype=np.float64)
        cdef double[::1, :] y0 = np.asfortranarray(Y0, dtype=np.float64)
        cdef long k
        cdef double rs
        cdef int status = CONTINUE
        with nogil:
            for k in range(n_steps):
                self._step()
                rs = _sumsq(self.mR)
                resid_sq[k] = rs
                dx_sq[k] = _distsq(self.mX, x0)
                dy_sq[k] = _distsq(self.mY, y0)
                if not isfinite(rs) or rs > div_sq:
                    status = DIVERGED
                    break
                if rs <= stop_sq:
                    status = CONVERGED
                    break
        if status == CONTINUE:
            return n_steps, status
        return k + 1, status
