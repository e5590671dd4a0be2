# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_kernels_py``; identical signatures."""
import numpy as np
cimport cython
from libc.math cimport exp, expf, sqrt, sqrtf, INFINITY

ctypedef fused real:
    float
    double

cdef double GELU_C = 0.7978845608028654
cdef double GELU_A = 0.044715


cdef inline double _tanh(double u) noexcept nogil:
    # exp-based tanh; saturates cleanly to +-1 for large |u|
    if u > 20.0:
        return 1.0
    if u < -20.0:
        return -1.0
    return 1.0 - 2.0 / (exp(2.0 * u) + 1.0)


cdef inline float _tanhf(float u) noexcept nogil:
    if u > 10.0:
        return 1.0
    if u < -10.0:
        return -1.0
    return 1.0 - 2.0 / (expf(2.0 * u) + 1.0)


def softmax_fwd(x, mask=None):
    y = np.empty_like(x)
    cdef bint ok
    if mask is None:
        ok = _softmax(x, y, None, False)
    else:
        ok = _softmax(x, y, mask, True)
    if not ok:
        return None, False
    return y, True


def _softmax(const real[:, ::1] x, real[:, ::1] y, const unsigned char[:, ::1] mask,
                 bint masked):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double mx, s, e
    cdef bint any_kept
    cdef bint ok = True
    with nogil:
        for i in range(n):
            mx = -INFINITY
            any_kept = False
            for j in range(d):
                if masked and mask[i, j] == 0:
                    continue
                any_kept = True
                if x[i, j] > mx:
                    mx = x[i, j]
            if not any_kept:
                ok = False
                break
            s = 0.0
            for j in range(d):
                if masked and mask[i, j] == 0:
                    y[i, j] = 0
                else:
                    if real is float:
                        e = expf(<float>(x[i, j] - mx))
                    else:
                        e = exp(x[i, j] - mx)
                    y[i, j] = <real>e
                    s += <double>y[i, j]
            for j in range(d):
                y[i, j] = <real>(y[i, j] / s)
    return ok


def softmax_bwd(y, g):
    dx = np.empty_like(y)
    _softmax_bwd(y, g, dx)
    return dx


def _softmax_bwd(const real[:, ::1] y, const real[:, ::1] g, real[:, ::1] dx):
    cdef Py_ssize_t n = y.shape[0], d = y.shape[1], i, j
    cdef double dot
    with nogil:
        for i in range(n):
            dot = 0.0
            for j in range(d):
                dot += <double>g[i, j] * y[i, j]
            for j in range(d):
                dx[i, j] = <real>(y[i, j] * (g[i, j] - dot))


def layernorm_fwd(x, gain, bias, double eps):
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    rstd = np.empty(x.shape[0], dtype=x.dtype)
    _ln_fwd(x, gain, bias, eps, y, xhat, rstd)
    return y, xhat, rstd


def _ln_fwd(const real[:, ::1] x, const real[::1] gain, const real[::1] bias, double eps,
            real[:, ::1] y, real[:, ::1] xhat, real[::1] rstd):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double mean, var, r, t
    with nogil:
        for i in range(n):
            mean = 0.0
            for j in range(d):
                mean += x[i, j]
            mean /= d
            var = 0.0
            for j in range(d):
                t = x[i, j] - mean
                var += t * t
            var /= d
            r = 1.0 / sqrt(var + eps)
            rstd[i] = <real>r
            for j in range(d):
                xhat[i, j] = <real>((x[i, j] - mean) * r)
                y[i, j] = xhat[i, j] * gain[j] + bias[j]


def layernorm_bwd(g, xhat, rstd, gain):
    dx = np.empty_like(g)
    dgain64 = np.zeros(g.shape[1], dtype=np.float64)
    dbias64 = np.zeros(g.shape[1], dtype=np.float64)
    _ln_bwd(g, xhat, rstd, gain, dx, dgain64, dbias64)
    return dx, dgain64.astype(g.dtype), dbias64.astype(g.dtype)


def _ln_bwd(const real[:, ::1] g, const real[:, ::1] xhat, const real[::1] rstd, const real[::1] gain,
            real[:, ::1] dx, double[::1] dgain, double[::1] dbias):
    cdef Py_ssize_t n = g.shape[0], d = g.shape[1], i, j
    cdef double m1, m2, dxh
    with nogil:
        for i in range(n):
            m1 = 0.0
            m2 = 0.0
            for j in range(d):
                dxh = <double>g[i, j] * gain[j]
                m1 += dxh
                m2 += dxh * xhat[i, j]
                dgain[j] += <double>g[i, j] * xhat[i, j]
                dbias[j] += g[i, j]
            m1 /= d
            m2 /= d
            for j in range(d):
                dxh = <double>g[i, j] * gain[j]
                dx[i, j] = <real>(rstd[i] * (dxh - m1 - <double>xhat[i, j] * m2))


def gelu_fwd(x):
    y = np.empty_like(x)
    _gelu_fwd(x, y)
    return y


def _gelu_fwd(const real[:, ::1] x, real[:, ::1] y):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double v, t
    with nogil:
        for i in range(n):
            for j in range(d):
                v = x[i, j]
                if real is float:
                    t = _tanhf(<float>(GELU_C * (v + GELU_A * v * v * v)))
                else:
                    t = _tanh(GELU_C * (v + GELU_A * v * v * v))
                y[i, j] = <real>(0.5 * v * (1.0 + t))


def gelu_bwd(x, g):
    dx = np.empty_like(x)
    _gelu_bwd(x, g, dx)
    return dx


def _gelu_bwd(const real[:, ::1] x, const real[:, ::1] g, real[:, ::1] dx):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double v, t
    with nogil:
        for i in range(n):
            for j in range(d):
                v = x[i, j]
                if real is float:
                    t = _tanhf(<float>(GELU_C * (v + GELU_A * v * v * v)))
                else:
                    t = _tanh(GELU_C * (v + GELU_A * v * v * v))
                dx[i, j] = <real>(g[i, j] * (0.5 * (1.0 + t)
                    + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v)))


def pairwise_distances(coords):
    c = np.ascontiguousarray(coords, dtype=np.float64)
    out = np.empty((c.shape[0], c.shape[0]), dtype=np.float64)
    _pdist(c, out)
    return out


def _pdist(const double[:, ::1] c, double[:, ::1] out):
    cdef Py_ssize_t n = c.shape[0], k = c.shape[1], i, j, a
    cdef double s, t
    with nogil:
        for i in range(n):
            out[i, i] = 0.0
            for j in range(i + 1, n):
                s = 0.0
                for a in range(k):
                    t = c[i, a] - c[j, a]
                    s += t * t
                s = sqrt(s)
                out[i, j] = s
                out[j, i] = s


def adamw_update(p, g, m, v, double lr, double beta1, double beta2, double eps,
                 double weight_decay, double bc1, double bc2):
    """In-place decoupled-decay Adam update on flat arrays."""
    _adamw(p, g, m, v, lr, beta1, beta2, eps, weight_decay, bc1, bc2)


def _adamw(real[::1] p, const real[::1] g, real[::1] m, real[::1] v, double lr,
           double beta1, double beta2, double eps, double wd,
           double bc1, double bc2):
    cdef Py_ssize_t n = p.shape[0], i
    # constants hoisted so the loop body has one sqrt and one division
    cdef real decay = <real>(1.0 - lr * wd)
    cdef real step = <real>(lr / bc1)
    cdef real inv_bc2 = <real>(1.0 / bc2)
    cdef real b1 = <real>beta1, b2 = <real>beta2
    cdef real c1 = <real>(1.0 - beta1), c2 = <real>(1.0 - beta2), e = <real>eps
    cdef real gi, mi, vi
    with nogil:
        for i in range(n):
            gi = g[i]
            mi = b1 * m[i] + c1 * gi
            vi = b2 * v[i] + c2 * gi * gi
            m[i] = mi
            v[i] = vi
            if real is float:
                p[i] = p[i] * decay - step * mi / (sqrtf(vi * inv_bc2) + e)
            else:
                p[i] = p[i] * decay - step * mi / (sqrt(vi * inv_bc2) + e)
