# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Signatures mirror ``ksvrg._pykernels`` exactly."""
from libc.math cimport exp
from libc.stdint cimport int32_t, int64_t


cdef inline double _expit(double z) noexcept nogil:
    cdef double e
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


cdef inline double _dphi(int loss, double z, double b) noexcept nogil:
    cdef double s
    if loss == 0:
        return -b * _expit(-b * z)
    elif loss == 1:
        return z - b
    s = _expit(-b * z)
    return -b * s * (1.0 - s)


cdef inline double _dot_row(const int64_t[::1] indptr, const int32_t[::1] indices,
                            const double[::1] data, int64_t i, const double* v) noexcept nogil:
    cdef int64_t p
    cdef double acc = 0.0
    for p in range(indptr[i], indptr[i + 1]):
        acc += data[p] * v[indices[p]]
    return acc


def inner_loop(const int64_t[::1] indptr, const int32_t[::1] indices, const double[::1] data,
               const double[::1] labels, int loss, double lam, double eta, double decay,
               double[::1] x, const double[::1] alpha_bar, const double[:, ::1] snapshots,
               const int32_t[::1] assignment, const int64_t[::1] samples, double[::1] accum,
               bint track_phi, double[::1] phi_sum, unsigned char[::1] seen,
               int64_t[::1] phi_list, int64_t n_phi):
    """Run ``len(samples)`` variance-reduced steps in place; return the new ``n_phi``."""
    cdef Py_ssize_t d = x.shape[0]
    cdef Py_ssize_t t, j
    cdef int64_t i, p
    cdef const double* theta
    cdef double zx, zt, cx, ct, b, diff
    with nogil:
        for t in range(samples.shape[0]):
            i = samples[t]
            theta = &snapshots[assignment[i], 0]
            b = labels[i]
            zx = _dot_row(indptr, indices, data, i, &x[0])
            zt = _dot_row(indptr, indices, data, i, theta)
            cx = _dphi(loss, zx, b)
            ct = _dphi(loss, zt, b)
            for j in range(d):
                accum[j] = decay * accum[j] + x[j]
            if track_phi and not seen[i]:
                seen[i] = 1
                phi_list[n_phi] = i
                n_phi += 1
                for j in range(d):
                    phi_sum[j] += lam * theta[j]
                for p in range(indptr[i], indptr[i + 1]):
                    phi_sum[indices[p]] += ct * data[p]
            for j in range(d):
                x[j] -= eta * (lam * (x[j] - theta[j]) + alpha_bar[j])
            diff = eta * (cx - ct)
            for p in range(indptr[i], indptr[i + 1]):
                x[indices[p]] -= diff * data[p]
    return n_phi


def saga_loop(const int64_t[::1] indptr, const int32_t[::1] indices, const double[::1] data,
              const double[::1] labels, int loss, double lam, double eta,
              double[::1] x, double[:, ::1] table, double[::1] alpha_bar,
              const int64_t[::1] samples, double[::1] work):
    """SAGA steps in place: update ``x``, the gradient table and its mean."""
    cdef Py_ssize_t d = x.shape[0]
    cdef double n = labels.shape[0]
    cdef Py_ssize_t t, j
    cdef int64_t i, p
    cdef double c, delta
    with nogil:
        for t in range(samples.shape[0]):
            i = samples[t]
            c = _dphi(loss, _dot_row(indptr, indices, data, i, &x[0]), labels[i])
            for j in range(d):
                work[j] = lam * x[j]
            for p in range(indptr[i], indptr[i + 1]):
                work[indices[p]] += c * data[p]
            for j in range(d):
                delta = work[j] - table[i, j]
                x[j] -= eta * (delta + alpha_bar[j])
                alpha_bar[j] += delta / n
                table[i, j] = work[j]


def sgd_loop(const int64_t[::1] indptr, const int32_t[::1] indices, const double[::1] data,
             const double[::1] labels, int loss, double lam, double eta,
             double[::1] x, const int64_t[::1] samples):
    cdef Py_ssize_t d = x.shape[0]
    cdef Py_ssize_t t, j
    cdef int64_t i, p
    cdef double c
    with nogil:
        for t in range(samples.shape[0]):
            i = samples[t]
            c = eta * _dphi(loss, _dot_row(indptr, indices, data, i, &x[0]), labels[i])
            for j in range(d):
                x[j] -= eta * (lam * x[j])
            for p in range(indptr[i], indptr[i + 1]):
                x[indices[p]] -= c * data[p]
