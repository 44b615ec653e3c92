"""Pure numpy fallback for the compiled kernels in ``_kernels.pyx``.

Same signatures, same in-place semantics and the same order of floating
point operations, except that row dot products go through numpy.
"""
import math

import numpy as np


def _expit(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _dphi(loss, z, b):
    if loss == 0:
        return -b * _expit(-b * z)
    if loss == 1:
        return z - b
    s = _expit(-b * z)
    return -b * s * (1.0 - s)


def inner_loop(indptr, indices, data, labels, loss, lam, eta, decay,
               x, alpha_bar, snapshots, assignment, samples, accum,
               track_phi, phi_sum, seen, phi_list, n_phi):
    for i in samples:
        i = int(i)
        lo, hi = indptr[i], indptr[i + 1]
        cols = indices[lo:hi]
        vals = data[lo:hi]
        theta = snapshots[assignment[i]]
        b = float(labels[i])
        cx = _dphi(loss, float(vals @ x[cols]), b)
        ct = _dphi(loss, float(vals @ theta[cols]), b)
        accum *= decay
        accum += x
        if track_phi and not seen[i]:
            seen[i] = 1
            phi_list[n_phi] = i
            n_phi += 1
            phi_sum += lam * theta
            phi_sum[cols] += ct * vals
        x -= eta * (lam * (x - theta) + alpha_bar)
        x[cols] -= eta * (cx - ct) * vals
    return n_phi


def saga_loop(indptr, indices, data, labels, loss, lam, eta, x, table, alpha_bar, samples, work):
    n = float(labels.shape[0])
    for i in samples:
        i = int(i)
        lo, hi = indptr[i], indptr[i + 1]
        cols = indices[lo:hi]
        vals = data[lo:hi]
        c = _dphi(loss, float(vals @ x[cols]), float(labels[i]))
        np.multiply(lam, x, out=work)
        work[cols] += c * vals
        delta = work - table[i]
        x -= eta * (delta + alpha_bar)
        alpha_bar += delta / n
        table[i] = work


def sgd_loop(indptr, indices, data, labels, loss, lam, eta, x, samples):
    for i in samples:
        i = int(i)
        lo, hi = indptr[i], indptr[i + 1]
        cols = indices[lo:hi]
        vals = data[lo:hi]
        c = eta * _dphi(loss, float(vals @ x[cols]), float(labels[i]))
        x -= eta * (lam * x)
        x[cols] -= c * vals
