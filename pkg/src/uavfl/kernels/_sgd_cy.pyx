# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled minibatch-SGD kernels; drop-in for `backend_numpy`.

Fuses the whole epochs/batches/samples loop into C to avoid per-batch
Python and BLAS dispatch overhead, which dominates at desk-scale model
and batch sizes. Same parameter layout and entry points as the numpy
backend; see that module for the contract.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, isfinite, log, tanh

cnp.import_array()


cdef double _grad_batch(const double[::1] w, const double[:, ::1] X,
                        const cnp.int64_t[::1] y, const cnp.int64_t[::1] idx,
                        Py_ssize_t i0, Py_ssize_t i1,
                        Py_ssize_t d, Py_ssize_t h, Py_ssize_t c,
                        double[::1] grad, double[::1] act, double[::1] prob,
                        double[::1] dact) nogil:
    """Mean loss over idx[i0:i1]; mean gradient written into `grad`."""
    cdef Py_ssize_t nb = i1 - i0
    cdef Py_ssize_t s, i, j, k, row
    cdef Py_ssize_t o1 = d * h, o2 = d * h + h, o3 = d * h + h + h * c
    cdef double z, m, tot, xv, loss = 0.0, dz, dh, inv = 1.0 / nb

    grad[:] = 0.0
    for s in range(i0, i1):
        row = idx[s]
        if h == 0:
            # logits straight from the linear map
            for k in range(c):
                z = w[d * c + k]
                for j in range(d):
                    z += X[row, j] * w[j * c + k]
                prob[k] = z
        else:
            for i in range(h):
                act[i] = w[o1 + i]
            for j in range(d):
                xv = X[row, j]
                for i in range(h):
                    act[i] += xv * w[j * h + i]
            for i in range(h):
                act[i] = tanh(act[i])
            for k in range(c):
                z = w[o3 + k]
                for i in range(h):
                    z += act[i] * w[o2 + i * c + k]
                prob[k] = z
        # stable softmax in place
        m = prob[0]
        for k in range(1, c):
            if prob[k] > m:
                m = prob[k]
        tot = 0.0
        for k in range(c):
            prob[k] = exp(prob[k] - m)
            tot += prob[k]
        loss -= log(prob[y[row]] / tot)
        for k in range(c):
            prob[k] /= tot
        prob[y[row]] -= 1.0

        if h == 0:
            for k in range(c):
                dz = prob[k] * inv
                grad[d * c + k] += dz
                for j in range(d):
                    grad[j * c + k] += X[row, j] * dz
        else:
            for k in range(c):
                grad[o3 + k] += prob[k] * inv
            for i in range(h):
                dh = 0.0
                for k in range(c):
                    dz = prob[k] * inv
                    dh += dz * w[o2 + i * c + k]
                    grad[o2 + i * c + k] += act[i] * dz
                dact[i] = dh * (1.0 - act[i] * act[i])
                grad[o1 + i] += dact[i]
            for j in range(d):
                xv = X[row, j]
                for i in range(h):
                    grad[j * h + i] += xv * dact[i]
    return loss * inv


def loss_grad(values, X, y, dims):
    """Mean cross-entropy loss and gradient w.r.t. the flat params."""
    cdef Py_ssize_t d = dims[0], h = dims[1], c = dims[2]
    w = np.ascontiguousarray(values, dtype=np.float64)
    Xc = np.ascontiguousarray(X, dtype=np.float64)
    yc = np.ascontiguousarray(y, dtype=np.int64)
    cdef Py_ssize_t n = Xc.shape[0]
    idx = np.arange(n, dtype=np.int64)
    grad = np.empty_like(w)
    act = np.empty(max(h, 1), dtype=np.float64)
    prob = np.empty(c, dtype=np.float64)
    dact = np.empty(max(h, 1), dtype=np.float64)
    cdef double loss = _grad_batch(w, Xc, yc, idx, 0, n, d, h, c, grad, act, prob, dact)
    return loss, grad


def sgd_run(values, X, y, dims, eta, order, batch_size):
    """Minibatch SGD over the pre-shuffled index matrix `order`.

    Returns (new params, first epoch whose params went non-finite, or -1).
    """
    cdef Py_ssize_t d = dims[0], h = dims[1], c = dims[2]
    w_arr = np.array(values, dtype=np.float64, copy=True)
    Xc = np.ascontiguousarray(X, dtype=np.float64)
    yc = np.ascontiguousarray(y, dtype=np.int64)
    oc = np.ascontiguousarray(order, dtype=np.int64)
    grad = np.empty_like(w_arr)
    act = np.empty(max(h, 1), dtype=np.float64)
    prob = np.empty(c, dtype=np.float64)
    dact = np.empty(max(h, 1), dtype=np.float64)

    cdef double[::1] w = w_arr
    cdef double[::1] g = grad
    cdef double[::1] av = act
    cdef double[::1] pv = prob
    cdef double[::1] dv = dact
    cdef const double[:, ::1] Xv = Xc
    cdef const cnp.int64_t[::1] yv = yc
    cdef const cnp.int64_t[:, ::1] ov = oc
    cdef double lr = eta
    cdef Py_ssize_t B = batch_size
    cdef Py_ssize_t n = Xc.shape[0], P = w_arr.shape[0]
    cdef Py_ssize_t e, s, i1, p
    cdef double batch_loss
    cdef bint ok

    with nogil:
        for e in range(ov.shape[0]):
            ok = True
            s = 0
            while s < n:
                i1 = s + B
                if i1 > n:
                    i1 = n
                batch_loss = _grad_batch(w, Xv, yv, ov[e], s, i1, d, h, c, g, av, pv, dv)
                for p in range(P):
                    w[p] -= lr * g[p]
                if not isfinite(batch_loss):
                    ok = False
                s = i1
            for p in range(P):
                if not isfinite(w[p]):
                    ok = False
                    break
            if not ok:
                with gil:
                    return w_arr, e
    return w_arr, -1


def predict_eval(values, X, y, dims):
    """(accuracy, mean cross-entropy loss); logit ties pick the lowest class."""
    cdef Py_ssize_t d = dims[0], h = dims[1], c = dims[2]
    w_arr = np.ascontiguousarray(values, dtype=np.float64)
    Xc = np.ascontiguousarray(X, dtype=np.float64)
    yc = np.ascontiguousarray(y, dtype=np.int64)
    act = np.empty(max(h, 1), dtype=np.float64)
    logits = np.empty(c, dtype=np.float64)

    cdef const double[::1] w = w_arr
    cdef const double[:, ::1] Xv = Xc
    cdef const cnp.int64_t[::1] yv = yc
    cdef double[::1] av = act
    cdef double[::1] zv = logits
    cdef Py_ssize_t n = Xc.shape[0]
    cdef Py_ssize_t o1 = d * h, o2 = d * h + h, o3 = d * h + h + h * c
    cdef Py_ssize_t row, i, j, k, best
    cdef double z, m, tot, loss = 0.0
    cdef Py_ssize_t correct = 0

    with nogil:
        for row in range(n):
            if h == 0:
                for k in range(c):
                    z = w[d * c + k]
                    for j in range(d):
                        z += Xv[row, j] * w[j * c + k]
                    zv[k] = z
            else:
                for i in range(h):
                    z = w[o1 + i]
                    for j in range(d):
                        z += Xv[row, j] * w[j * h + i]
                    av[i] = tanh(z)
                for k in range(c):
                    z = w[o3 + k]
                    for i in range(h):
                        z += av[i] * w[o2 + i * c + k]
                    zv[k] = z
            best = 0
            m = zv[0]
            for k in range(1, c):
                if zv[k] > m:
                    m = zv[k]
                    best = k
            if best == yv[row]:
                correct += 1
            tot = 0.0
            for k in range(c):
                tot += exp(zv[k] - m)
            loss += log(tot) - (zv[yv[row]] - m)
    return correct / <double> n, loss / n
