"""Pure-numpy implementation of the training kernels.

This is the fallback backend; `uavfl.kernels._sgd_cy` is a compiled
drop-in replacement with the same three entry points. Both backends are
deterministic: the caller supplies the shuffled index order, so a given
(params, data, order) triple always produces the same result within one
backend. Across backends results agree to float64 round-off only (BLAS
and the C loops accumulate in different orders).

Parameter vector layout, given dims = (n_features d, hidden h, n_classes c):
  h == 0:  W (d*c, row-major) | b (c)            -- multinomial logistic regression
  h  > 0:  W1 (d*h) | b1 (h) | W2 (h*c) | b2 (c) -- one tanh hidden layer
Loss is mean cross-entropy over the batch.
"""

from __future__ import annotations

import numpy as np


def _unpack(values: np.ndarray, dims: tuple[int, int, int]):
    d, h, c = dims
    if h == 0:
        w = values[: d * c].reshape(d, c)
        b = values[d * c : d * c + c]
        return (w, b)
    o1 = d * h
    o2 = o1 + h
    o3 = o2 + h * c
    return (
        values[:o1].reshape(d, h),
        values[o1:o2],
        values[o2:o3].reshape(h, c),
        values[o3 : o3 + c],
    )


def _forward(values, X, dims):
    """Return (logits, hidden activations or None)."""
    d, h, c = dims
    if h == 0:
        w, b = _unpack(values, dims)
        return X @ w + b, None
    w1, b1, w2, b2 = _unpack(values, dims)
    hidden = np.tanh(X @ w1 + b1)
    return hidden @ w2 + b2, hidden


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_grad(values, X, y, dims):
    """Mean cross-entropy loss and its gradient w.r.t. the flat params."""
    d, h, c = dims
    n = X.shape[0]
    logits, hidden = _forward(values, X, dims)
    probs = _softmax(logits)
    rows = np.arange(n)
    with np.errstate(divide="ignore"):  # p_y == 0 is reported as divergence
        loss = float(-np.log(probs[rows, y]).mean())
    dz = probs
    dz[rows, y] -= 1.0
    dz /= n
    grad = np.empty_like(values)
    if h == 0:
        grad[: d * c] = (X.T @ dz).ravel()
        grad[d * c :] = dz.sum(axis=0)
        return loss, grad
    w1, b1, w2, b2 = _unpack(values, dims)
    o1, o2, o3 = d * h, d * h + h, d * h + h + h * c
    grad[o2:o3] = (hidden.T @ dz).ravel()
    grad[o3:] = dz.sum(axis=0)
    dh = (dz @ w2.T) * (1.0 - hidden * hidden)
    grad[:o1] = (X.T @ dh).ravel()
    grad[o1:o2] = dh.sum(axis=0)
    return loss, grad


def sgd_run(values, X, y, dims, eta, order, batch_size):
    """Minibatch SGD over the pre-shuffled index matrix `order`.

    `order` has one row of sample indices per local epoch; each row is
    consumed in slices of `batch_size` (the tail batch may be short).
    Returns (new params, first epoch whose params went non-finite, or -1).
    The input array is not mutated.
    """
    w = values.copy()
    n = X.shape[0]
    for e in range(order.shape[0]):
        idx = order[e]
        ok = True
        for s in range(0, n, batch_size):
            batch = idx[s : s + batch_size]
            loss, g = loss_grad(w, X[batch], y[batch], dims)
            w -= eta * g
            ok = ok and np.isfinite(loss)
        if not ok or not np.isfinite(w).all():
            return w, e
    return w, -1


def predict_eval(values, X, y, dims):
    """(accuracy, mean cross-entropy loss) on the full set.

    Ties in the logits resolve to the lowest class index (np.argmax).
    """
    logits, _ = _forward(values, X, dims)
    probs = _softmax(logits)
    pred = np.argmax(logits, axis=1)
    acc = float(np.mean(pred == y))
    with np.errstate(divide="ignore"):
        loss = float(-np.log(probs[np.arange(X.shape[0]), y]).mean())
    return acc, loss
