"""Local SGD inner loops: numba-compiled kernels plus a pure-numpy fallback.

``FEDSEL_NUMBA=0`` forces the numpy path. Both paths run the same batch
schedule; they agree to rounding, not bit for bit.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit
    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("FEDSEL_NUMBA", "1") not in ("0", "false", "off")


def unpack(values, n_features, n_classes, hidden):
    """Views into the flat parameter vector: (W1, b1, W2, b2) or (W, b)."""
    if hidden == 0:
        w_end = n_features * n_classes
        return values[:w_end].reshape(n_features, n_classes), values[w_end:w_end + n_classes]
    a = n_features * hidden
    b = a + hidden
    c = b + hidden * n_classes
    return (values[:a].reshape(n_features, hidden), values[a:b],
            values[b:c].reshape(hidden, n_classes), values[c:c + n_classes])


def _softmax_rows(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=1, keepdims=True)
    return z - np.log(s), e / s


def loss_grad_numpy(values, x, y, n_features, n_classes, hidden):
    n = len(y)
    grad = np.empty_like(values)
    rows = np.arange(n)
    if hidden == 0:
        w, b = unpack(values, n_features, n_classes, 0)
        logp, p = _softmax_rows(x @ w + b)
        loss = -logp[rows, y].mean()
        p[rows, y] -= 1.0
        p /= n
        gw, gb = unpack(grad, n_features, n_classes, 0)
        np.matmul(x.T, p, out=gw)
        gb[:] = p.sum(axis=0)
        return loss, grad
    w1, b1, w2, b2 = unpack(values, n_features, n_classes, hidden)
    h = np.tanh(x @ w1 + b1)
    logp, p = _softmax_rows(h @ w2 + b2)
    loss = -logp[rows, y].mean()
    p[rows, y] -= 1.0
    p /= n
    gw1, gb1, gw2, gb2 = unpack(grad, n_features, n_classes, hidden)
    np.matmul(h.T, p, out=gw2)
    gb2[:] = p.sum(axis=0)
    dh = (p @ w2.T) * (1.0 - h * h)
    np.matmul(x.T, dh, out=gw1)
    gb1[:] = dh.sum(axis=0)
    return loss, grad


def sgd_numpy(values, x, y, orders, lr, batch_size, n_features, n_classes, hidden):
    for order in orders:
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            _, g = loss_grad_numpy(values, x[idx], y[idx], n_features, n_classes, hidden)
            values -= lr * g
    return values


if HAS_NUMBA:

    @njit(cache=True, nogil=True)
    def _softmax_step(values, x, y, idx, lr, n_features, n_classes):
        m = idx.shape[0]
        w_end = n_features * n_classes
        grad = np.zeros(values.shape[0])
        logits = np.empty(n_classes)
        for r in range(m):
            row = idx[r]
            for c in range(n_classes):
                acc = values[w_end + c]
                for f in range(n_features):
                    acc += x[row, f] * values[f * n_classes + c]
                logits[c] = acc
            mx = logits.max()
            s = 0.0
            for c in range(n_classes):
                logits[c] = np.exp(logits[c] - mx)
                s += logits[c]
            for c in range(n_classes):
                d = logits[c] / s
                if c == y[row]:
                    d -= 1.0
                d /= m
                grad[w_end + c] += d
                for f in range(n_features):
                    grad[f * n_classes + c] += x[row, f] * d
        for j in range(values.shape[0]):
            values[j] -= lr * grad[j]

    @njit(cache=True, nogil=True)
    def _hidden_step(values, x, y, idx, lr, n_features, n_classes, hidden):
        m = idx.shape[0]
        a = n_features * hidden
        b = a + hidden
        c_off = b + hidden * n_classes
        grad = np.zeros(values.shape[0])
        h = np.empty(hidden)
        p = np.empty(n_classes)
        dh = np.empty(hidden)
        for r in range(m):
            row = idx[r]
            for u in range(hidden):
                h[u] = values[a + u]
            for f in range(n_features):
                xf = x[row, f]
                base = f * hidden
                for u in range(hidden):
                    h[u] += xf * values[base + u]
            for u in range(hidden):
                h[u] = np.tanh(h[u])
            for c in range(n_classes):
                p[c] = values[c_off + c]
            for u in range(hidden):
                hu = h[u]
                base = b + u * n_classes
                for c in range(n_classes):
                    p[c] += hu * values[base + c]
            mx = p.max()
            s = 0.0
            for c in range(n_classes):
                p[c] = np.exp(p[c] - mx)
                s += p[c]
            for c in range(n_classes):
                p[c] = p[c] / s
                if c == y[row]:
                    p[c] -= 1.0
                p[c] /= m
                grad[c_off + c] += p[c]
            for u in range(hidden):
                acc = 0.0
                base = b + u * n_classes
                for c in range(n_classes):
                    grad[base + c] += h[u] * p[c]
                    acc += p[c] * values[base + c]
                dh[u] = acc * (1.0 - h[u] * h[u])
                grad[a + u] += dh[u]
            for f in range(n_features):
                xf = x[row, f]
                base = f * hidden
                for u in range(hidden):
                    grad[base + u] += xf * dh[u]
        for j in range(values.shape[0]):
            values[j] -= lr * grad[j]

    @njit(cache=True, nogil=True)
    def sgd_numba(values, x, y, orders, lr, batch_size, n_features, n_classes, hidden):
        n = orders.shape[1]
        for e in range(orders.shape[0]):
            for start in range(0, n, batch_size):
                stop = min(start + batch_size, n)
                idx = orders[e, start:stop]
                if hidden == 0:
                    _softmax_step(values, x, y, idx, lr, n_features, n_classes)
                else:
                    _hidden_step(values, x, y, idx, lr, n_features, n_classes, hidden)
        return values

else:  # pragma: no cover
    sgd_numba = None


def run_sgd(values, x, y, orders, lr, batch_size, n_features, n_classes, hidden,
            backend=None):
    """Run every epoch in ``orders`` (shape epochs x n) in place on ``values``."""
    if backend is None:
        backend = "numba" if USE_NUMBA else "numpy"
    if backend == "numba":
        if sgd_numba is None:
            raise RuntimeError("numba backend requested but numba is not installed")
        return sgd_numba(values, x, y, orders, float(lr), int(batch_size),
                         n_features, n_classes, hidden)
    return sgd_numpy(values, x, y, orders, lr, batch_size, n_features, n_classes, hidden)
