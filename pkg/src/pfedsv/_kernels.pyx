# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: forward pass, metrics, gradients, and one SGD epoch.

Drop-in twin of pfedsv._kernels_py; see that module for the parameter layout.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()

PROB_FLOOR = 1e-12

BACKEND_NAME = "cython"


cdef void _logits_linear(const double[::1] theta, const double[:, ::1] x,
                         double[:, ::1] out, Py_ssize_t d, Py_ssize_t c) noexcept nogil:
    cdef Py_ssize_t r, k, j
    cdef Py_ssize_t n = x.shape[0]
    cdef double acc
    for r in range(n):
        for j in range(c):
            acc = theta[d * c + j]            # bias
            for k in range(d):
                acc += x[r, k] * theta[k * c + j]
            out[r, j] = acc


cdef void _logits_mlp(const double[::1] theta, const double[:, ::1] x,
                      double[:, ::1] pre, double[:, ::1] hid, double[:, ::1] out,
                      Py_ssize_t d, Py_ssize_t h, Py_ssize_t c) noexcept nogil:
    cdef Py_ssize_t r, k, j, q
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t w1 = 0, b1 = d * h, w2 = d * h + h, b2 = d * h + h + h * c
    cdef double acc
    for r in range(n):
        for j in range(h):
            acc = theta[b1 + j]
            for k in range(d):
                acc += x[r, k] * theta[w1 + k * h + j]
            pre[r, j] = acc
            hid[r, j] = acc if acc > 0.0 else 0.0
        for q in range(c):
            acc = theta[b2 + q]
            for j in range(h):
                acc += hid[r, j] * theta[w2 + j * c + q]
            out[r, q] = acc


cdef double _softmax_rows(double[:, ::1] logits, double[:, ::1] probs,
                          const cnp.int64_t[::1] labels, double floor_p) noexcept nogil:
    # Fills probs with row softmax (max-subtracted) and returns the summed
    # cross-entropy over rows.
    cdef Py_ssize_t n = logits.shape[0]
    cdef Py_ssize_t c = logits.shape[1]
    cdef Py_ssize_t r, j
    cdef double m, s, p, total = 0.0
    for r in range(n):
        m = logits[r, 0]
        for j in range(1, c):
            if logits[r, j] > m:
                m = logits[r, j]
        s = 0.0
        for j in range(c):
            probs[r, j] = exp(logits[r, j] - m)
            s += probs[r, j]
        for j in range(c):
            probs[r, j] /= s
        p = probs[r, labels[r]]
        if p < floor_p:
            p = floor_p
        total += -log(p)
    return total


def forward_logits(theta, features, input_dim, hidden_dim, num_classes):
    cdef Py_ssize_t d = input_dim, h = hidden_dim, c = num_classes
    x = np.ascontiguousarray(features, dtype=np.float64)
    t = np.ascontiguousarray(theta, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0]
    out = np.empty((n, c), dtype=np.float64)
    if h == 0:
        _logits_linear(t, x, out, d, c)
    else:
        pre = np.empty((n, h), dtype=np.float64)
        hid = np.empty((n, h), dtype=np.float64)
        _logits_mlp(t, x, pre, hid, out, d, h, c)
    return out


def eval_metrics(theta, features, labels, input_dim, hidden_dim, num_classes):
    """Return (accuracy, mean cross-entropy). Argmax ties go to the lowest class."""
    cdef Py_ssize_t d = input_dim, h = hidden_dim, c = num_classes
    x = np.ascontiguousarray(features, dtype=np.float64)
    y = np.ascontiguousarray(labels, dtype=np.int64)
    logits = forward_logits(theta, x, input_dim, hidden_dim, num_classes)
    cdef double[:, ::1] lg = logits
    cdef cnp.int64_t[::1] yv = y
    cdef Py_ssize_t n = lg.shape[0]
    probs = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] pv = probs
    cdef double total = _softmax_rows(lg, pv, yv, PROB_FLOOR)
    cdef Py_ssize_t r, j, best
    cdef long correct = 0
    cdef double m
    for r in range(n):
        best = 0
        m = lg[r, 0]
        for j in range(1, c):
            if lg[r, j] > m:
                m = lg[r, j]
                best = j
        if best == yv[r]:
            correct += 1
    return correct / <double> n, total / <double> n


cdef double _loss_grad(const double[::1] theta, const double[:, ::1] x,
                       const cnp.int64_t[::1] y, double[::1] grad,
                       double[:, ::1] pre, double[:, ::1] hid,
                       double[:, ::1] logits, double[:, ::1] probs,
                       double[:, ::1] dhid,
                       Py_ssize_t d, Py_ssize_t h, Py_ssize_t c) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t r, k, j, q
    cdef double total, acc
    cdef Py_ssize_t w1 = 0, b1 = d * h, w2 = d * h + h, b2 = d * h + h + h * c
    if h == 0:
        _logits_linear(theta, x, logits, d, c)
    else:
        _logits_mlp(theta, x, pre, hid, logits, d, h, c)
    total = _softmax_rows(logits, probs, y, 1e-12)
    # probs -> delta = (softmax - onehot) / n
    for r in range(n):
        probs[r, y[r]] -= 1.0
        for j in range(c):
            probs[r, j] /= <double> n
    if h == 0:
        for k in range(d):
            for j in range(c):
                acc = 0.0
                for r in range(n):
                    acc += x[r, k] * probs[r, j]
                grad[k * c + j] = acc
        for j in range(c):
            acc = 0.0
            for r in range(n):
                acc += probs[r, j]
            grad[d * c + j] = acc
        return total / <double> n
    # hidden-layer backward
    for r in range(n):
        for j in range(h):
            if pre[r, j] > 0.0:
                acc = 0.0
                for q in range(c):
                    acc += probs[r, q] * theta[w2 + j * c + q]
                dhid[r, j] = acc
            else:
                dhid[r, j] = 0.0
    for k in range(d):
        for j in range(h):
            acc = 0.0
            for r in range(n):
                acc += x[r, k] * dhid[r, j]
            grad[w1 + k * h + j] = acc
    for j in range(h):
        acc = 0.0
        for r in range(n):
            acc += dhid[r, j]
        grad[b1 + j] = acc
    for j in range(h):
        for q in range(c):
            acc = 0.0
            for r in range(n):
                acc += hid[r, j] * probs[r, q]
            grad[w2 + j * c + q] = acc
    for q in range(c):
        acc = 0.0
        for r in range(n):
            acc += probs[r, q]
        grad[b2 + q] = acc
    return total / <double> n


def loss_and_grad(theta, features, labels, input_dim, hidden_dim, num_classes):
    """Mean cross-entropy over the batch and its gradient w.r.t. theta."""
    cdef Py_ssize_t d = input_dim, h = hidden_dim, c = num_classes
    x = np.ascontiguousarray(features, dtype=np.float64)
    y = np.ascontiguousarray(labels, dtype=np.int64)
    t = np.ascontiguousarray(theta, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0]
    grad = np.empty_like(t)
    pre = np.empty((n, h if h > 0 else 1), dtype=np.float64)
    hid = np.empty_like(pre)
    logits = np.empty((n, c), dtype=np.float64)
    probs = np.empty((n, c), dtype=np.float64)
    dhid = np.empty_like(pre)
    cdef double loss = _loss_grad(t, x, y, grad, pre, hid, logits, probs, dhid, d, h, c)
    return loss, grad


def sgd_epoch(theta, features, labels, order, lr, batch_size, input_dim, hidden_dim, num_classes):
    """One epoch of minibatch SGD in the given visit order; theta updated in place.

    Returns the sample-weighted mean minibatch loss for the epoch.
    """
    cdef Py_ssize_t d = input_dim, h = hidden_dim, c = num_classes
    cdef double step = lr
    cdef Py_ssize_t bs = batch_size
    x = np.ascontiguousarray(features, dtype=np.float64)
    y = np.ascontiguousarray(labels, dtype=np.int64)
    idx = np.ascontiguousarray(order, dtype=np.int64)
    cdef double[::1] tv = theta
    cdef double[:, ::1] xv = x
    cdef cnp.int64_t[::1] yv = y
    cdef cnp.int64_t[::1] ov = idx
    cdef Py_ssize_t n = xv.shape[0]
    cdef Py_ssize_t nparam = tv.shape[0]

    cdef Py_ssize_t hb = h if h > 0 else 1
    cdef double[:, ::1] xbv = np.empty((bs, d), dtype=np.float64)
    cdef cnp.int64_t[::1] ybv = np.empty(bs, dtype=np.int64)
    cdef double[::1] gv = np.empty(nparam, dtype=np.float64)
    cdef double[:, ::1] pre = np.empty((bs, hb), dtype=np.float64)
    cdef double[:, ::1] hid = np.empty((bs, hb), dtype=np.float64)
    cdef double[:, ::1] logits = np.empty((bs, c), dtype=np.float64)
    cdef double[:, ::1] probs = np.empty((bs, c), dtype=np.float64)
    cdef double[:, ::1] dhid = np.empty((bs, hb), dtype=np.float64)

    cdef Py_ssize_t start, m, r, k, p
    cdef double loss, total = 0.0
    with nogil:
        start = 0
        while start < n:
            m = bs if start + bs <= n else n - start
            for r in range(m):
                p = ov[start + r]
                for k in range(d):
                    xbv[r, k] = xv[p, k]
                ybv[r] = yv[p]
            loss = _loss_grad(tv, xbv[:m], ybv[:m], gv,
                              pre[:m], hid[:m], logits[:m], probs[:m], dhid[:m],
                              d, h, c)
            for k in range(nparam):
                tv[k] -= step * gv[k]
            total += loss * m
            start += bs
    return total / <double> n
