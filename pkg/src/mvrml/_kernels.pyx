# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twin of the NumPy reference kernels.

Semantics are defined by ``mvrml._kernels_py`` (same entry points, same
conventions); this module exists because the fused forward/backward pass is
the hot inner loop of training and the matrices are small enough that the
per-op dispatch overhead of NumPy dominates. Floating-point results may
differ from the reference in the last bits (different summation order);
``benchmarks/bench_kernels.py`` compares the two backends.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport isfinite, exp, log, sqrt

from .errors import NumericOverflowError

cnp.import_array()

BN_EPS = 1e-5
cdef double _EPS = 1e-5


cdef int _affine_t(double[:, ::1] A, double[:, ::1] WT, double[::1] b,
                   double[:, ::1] out) noexcept nogil:
    # out = A @ WT + b with WT laid out (fan_in, fan_out); the j-inner loops
    # run over contiguous rows, which the compiler vectorizes without
    # reassociating any per-element sum.
    cdef Py_ssize_t n = A.shape[0], fin = A.shape[1], fout = WT.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double a
    for i in range(n):
        for j in range(fout):
            out[i, j] = b[j]
        for k in range(fin):
            a = A[i, k]
            for j in range(fout):
                out[i, j] += a * WT[k, j]
    return 0


cdef int _all_finite(double[:, ::1] A) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(A.shape[0]):
        for j in range(A.shape[1]):
            if not isfinite(A[i, j]):
                return 0
    return 1


cdef void _batch_stats(double[:, ::1] Z, double[::1] mu,
                       double[::1] var) noexcept nogil:
    # biased variance, matching the reference kernels
    cdef Py_ssize_t n = Z.shape[0], d = Z.shape[1]
    cdef Py_ssize_t i, j
    cdef double acc, dev
    for j in range(d):
        acc = 0.0
        for i in range(n):
            acc += Z[i, j]
        mu[j] = acc / n
    for j in range(d):
        acc = 0.0
        for i in range(n):
            dev = Z[i, j] - mu[j]
            acc += dev * dev
        var[j] = acc / n
    return


cdef void _bn_relu(double[:, ::1] Z, double[::1] mu, double[::1] var,
                   double[::1] gamma, double[::1] beta, double[:, ::1] zhat,
                   double[:, ::1] out, bint keep_zhat) noexcept nogil:
    # out = relu(gamma * (Z - mu) / sqrt(var + eps) + beta)
    cdef Py_ssize_t n = Z.shape[0], d = Z.shape[1]
    cdef Py_ssize_t i, j
    cdef double inv, zh, val
    for j in range(d):
        inv = 1.0 / sqrt(var[j] + _EPS)
        for i in range(n):
            zh = (Z[i, j] - mu[j]) * inv
            if keep_zhat:
                zhat[i, j] = zh
            val = gamma[j] * zh + beta[j]
            out[i, j] = val if val > 0.0 else 0.0
    return


cdef void _relu(double[:, ::1] Z, double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(Z.shape[0]):
        for j in range(Z.shape[1]):
            out[i, j] = Z[i, j] if Z[i, j] > 0.0 else 0.0
    return


def forward_eval(X, Ws, bs, gammas, betas, means, variances):
    """Forward pass normalizing with the supplied (running) statistics."""
    cdef Py_ssize_t n_hidden = len(Ws) - 1
    cdef Py_ssize_t i
    A = np.ascontiguousarray(X, dtype=np.float64)
    WTs = [np.ascontiguousarray(W.T) for W in Ws]
    for i in range(n_hidden):
        Z = np.empty((A.shape[0], Ws[i].shape[0]))
        _affine_t(A, WTs[i], bs[i], Z)
        out = np.empty_like(Z)
        if gammas[i] is not None:
            _bn_relu(Z, means[i], variances[i], gammas[i], betas[i], Z, out, 0)
        else:
            _relu(Z, out)
        if not _all_finite(out):
            raise NumericOverflowError(i)
        A = out
    logits = np.empty((A.shape[0], Ws[n_hidden].shape[0]))
    _affine_t(A, WTs[n_hidden], bs[n_hidden], logits)
    if not _all_finite(logits):
        raise NumericOverflowError(n_hidden)
    return logits


def forward_train(X, Ws, bs, gammas, betas):
    """Forward pass normalizing with batch statistics; returns them."""
    cdef Py_ssize_t n_hidden = len(Ws) - 1
    cdef Py_ssize_t i
    A = np.ascontiguousarray(X, dtype=np.float64)
    WTs = [np.ascontiguousarray(W.T) for W in Ws]
    batch_means = [None] * n_hidden
    batch_vars = [None] * n_hidden
    for i in range(n_hidden):
        Z = np.empty((A.shape[0], Ws[i].shape[0]))
        _affine_t(A, WTs[i], bs[i], Z)
        out = np.empty_like(Z)
        if gammas[i] is not None:
            mu = np.empty(Z.shape[1])
            var = np.empty(Z.shape[1])
            _batch_stats(Z, mu, var)
            batch_means[i] = mu
            batch_vars[i] = var
            _bn_relu(Z, mu, var, gammas[i], betas[i], Z, out, 0)
        else:
            _relu(Z, out)
        if not _all_finite(out):
            raise NumericOverflowError(i)
        A = out
    logits = np.empty((A.shape[0], Ws[n_hidden].shape[0]))
    _affine_t(A, WTs[n_hidden], bs[n_hidden], logits)
    if not _all_finite(logits):
        raise NumericOverflowError(n_hidden)
    return logits, batch_means, batch_vars


cdef double _softmax_grad(double[:, ::1] logits, cnp.int64_t[::1] y,
                          double[:, ::1] dlogits) noexcept nogil:
    # mean cross-entropy; dlogits = (softmax - onehot) / n
    cdef Py_ssize_t n = logits.shape[0], k = logits.shape[1]
    cdef Py_ssize_t i, j
    cdef double zmax, sez, loss, inv_n
    loss = 0.0
    inv_n = 1.0 / n
    for i in range(n):
        zmax = logits[i, 0]
        for j in range(1, k):
            if logits[i, j] > zmax:
                zmax = logits[i, j]
        sez = 0.0
        for j in range(k):
            dlogits[i, j] = exp(logits[i, j] - zmax)
            sez += dlogits[i, j]
        loss += log(sez) - (logits[i, y[i]] - zmax)
        for j in range(k):
            dlogits[i, j] = dlogits[i, j] / sez * inv_n
        dlogits[i, y[i]] -= inv_n
    return loss * inv_n


cdef int _grad_matmuls(double[:, ::1] dZ, double[:, ::1] A_prev,
                       double[:, ::1] gW, double[::1] gb) noexcept nogil:
    # gW = dZ.T @ A_prev ; gb = column sums of dZ
    cdef Py_ssize_t n = dZ.shape[0], fout = dZ.shape[1], fin = A_prev.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double d
    for j in range(fout):
        gb[j] = 0.0
        for k in range(fin):
            gW[j, k] = 0.0
    for i in range(n):
        for j in range(fout):
            d = dZ[i, j]
            gb[j] += d
            for k in range(fin):
                gW[j, k] += d * A_prev[i, k]
    return 0


cdef int _backprop_input(double[:, ::1] dZ, double[:, ::1] W,
                         double[:, ::1] dA) noexcept nogil:
    # dA = dZ @ W
    cdef Py_ssize_t n = dZ.shape[0], fout = dZ.shape[1], fin = W.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double d
    for i in range(n):
        for k in range(fin):
            dA[i, k] = 0.0
        for j in range(fout):
            d = dZ[i, j]
            for k in range(fin):
                dA[i, k] += d * W[j, k]
    return 0


cdef int _mask_backward(double[:, ::1] dA, double[:, ::1] act,
                        double[:, ::1] dpost) noexcept nogil:
    # relu backward using the post-activation values (act > 0 <=> pre > 0)
    cdef Py_ssize_t i, j
    for i in range(dA.shape[0]):
        for j in range(dA.shape[1]):
            dpost[i, j] = dA[i, j] if act[i, j] > 0.0 else 0.0
    return 0


cdef int _bn_backward(double[:, ::1] dpost, double[:, ::1] zhat,
                      double[::1] gamma, double[::1] var, double[::1] ggamma,
                      double[::1] gbeta, double[:, ::1] dZ) noexcept nogil:
    # batch statistics are constants under differentiation
    cdef Py_ssize_t n = dpost.shape[0], d = dpost.shape[1]
    cdef Py_ssize_t i, j
    cdef double sb, sg, scale
    for j in range(d):
        sb = 0.0
        sg = 0.0
        for i in range(n):
            sb += dpost[i, j]
            sg += dpost[i, j] * zhat[i, j]
        gbeta[j] = sb
        ggamma[j] = sg
        scale = gamma[j] / sqrt(var[j] + _EPS)
        for i in range(n):
            dZ[i, j] = dpost[i, j] * scale
    return 0


def loss_grad(X, y, Ws, bs, gammas, betas, gWs, gbs, ggammas, gbetas):
    """Train-mode loss and parameter gradients into the caller's views."""
    cdef Py_ssize_t n_hidden = len(Ws) - 1
    cdef Py_ssize_t i
    A = np.ascontiguousarray(X, dtype=np.float64)
    WTs = [np.ascontiguousarray(W.T) for W in Ws]
    labels = np.ascontiguousarray(y, dtype=np.int64)
    acts = [A]
    zhats = [None] * n_hidden
    batch_means = [None] * n_hidden
    batch_vars = [None] * n_hidden

    for i in range(n_hidden):
        Z = np.empty((A.shape[0], Ws[i].shape[0]))
        _affine_t(A, WTs[i], bs[i], Z)
        out = np.empty_like(Z)
        if gammas[i] is not None:
            mu = np.empty(Z.shape[1])
            var = np.empty(Z.shape[1])
            _batch_stats(Z, mu, var)
            batch_means[i] = mu
            batch_vars[i] = var
            zh = np.empty_like(Z)
            _bn_relu(Z, mu, var, gammas[i], betas[i], zh, out, 1)
            zhats[i] = zh
        else:
            _relu(Z, out)
        if not _all_finite(out):
            raise NumericOverflowError(i)
        A = out
        acts.append(A)
    logits = np.empty((A.shape[0], Ws[n_hidden].shape[0]))
    _affine_t(A, WTs[n_hidden], bs[n_hidden], logits)
    if not _all_finite(logits):
        raise NumericOverflowError(n_hidden)

    dZ = np.empty_like(logits)
    cdef double loss = _softmax_grad(logits, labels, dZ)
    _grad_matmuls(dZ, acts[n_hidden], gWs[n_hidden], gbs[n_hidden])
    dA = np.empty((logits.shape[0], Ws[n_hidden].shape[1]))
    _backprop_input(dZ, Ws[n_hidden], dA)
    for i in range(n_hidden - 1, -1, -1):
        dpost = np.empty_like(dA)
        _mask_backward(dA, acts[i + 1], dpost)
        if gammas[i] is not None:
            dZ = np.empty_like(dpost)
            _bn_backward(dpost, zhats[i], gammas[i], batch_vars[i],
                         ggammas[i], gbetas[i], dZ)
        else:
            dZ = dpost
        _grad_matmuls(dZ, acts[i], gWs[i], gbs[i])
        if i > 0:
            dA = np.empty((dZ.shape[0], Ws[i].shape[1]))
            _backprop_input(dZ, Ws[i], dA)
    return loss, batch_means, batch_vars
