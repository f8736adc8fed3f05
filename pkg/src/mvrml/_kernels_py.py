"""Reference NumPy implementation of the dense-network kernels.

The compiled extension ``mvrml._kernels`` implements the same three entry
points; ``mvrml._backend`` selects one at import time. Both backends follow
the conventions below and the test suite cross-checks them on random inputs.

Conventions
-----------
* float64 everywhere; weight matrices have shape ``(fan_out, fan_in)`` and a
  layer computes ``A @ W.T + b``.
* Hidden layers run affine -> (optional batch norm) -> ReLU; the final layer
  is affine only and its output is the logits.
* Batch normalization uses the biased variance and ``BN_EPS`` inside the
  square root. Train-mode normalization uses the statistics of the current
  batch; eval mode uses the running statistics supplied by the caller.
* Gradients treat batch statistics as constants: the differentiated loss
  keeps the normalizing mean/variance frozen at their values for the nominal
  parameters. The finite-difference oracle in ``nn_core`` probes exactly
  that function, so the two agree to first order.
* Cross-entropy is the mean over the batch, computed via a max-subtracted
  log-sum-exp.

Per-layer parameter lists use ``None`` entries for hidden layers without
batch normalization (``gammas``/``betas`` and the per-layer statistics).
"""

from __future__ import annotations

import numpy as np

from .errors import NumericOverflowError

BN_EPS = 1e-5


def _check_finite(arr: np.ndarray, layer_index: int) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericOverflowError(layer_index)


def _affine(A, W, b):
    return A @ W.T + b


def forward_eval(X, Ws, bs, gammas, betas, means, variances):
    """Forward pass normalizing with the supplied (running) statistics."""
    A = X
    n_hidden = len(Ws) - 1
    for i in range(n_hidden):
        Z = _affine(A, Ws[i], bs[i])
        if gammas[i] is not None:
            Zh = (Z - means[i]) / np.sqrt(variances[i] + BN_EPS)
            Z = gammas[i] * Zh + betas[i]
        A = np.maximum(Z, 0.0)
        _check_finite(A, i)
    logits = _affine(A, Ws[-1], bs[-1])
    _check_finite(logits, n_hidden)
    return logits


def forward_train(X, Ws, bs, gammas, betas):
    """Forward pass normalizing with batch statistics.

    Returns ``(logits, batch_means, batch_vars)`` where the statistics lists
    carry ``None`` for hidden layers without batch norm.
    """
    A = X
    n_hidden = len(Ws) - 1
    batch_means: list = [None] * n_hidden
    batch_vars: list = [None] * n_hidden
    for i in range(n_hidden):
        Z = _affine(A, Ws[i], bs[i])
        if gammas[i] is not None:
            mu = Z.mean(axis=0)
            var = Z.var(axis=0)
            batch_means[i] = mu
            batch_vars[i] = var
            Zh = (Z - mu) / np.sqrt(var + BN_EPS)
            Z = gammas[i] * Zh + betas[i]
        A = np.maximum(Z, 0.0)
        _check_finite(A, i)
    logits = _affine(A, Ws[-1], bs[-1])
    _check_finite(logits, n_hidden)
    return logits, batch_means, batch_vars


def _softmax_grad(logits, y):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    zmax = logits.max(axis=1, keepdims=True)
    ez = np.exp(logits - zmax)
    sez = ez.sum(axis=1, keepdims=True)
    rows = np.arange(logits.shape[0])
    log_probs = (logits - zmax) - np.log(sez)
    loss = -log_probs[rows, y].mean()
    dlogits = ez / sez
    dlogits[rows, y] -= 1.0
    dlogits /= logits.shape[0]
    return loss, dlogits


def loss_grad(X, y, Ws, bs, gammas, betas, gWs, gbs, ggammas, gbetas):
    """Train-mode loss and parameter gradients.

    Fills the caller-allocated gradient views and returns
    ``(loss, batch_means, batch_vars)``.
    """
    n_hidden = len(Ws) - 1
    acts = [X]          # layer inputs A_{i-1}
    zhats: list = [None] * n_hidden
    batch_means: list = [None] * n_hidden
    batch_vars: list = [None] * n_hidden
    masks: list = [None] * n_hidden

    A = X
    for i in range(n_hidden):
        Z = _affine(A, Ws[i], bs[i])
        if gammas[i] is not None:
            mu = Z.mean(axis=0)
            var = Z.var(axis=0)
            batch_means[i] = mu
            batch_vars[i] = var
            Zh = (Z - mu) / np.sqrt(var + BN_EPS)
            zhats[i] = Zh
            Z = gammas[i] * Zh + betas[i]
        masks[i] = Z > 0.0
        A = np.maximum(Z, 0.0)
        _check_finite(A, i)
        acts.append(A)
    logits = _affine(A, Ws[-1], bs[-1])
    _check_finite(logits, n_hidden)

    loss, dZ = _softmax_grad(logits, y)
    gWs[-1][...] = dZ.T @ acts[-1]
    gbs[-1][...] = dZ.sum(axis=0)
    dA = dZ @ Ws[-1]
    for i in range(n_hidden - 1, -1, -1):
        dpost = dA * masks[i]
        if gammas[i] is not None:
            gbetas[i][...] = dpost.sum(axis=0)
            ggammas[i][...] = (dpost * zhats[i]).sum(axis=0)
            dZ = dpost * (gammas[i] / np.sqrt(batch_vars[i] + BN_EPS))
        else:
            dZ = dpost
        gWs[i][...] = dZ.T @ acts[i]
        gbs[i][...] = dZ.sum(axis=0)
        if i > 0:
            dA = dZ @ Ws[i]
    return loss, batch_means, batch_vars
