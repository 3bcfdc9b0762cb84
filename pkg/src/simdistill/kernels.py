"""Hot numeric kernels: pairwise RBF sums for MMD and mixture field evaluation.

Each kernel has a pure-numpy implementation and a numba-compiled twin. The
active backend is chosen once at import: numba when it is importable and the
environment variable ``SIMDISTILL_NO_NUMBA`` is unset/empty, numpy otherwise.
Both backends implement the same math and agree to floating-point round-off
(reduction orders differ, so agreement is ~1e-12 relative, not bit-exact);
each backend on its own is deterministic. ``benchmarks/bench_kernels.py``
compares their throughput.

JIT compilation is serial with fastmath disabled: results must not depend on
thread count or on value-unsafe reassociation.
"""

from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - exercised via the env flag in tests
    if os.environ.get("SIMDISTILL_NO_NUMBA"):
        raise ImportError("numba disabled by SIMDISTILL_NO_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


# ---------------------------------------------------------------------------
# pairwise RBF sums (the O(n²) core of the MMD estimator)


def mmd_sums_numpy(X: np.ndarray, Y: np.ndarray, bandwidths: np.ndarray) -> np.ndarray:
    """Σ exp(-‖a-b‖²/(2h²)) over XX (i≠j), YY (i≠j), XY pairs, per bandwidth.

    Returns an array of shape (len(bandwidths), 3) with columns
    (sum_xx, sum_yy, sum_xy). Row blocks keep peak memory bounded.
    """
    bandwidths = np.asarray(bandwidths, dtype=np.float64)
    out = np.zeros((len(bandwidths), 3))
    denom = 2.0 * bandwidths**2

    def accumulate(A, B, col, skip_diag):
        block = 2048
        for i0 in range(0, A.shape[0], block):
            a = A[i0 : i0 + block]
            sq = np.square(a[:, None, :] - B[None, :, :]).sum(axis=2)
            if skip_diag:
                rows = np.arange(a.shape[0])
                sq[rows, i0 + rows] = np.inf  # kills the diagonal term
            for b, d2 in enumerate(denom):
                out[b, col] += np.exp(-sq / d2).sum()

    accumulate(X, X, 0, True)
    accumulate(Y, Y, 1, True)
    accumulate(X, Y, 2, False)
    return out


@njit(cache=True)
def _mmd_sums_jit(X, Y, denom):  # pragma: no cover - byte-compiled
    m, n, d = X.shape[0], Y.shape[0], X.shape[1]
    B = denom.shape[0]
    out = np.zeros((B, 3))
    for i in range(m):
        for j in range(i + 1, m):
            sq = 0.0
            for k in range(d):
                diff = X[i, k] - X[j, k]
                sq += diff * diff
            for b in range(B):
                out[b, 0] += 2.0 * np.exp(-sq / denom[b])
    for i in range(n):
        for j in range(i + 1, n):
            sq = 0.0
            for k in range(d):
                diff = Y[i, k] - Y[j, k]
                sq += diff * diff
            for b in range(B):
                out[b, 1] += 2.0 * np.exp(-sq / denom[b])
    for i in range(m):
        for j in range(n):
            sq = 0.0
            for k in range(d):
                diff = X[i, k] - Y[j, k]
                sq += diff * diff
            for b in range(B):
                out[b, 2] += np.exp(-sq / denom[b])
    return out


def mmd_sums_numba(X: np.ndarray, Y: np.ndarray, bandwidths: np.ndarray) -> np.ndarray:
    bandwidths = np.asarray(bandwidths, dtype=np.float64)
    return _mmd_sums_jit(
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(Y, dtype=np.float64),
        2.0 * bandwidths**2,
    )


# ---------------------------------------------------------------------------
# Gaussian-mixture diffused fields (log-density, score, posterior denoiser)


def gmm_fields_numpy(
    x: np.ndarray,
    means: np.ndarray,
    variances: np.ndarray,
    log_weights: np.ndarray,
    t2: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Diffused-mixture log-density, score and posterior denoiser at x.

    Args:
        x: (n, d) evaluation points.
        means: (K, d) component means.
        variances: (K,) per-component isotropic variances with the noise
            already included (signal² + t²).
        log_weights: (K,) log mixing weights.
        t2: squared noise level t², needed to split each variance back into
            signal and noise for the posterior mean E[x0 | x].

    Returns:
        (logdens (n,), score (n, d), denoiser (n, d)).
    """
    d = x.shape[1]
    diffs = x[:, None, :] - means[None, :, :]  # (n, K, d)
    sq = np.square(diffs).sum(axis=2)  # (n, K)
    logits = log_weights[None, :] - 0.5 * d * np.log(2.0 * np.pi * variances)[None, :] - sq / (2.0 * variances[None, :])
    peak = logits.max(axis=1, keepdims=True)
    w = np.exp(logits - peak)
    total = w.sum(axis=1, keepdims=True)
    logdens = (peak + np.log(total)).ravel()
    resp = w / total  # (n, K)
    score = -(resp[:, :, None] * diffs / variances[None, :, None]).sum(axis=1)
    # E[x0|x] per component: (mu*t² + x*s²)/v with s² = v - t²
    mean_coef = resp * (t2 / variances)[None, :]  # (n, K)
    x_coef = (resp * ((variances - t2) / variances)[None, :]).sum(axis=1)  # (n,)
    denoiser = mean_coef @ means + x_coef[:, None] * x
    return logdens, score, denoiser


@njit(cache=True)
def _gmm_fields_jit(x, means, variances, log_weights, t2):  # pragma: no cover
    n, d = x.shape
    K = means.shape[0]
    logdens = np.zeros(n)
    score = np.zeros((n, d))
    denoiser = np.zeros((n, d))
    logits = np.zeros(K)
    const = np.zeros(K)
    for k in range(K):
        const[k] = log_weights[k] - 0.5 * d * np.log(2.0 * np.pi * variances[k])
    for i in range(n):
        peak = -np.inf
        for k in range(K):
            sq = 0.0
            for j in range(d):
                diff = x[i, j] - means[k, j]
                sq += diff * diff
            logits[k] = const[k] - sq / (2.0 * variances[k])
            if logits[k] > peak:
                peak = logits[k]
        total = 0.0
        for k in range(K):
            logits[k] = np.exp(logits[k] - peak)
            total += logits[k]
        logdens[i] = peak + np.log(total)
        for k in range(K):
            r = logits[k] / total
            for j in range(d):
                score[i, j] -= r * (x[i, j] - means[k, j]) / variances[k]
                denoiser[i, j] += r * (means[k, j] * t2 + x[i, j] * (variances[k] - t2)) / variances[k]
    return logdens, score, denoiser


def gmm_fields_numba(x, means, variances, log_weights, t2):
    return _gmm_fields_jit(
        np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(means, dtype=np.float64),
        np.ascontiguousarray(variances, dtype=np.float64),
        np.ascontiguousarray(log_weights, dtype=np.float64),
        float(t2),
    )


USING_NUMBA = HAS_NUMBA
mmd_sums = mmd_sums_numba if USING_NUMBA else mmd_sums_numpy
gmm_fields = gmm_fields_numba if USING_NUMBA else gmm_fields_numpy


def backend_name() -> str:
    return "numba" if USING_NUMBA else "numpy"
