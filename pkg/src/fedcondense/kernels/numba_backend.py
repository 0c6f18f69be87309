"""Numba-compiled versions of the hot kernels.

Same contracts as numpy_backend; explicit loops instead of vectorized temps.
No fastmath so both backends stay bit-comparable on the sort/threshold paths.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def sparsemax(z: np.ndarray) -> np.ndarray:
    n = z.shape[0]
    zs = np.sort(z)[::-1]
    cumsum = 0.0
    k = 0
    tau = 0.0
    for i in range(n):
        cumsum += zs[i]
        if (i + 1) * zs[i] > cumsum - 1.0:
            k = i + 1
            tau = (cumsum - 1.0) / k
    out = np.empty(n)
    for i in range(n):
        v = z[i] - tau
        out[i] = v if v > 0.0 else 0.0
    return out


@njit(cache=True)
def entmax15(z: np.ndarray) -> np.ndarray:
    n = z.shape[0]
    x = z / 2.0
    hi = x[0]
    for i in range(1, n):
        if x[i] > hi:
            hi = x[i]
    lo = hi - 1.0
    for _ in range(64):
        tau = 0.5 * (lo + hi)
        s = 0.0
        for i in range(n):
            v = x[i] - tau
            if v > 0.0:
                s += v * v
        if s >= 1.0:
            lo = tau
        else:
            hi = tau
    p = np.empty(n)
    total = 0.0
    for i in range(n):
        v = x[i] - lo
        p[i] = v * v if v > 0.0 else 0.0
        total += p[i]
    for i in range(n):
        p[i] /= total
    return p


@njit(cache=True)
def top_b_renormalize(p: np.ndarray, b: int) -> np.ndarray:
    n = p.shape[0]
    nnz = 0
    for i in range(n):
        if p[i] != 0.0:
            nnz += 1
    if nnz <= b:
        return p.copy()
    order = np.argsort(-p, kind="mergesort")
    out = np.zeros(n)
    mass = 0.0
    for j in range(b):
        mass += p[order[j]]
    for j in range(b):
        idx = order[j]
        out[idx] = p[idx] / mass
    return out


@njit(cache=True)
def ista_solve(
    xc: np.ndarray,
    support: np.ndarray,
    penalty: np.ndarray,
    alpha: float,
    eta: float,
    iters: int,
) -> tuple[np.ndarray, np.ndarray]:
    k = xc.shape[1]
    z = np.zeros((k, k))
    hist = np.empty(iters + 1)

    resid = xc - np.dot(xc, z)
    obj = alpha * np.sum(resid * resid)
    hist[0] = obj

    for it in range(iters):
        grad = 2.0 * alpha * np.dot(xc.T, np.dot(xc, z) - xc)
        for i in range(k):
            for j in range(k):
                if i == j or not support[i, j]:
                    z[i, j] = 0.0
                    continue
                v = z[i, j] - eta * grad[i, j]
                thr = eta * penalty[i, j]
                if v > thr:
                    z[i, j] = v - thr
                elif v < -thr:
                    z[i, j] = v + thr
                else:
                    z[i, j] = 0.0
        resid = xc - np.dot(xc, z)
        obj = alpha * np.sum(resid * resid)
        for i in range(k):
            for j in range(k):
                if z[i, j] != 0.0:
                    obj += penalty[i, j] * abs(z[i, j])
        hist[it + 1] = obj
    return z, hist
