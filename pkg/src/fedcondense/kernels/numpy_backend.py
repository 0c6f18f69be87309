"""Pure-numpy reference implementations of the hot kernels.

Semantics here are the contract; the numba backend must agree with these to
floating-point noise. Keep the two files in sync.
"""

from __future__ import annotations

import numpy as np


def sparsemax(z: np.ndarray) -> np.ndarray:
    """Euclidean projection of a score vector onto the probability simplex.

    Exact sort-and-threshold algorithm: with z sorted descending, the support
    size is the largest k with 1 + k*z_(k) > sum_{j<=k} z_(j), the threshold
    is tau = (sum of the top-k scores - 1) / k, and p = max(z - tau, 0).
    """
    z = np.asarray(z, dtype=np.float64)
    zs = np.sort(z)[::-1]
    cssv = np.cumsum(zs) - 1.0
    rho = np.arange(1, z.size + 1)
    support = rho * zs > cssv
    k = int(np.count_nonzero(support))
    tau = cssv[k - 1] / k
    return np.maximum(z - tau, 0.0)


def entmax15(z: np.ndarray) -> np.ndarray:
    """1.5-entmax via bisection on the threshold, tolerance well below 1e-9.

    p_i = max(z_i/2 - tau, 0)^2 with tau chosen so the weights sum to one.
    """
    x = np.asarray(z, dtype=np.float64) / 2.0
    hi = float(np.max(x))
    lo = hi - 1.0
    for _ in range(64):
        tau = 0.5 * (lo + hi)
        s = float(np.sum(np.maximum(x - tau, 0.0) ** 2))
        if s >= 1.0:
            lo = tau
        else:
            hi = tau
    p = np.maximum(x - lo, 0.0) ** 2
    return p / p.sum()


def top_b_renormalize(p: np.ndarray, b: int) -> np.ndarray:
    """Keep the b largest entries of a probability vector and renormalize.

    Ties break toward the lower index. If p already has at most b nonzeros it
    is returned unchanged (no renormalization).
    """
    p = np.asarray(p, dtype=np.float64)
    if int(np.count_nonzero(p)) <= b:
        return p.copy()
    order = np.argsort(-p, kind="stable")
    out = np.zeros_like(p)
    keep = order[:b]
    mass = p[keep].sum()
    if mass <= 0.0:
        raise ValueError("top-b truncation left zero mass; input was not a distribution")
    out[keep] = p[keep] / mass
    return out


def ista_solve(
    xc: np.ndarray,
    support: np.ndarray,
    penalty: np.ndarray,
    alpha: float,
    eta: float,
    iters: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Masked proximal-gradient solve of the sparse self-expression objective.

    xc is d x K with samples as columns; support is a K x K boolean candidate
    mask (diagonal excluded); penalty holds the per-entry L1 weights. Returns
    the coefficient matrix and the objective value before each iterate and
    after the last (length iters + 1).
    """
    xc = np.asarray(xc, dtype=np.float64)
    k = xc.shape[1]
    mask = support & ~np.eye(k, dtype=bool)
    z = np.zeros((k, k))
    hist = np.empty(iters + 1)

    def objective(zm: np.ndarray) -> float:
        resid = xc - xc @ zm
        return alpha * float(np.sum(resid * resid)) + float(np.sum(penalty * np.abs(zm)))

    hist[0] = objective(z)
    for it in range(iters):
        grad = 2.0 * alpha * (xc.T @ (xc @ z - xc))
        z = z - eta * grad
        z = np.sign(z) * np.maximum(np.abs(z) - eta * penalty, 0.0)
        z[~mask] = 0.0
        hist[it + 1] = objective(z)
    return z, hist
