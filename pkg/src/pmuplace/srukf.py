"""Square-root unscented Kalman filter with Merwe scaled sigma points.

The filter propagates a lower-triangular Cholesky factor of the state
covariance.  Predicted and updated factors come from thin QR of weighted
sigma-point deviations stacked with the noise factor, followed by a rank-1
Cholesky update (or downdate, since the centre weight is negative for small
alpha).  State-transition and measurement functions must accept batched
states of shape (2n+1, n).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import FilterDiverged


@dataclass(frozen=True)
class SigmaPointParams:
    """Scaled-unscented-transform parameters."""

    alpha: float = 1e-3
    beta: float = 2.0
    kappa: float = 0.0

    def weights(self, n: int):
        lam = self.alpha ** 2 * (n + self.kappa) - n
        gamma = np.sqrt(n + lam)
        wm = np.full(2 * n + 1, 0.5 / (n + lam))
        wc = wm.copy()
        wm[0] = lam / (n + lam)
        wc[0] = wm[0] + 1.0 - self.alpha ** 2 + self.beta
        return wm, wc, gamma


def sigma_points(x: np.ndarray, s_lower: np.ndarray,
                 gamma: float) -> np.ndarray:
    """2n+1 sigma points around x for a lower Cholesky factor."""
    n = x.size
    pts = np.empty((2 * n + 1, n))
    pts[0] = x
    spread = gamma * s_lower.T  # row k is gamma * column k of S
    pts[1:n + 1] = x + spread
    pts[n + 1:] = x - spread
    return pts


def cholesky_update(l_factor: np.ndarray, v: np.ndarray,
                    coeff: float) -> np.ndarray:
    """Rank-1 update of a lower Cholesky factor: L L^T + coeff * v v^T.

    Negative ``coeff`` performs a downdate and raises ``FilterDiverged``
    when the result would not be positive definite.
    """
    n = v.size
    l_new = l_factor.copy()
    work = np.sqrt(abs(coeff)) * np.asarray(v, dtype=float).copy()
    sign = 1.0 if coeff >= 0 else -1.0
    for k in range(n):
        lkk = l_new[k, k]
        r2 = lkk * lkk + sign * work[k] * work[k]
        if r2 <= 0.0 or not np.isfinite(r2):
            raise FilterDiverged(
                f"Cholesky downdate lost positive definiteness at row {k}")
        r = np.sqrt(r2)
        c = r / lkk
        s = work[k] / lkk
        l_new[k, k] = r
        if k + 1 < n:
            tail = l_new[k + 1:, k]
            l_new[k + 1:, k] = (tail + sign * s * work[k + 1:]) / c
            work[k + 1:] = c * work[k + 1:] - s * l_new[k + 1:, k]
    return l_new


def _qr_factor(dev_rows: np.ndarray, noise_chol: np.ndarray) -> np.ndarray:
    """Lower factor from stacked deviation rows plus a noise factor."""
    stacked = np.vstack([dev_rows, noise_chol.T])
    r_fact = np.linalg.qr(stacked, mode="r")
    lower = r_fact.T.copy()
    # canonical positive diagonal (QR sign ambiguity)
    signs = np.sign(np.diag(lower))
    signs[signs == 0] = 1.0
    lower *= signs[None, :]
    return lower


class SquareRootUKF:
    """SRUKF over generic batched transition and measurement functions.

    ``f`` maps (2n+1, n) sigma states to their successors; ``h`` maps them
    to (2n+1, p) predicted measurements.  ``q_chol`` and ``r_chol`` are
    lower Cholesky factors of the process and measurement noise.
    """

    def __init__(self, f, h, x0: np.ndarray, p0_chol: np.ndarray,
                 q_chol: np.ndarray, r_chol: np.ndarray,
                 params: SigmaPointParams | None = None):
        self.f = f
        self.h = h
        self.x = np.asarray(x0, dtype=float).copy()
        self.s = np.asarray(p0_chol, dtype=float).copy()
        self.q_chol = q_chol
        self.r_chol = r_chol
        self.n = self.x.size
        self.params = params or SigmaPointParams()
        self.wm, self.wc, self.gamma = self.params.weights(self.n)

    def predict(self):
        pts = sigma_points(self.x, self.s, self.gamma)
        prop = self.f(pts)
        if not np.all(np.isfinite(prop)):
            raise FilterDiverged("non-finite sigma point after prediction")
        mean = self.wm @ prop
        dev = prop - mean
        s_pred = _qr_factor(np.sqrt(self.wc[1]) * dev[1:], self.q_chol)
        s_pred = cholesky_update(s_pred, dev[0], self.wc[0])
        self.x = mean
        self.s = s_pred

    def update(self, y: np.ndarray) -> float:
        """Measurement update; returns the innovation infinity norm.

        The posterior factor uses the Joseph-form square root: QR of the
        gain-corrected sigma deviations stacked with the gain-weighted noise
        factor, plus the centre-weight rank-1 term.  Unlike the sequential
        downdate of the gain columns this stays positive definite even when
        the measurement noise is many orders below the prior covariance.
        """
        pts = sigma_points(self.x, self.s, self.gamma)
        meas = self.h(pts)
        y_mean = self.wm @ meas
        dy = meas - y_mean
        s_y = _qr_factor(np.sqrt(self.wc[1]) * dy[1:], self.r_chol)
        s_y = cholesky_update(s_y, dy[0], self.wc[0])

        dx = pts - self.x
        p_xy = (dx * self.wc[:, None]).T @ dy
        # K = P_xy (S_y S_y^T)^{-1} via two triangular solves
        half = solve_triangular(s_y, p_xy.T, lower=True)
        gain = solve_triangular(s_y.T, half, lower=False).T

        innovation = y - y_mean
        self.x = self.x + gain @ innovation
        if not np.all(np.isfinite(self.x)):
            raise FilterDiverged("non-finite state after measurement update")
        resid = dx - dy @ gain.T
        s_post = _qr_factor(np.sqrt(self.wc[1]) * resid[1:],
                            gain @ self.r_chol)
        s_post = cholesky_update(s_post, resid[0], self.wc[0])
        self.s = s_post
        return float(np.max(np.abs(innovation))) if innovation.size else 0.0

    def condition_proxy(self) -> float:
        """log10 condition estimate of the covariance from the factor diagonal."""
        d = np.abs(np.diag(self.s))
        if d.min() <= 0:
            return np.inf
        return float(2.0 * (np.log10(d.max()) - np.log10(d.min())))
