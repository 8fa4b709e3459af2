"""Minimum-jerk piecewise quintics parameterized by waypoints and durations.

For ``M`` pieces the coefficients of all three channels (x, y, yaw) follow
from one banded linear system in the ``6M`` unknowns per channel:

* 3 rows fixing position, velocity, acceleration at ``t = 0``;
* per interior junction, one row pinning the waypoint and five rows for
  continuity of derivatives 0..4;
* 3 rows fixing position, velocity, acceleration at the end.

The same factorization (transposed) pulls gradients with respect to the
coefficients back onto waypoints and durations.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import LinAlgError, solve_banded

N_COEF = 6
N_CHANNELS = 3
MAX_ORDER = 5
_BAND = 8  # lower and upper bandwidth of the system

_FALLING = np.array(
    [[factorial(n) // factorial(n - k) if n >= k else 0 for n in range(N_COEF)] for k in range(N_COEF + 1)],
    dtype=float,
)
_POW = np.array([[max(n - k, 0) for n in range(N_COEF)] for k in range(N_COEF + 1)])


class InvalidTimeError(ValueError):
    """Non-positive or non-finite segment duration."""


class ConstructionError(RuntimeError):
    """Coefficient system could not be solved."""


class PropagationError(RuntimeError):
    """Adjoint system could not be solved."""


def basis(t: ArrayLike, order: int = 0) -> NDArray[np.float64]:
    """Rows ``d^order/dt^order [1, t, ..., t^5]``; shape ``(*t.shape, 6)``."""
    t = np.asarray(t, dtype=float)
    return _FALLING[order] * t[..., None] ** _POW[order]


def basis_all(t: ArrayLike) -> NDArray[np.float64]:
    """All derivative orders 0..6 at once; shape ``(*t.shape, 7, 6)``."""
    t = np.asarray(t, dtype=float)
    return _FALLING * t[..., None, None] ** _POW


def jerk_gram(T: ArrayLike) -> NDArray[np.float64]:
    """Matrix ``Q`` with ``c^T Q c`` equal to the squared-jerk integral over ``[0, T]``.

    Vectorized over ``T``: the result has shape ``(*T.shape, 6, 6)``.
    """
    T = np.asarray(T, dtype=float)
    m = np.arange(N_COEF)
    e = m[:, None] + m[None, :] - 5
    high = (m[:, None] >= 3) & (m[None, :] >= 3)
    scale = np.where(high, np.outer(_FALLING[3], _FALLING[3]) / np.where(high, e, 1), 0.0)
    return scale * T[..., None, None] ** np.where(high, e, 0)


_PATTERNS: dict[int, tuple] = {}


def _pattern(M: int):
    # Sparsity pattern for M pieces. Each stored entry is either beta^(order)
    # evaluated at the end of a piece (moves with T) or sign * beta^(order)(0).
    if M in _PATTERNS:
        return _PATTERNS[M]
    rows, cols, src_piece, src_order, at_end, sign = [], [], [], [], [], []
    td_rows, td_piece, td_order = [], [], []

    def put(r, piece, end, src, order, sgn=1.0):
        for n in range(N_COEF):
            rows.append(r)
            cols.append(N_COEF * piece + n)
            src_piece.append(src)
            src_order.append(order)
            at_end.append(end)
            sign.append(sgn)

    for k in range(3):
        put(k, 0, False, 0, k)
    for i in range(1, M):
        base = 3 + 6 * (i - 1)
        put(base, i - 1, True, i - 1, 0)
        td_rows.append(base)
        td_piece.append(i - 1)
        td_order.append(0)
        for k in range(5):
            r = base + 1 + k
            put(r, i - 1, True, i - 1, k)
            put(r, i, False, 0, k, -1.0)
            td_rows.append(r)
            td_piece.append(i - 1)
            td_order.append(k)
    for k in range(3):
        r = 6 * M - 3 + k
        put(r, M - 1, True, M - 1, k)
        td_rows.append(r)
        td_piece.append(M - 1)
        td_order.append(k)
    n_idx = np.tile(np.arange(N_COEF), len(rows) // N_COEF)
    pat = (
        np.array(rows),
        np.array(cols),
        np.array(src_piece),
        np.array(src_order),
        np.array(at_end, dtype=bool),
        np.array(sign),
        n_idx,
        (np.array(td_rows, dtype=np.int64), np.array(td_piece, dtype=np.int64), np.array(td_order, dtype=np.int64)),
    )
    _PATTERNS[M] = pat
    return pat


def _assemble(T: NDArray[np.float64]):
    rows, cols, piece, order, at_end, sign, n_idx, tdep = _pattern(len(T))
    ends = basis_all(T)
    vals = np.where(at_end, ends[piece, order, n_idx], _FALLING[order, n_idx] * (n_idx == order)) * sign
    return rows, cols, vals, tdep


def _banded(rows, cols, vals, n, transpose=False):
    ab = np.zeros((2 * _BAND + 1, n))
    if transpose:
        rows, cols = cols, rows
    ab[_BAND + rows - cols, cols] = vals
    return ab


@dataclass(frozen=True, eq=False)
class MincoTrajectory:
    """``M`` quintic pieces over channels (x, y, yaw).

    ``coeffs[i, n, ch]`` multiplies ``t**n`` on piece ``i`` in local time
    ``t in [0, T_i]``. ``start``/``end`` are ``(3, 3)``: rows position,
    velocity, acceleration; columns x, y, yaw.
    """

    coeffs: NDArray[np.float64]
    T: NDArray[np.float64]
    start: NDArray[np.float64]
    end: NDArray[np.float64]
    q: NDArray[np.float64]
    _system: tuple = None

    @property
    def M(self) -> int:
        return len(self.T)

    @property
    def duration(self) -> float:
        return float(np.sum(self.T))

    @property
    def breakpoints(self) -> NDArray[np.float64]:
        return np.concatenate([[0.0], np.cumsum(self.T)])

    def locate(self, t: ArrayLike) -> tuple[NDArray[np.int64], NDArray[np.float64]]:
        """Piece index and local time for global times ``t``."""
        t = np.asarray(t, dtype=float)
        total = self.duration
        if np.any(t < -1e-12) or np.any(t > total * (1 + 1e-12) + 1e-12):
            raise ValueError(f"time outside [0, {total}]")
        bp = self.breakpoints
        idx = np.clip(np.searchsorted(bp, t, side="right") - 1, 0, self.M - 1)
        return idx, np.clip(t - bp[idx], 0.0, self.T[idx])

    def eval(self, t: ArrayLike, order: int = 0) -> NDArray[np.float64]:
        """``order``-th derivative at global time(s) ``t``; shape ``(*t.shape, 3)``."""
        if not 0 <= order <= MAX_ORDER:
            raise ValueError(f"derivative order must be in 0..{MAX_ORDER}, got {order}")
        idx, tl = self.locate(t)
        b = basis(tl, order)
        return np.einsum("...n,...nc->...c", b, self.coeffs[idx])

    def sample_times(self, dt: float) -> NDArray[np.float64]:
        """Uniform grid of step ``dt`` that always includes the final time."""
        n = int(np.floor(self.duration / dt + 1e-9))
        ts = np.arange(n + 1) * dt
        if ts[-1] < self.duration - 1e-12:
            ts = np.append(ts, self.duration)
        return np.minimum(ts, self.duration)


def construct(start: ArrayLike, end: ArrayLike, q: ArrayLike, T: ArrayLike) -> MincoTrajectory:
    """Solve for the coefficients given boundary states, waypoints and durations.

    Args:
        start, end: ``(3, 3)`` boundary states (position, velocity,
            acceleration rows by x, y, yaw columns).
        q: ``(M-1, 3)`` interior waypoints.
        T: ``(M,)`` positive durations.
    """
    T = np.asarray(T, dtype=float).ravel()
    M = len(T)
    if M < 1:
        raise ValueError("need at least one piece")
    if not np.all(np.isfinite(T)) or np.any(T <= 0):
        raise InvalidTimeError(f"durations must be positive and finite, got {T}")
    start = np.asarray(start, dtype=float).reshape(3, N_CHANNELS)
    end = np.asarray(end, dtype=float).reshape(3, N_CHANNELS)
    q = np.asarray(q, dtype=float).reshape(M - 1, N_CHANNELS)
    n = N_COEF * M
    rows, cols, vals, tdep = _assemble(T)
    rhs = np.zeros((n, N_CHANNELS))
    rhs[0:3] = start
    rhs[3 + 6 * np.arange(M - 1)] = q
    rhs[n - 3 :] = end
    try:
        x = solve_banded((_BAND, _BAND), _banded(rows, cols, vals, n), rhs, check_finite=False)
    except (LinAlgError, ValueError) as exc:
        raise ConstructionError(f"singular coefficient system: {exc}") from None
    if not np.all(np.isfinite(x)):
        raise ConstructionError("non-finite coefficients")
    coeffs = x.reshape(M, N_COEF, N_CHANNELS)
    return MincoTrajectory(coeffs, T.copy(), start.copy(), end.copy(), q.copy(), (rows, cols, vals, tdep))


def grad_propagate(
    traj: MincoTrajectory, grad_c: ArrayLike, grad_T: ArrayLike
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Total gradients on waypoints and durations.

    Args:
        grad_c: ``(M, 6, 3)`` partial derivatives of the objective with
            respect to the coefficients.
        grad_T: ``(M,)`` partial derivatives with respect to durations at
            fixed coefficients.

    Returns:
        ``(dJ/dq of shape (M-1, 3), dJ/dT of shape (M,))``.
    """
    M = traj.M
    n = N_COEF * M
    rows, cols, vals, tdep = traj._system
    g = np.asarray(grad_c, dtype=float).reshape(n, N_CHANNELS)
    try:
        lam = solve_banded((_BAND, _BAND), _banded(rows, cols, vals, n, transpose=True), g, check_finite=False)
    except (LinAlgError, ValueError) as exc:
        raise PropagationError(f"singular adjoint system: {exc}") from None
    if not np.all(np.isfinite(lam)):
        raise PropagationError("non-finite adjoint")
    gq = lam[3 + 6 * np.arange(M - 1)].reshape(M - 1, N_CHANNELS)
    gT = np.array(grad_T, dtype=float).copy()
    td_rows, td_piece, td_order = tdep
    if len(td_rows):
        nxt = basis_all(traj.T)[td_piece, td_order + 1]  # d/dT of beta^(k)(T)
        dA_c = np.einsum("tn,tnc->tc", nxt, traj.coeffs[td_piece])
        np.add.at(gT, td_piece, -np.sum(lam[td_rows] * dA_c, axis=1))
    return gq, gT


def jerk_energy(traj: MincoTrajectory) -> float:
    """Closed-form squared-jerk integral summed over pieces and channels."""
    return float(np.einsum("inc,inm,imc->", traj.coeffs, jerk_gram(traj.T), traj.coeffs))
