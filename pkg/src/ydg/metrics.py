"""Closed-loop performance metrics: sensitivity peak and step settling time."""
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .lti import gang_of_four, is_hurwitz, trim

HINF_GRID = np.logspace(-3, 3, 2000)
HINF_OMEGA_TOL = 1e-6

SETTLE_BAND = 0.02
HORIZON = 40.0
DT = 1e-3
#: Loops with |T(0)| below this never meaningfully track a reference.
V_MIN = 0.2

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_BLOCK = 200


class MetricError(ArithmeticError):
    """A closed loop whose metrics cannot be used (discard signal)."""


class DegenerateTracking(MetricError):
    pass


class NotSettled(MetricError):
    pass


class NumericalOverflow(MetricError):
    pass


@dataclass(frozen=True)
class MetricsVector:
    s_inf: float
    t_settle: float

    def as_array(self):
        return np.array([self.s_inf, self.t_settle])


@dataclass(frozen=True, eq=False)
class StepResponse:
    t: np.ndarray
    y: np.ndarray
    final_value: float


def _mag(tf, omega):
    s = 1j * np.asarray(omega, dtype=float)
    return np.abs(np.polyval(tf.num, s) / np.polyval(tf.den, s))


def hinf_norm(S, grid=HINF_GRID, omega_tol=HINF_OMEGA_TOL):
    """``sup_w |S(jw)|`` by log-grid search plus golden-section refinement.

    The DC value and the high-frequency limit are included as candidates, so
    peaks attained only asymptotically (e.g. high-pass loops) are captured.
    """
    if not is_hurwitz(S.den).is_hurwitz:
        raise ValueError("H-infinity norm undefined for an unstable transfer function")
    mags = _mag(S, grid)
    k = int(np.argmax(mags))
    best = float(mags[k])

    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, grid.size - 1)]
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = _mag(S, c), _mag(S, d)
    while b - a > omega_tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = _mag(S, c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = _mag(S, d)
    best = max(best, float(fc), float(fd))

    num, den = trim(S.num), trim(S.den)
    dc = abs(S.num[-1] / S.den[-1])
    hf = abs(num[0] / den[0]) if num.size == den.size else 0.0
    return max(best, dc, hf)


def _realize(T):
    """Controllable-canonical ``(A, B, C, D)`` of a proper transfer function."""
    den = trim(T.den)
    a = den / den[0]
    n = a.size - 1
    num = trim(T.num)
    if num.size > n + 1:
        raise ValueError("transfer function must be proper")
    b = np.concatenate([np.zeros(n + 1 - num.size), num]) / den[0]
    d = b[0]
    A = np.zeros((n, n))
    if n:
        A[:-1, 1:] = np.eye(n - 1)
        A[-1, :] = -a[1:][::-1]
    B = np.zeros(n)
    if n:
        B[-1] = 1.0
    C = (b[1:] - d * a[1:])[::-1]
    return A, B, C, d


def zoh(A, B, dt):
    """Exact zero-order-hold discretization through one augmented matrix exponential."""
    n = A.shape[0]
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = A
    M[:n, n] = B
    E = expm(M * dt)
    return E[:n, :n], E[:n, n]


def step_response(T, horizon=HORIZON, dt=DT):
    """Unit-step response on ``t = 0, dt, ..., horizon`` from rest.

    Simulates ``x[k+1] = Ad x[k] + Bd`` exactly; the recursion is unrolled in
    blocks of powers of the affine map so the whole trajectory costs a few
    hundred small matrix products.
    """
    if dt <= 0 or horizon < dt:
        raise ValueError("need dt > 0 and horizon >= dt")
    steps = int(round(horizon / dt))
    t = np.arange(steps + 1) * dt
    final_value = float(T.num[-1] / T.den[-1]) if T.den[-1] != 0 else math.inf
    A, B, C, d = _realize(T)
    n = A.shape[0]
    if n == 0 or not np.any(C):
        return StepResponse(t, np.full(t.size, d), final_value)

    Ad, Bd = zoh(A, B, dt)
    # affine map z -> M z on z = [x, 1]
    M = np.eye(n + 1)
    M[:n, :n] = Ad
    M[:n, n] = Bd
    out = np.append(C, d)

    m = min(_BLOCK, steps + 1)
    W = np.empty((m, n + 1))
    row = out.copy()
    for i in range(m):
        W[i] = row
        row = row @ M
    Mm = np.linalg.matrix_power(M, m)
    nblocks = -(-(steps + 1) // m)
    Z = np.empty((nblocks, n + 1))
    z = np.zeros(n + 1)
    z[n] = 1.0
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(nblocks):
            Z[j] = z
            z = Mm @ z
        y = (W @ Z.T).T.reshape(-1)[: steps + 1]
    if not np.all(np.isfinite(y)):
        raise NumericalOverflow("numerical overflow")
    return StepResponse(t, y, final_value)


def settling_time(resp, band=SETTLE_BAND, v_min=V_MIN):
    """Earliest time after which ``y`` stays within ``band * |final_value|``.

    The exit crossing is located by linear interpolation between samples.
    Returns ``math.inf`` when the response is still outside the band at the
    end of the horizon.
    """
    fv = resp.final_value
    if not math.isfinite(fv) or abs(fv) < v_min:
        raise DegenerateTracking("degenerate tracking")
    tol = band * abs(fv)
    err = np.abs(resp.y - fv) - tol
    outside = np.flatnonzero(err > 0)
    if outside.size == 0:
        return 0.0
    k = int(outside[-1])
    if k == err.size - 1:
        return math.inf
    e0, e1 = err[k], err[k + 1]
    frac = e0 / (e0 - e1) if e0 != e1 else 1.0
    return float(resp.t[k] + frac * (resp.t[k + 1] - resp.t[k]))


def evaluate_pair(G, Q, horizon=HORIZON, dt=DT, band=SETTLE_BAND, v_min=V_MIN):
    """``(||S||_inf, settling time of T)`` for the loop ``(G, C(Q))``.

    Raises a :class:`MetricError` subclass for loops that must be discarded.
    """
    S, T, _, _ = gang_of_four(G, Q)
    if T.is_zero:
        raise DegenerateTracking("degenerate tracking")
    s_inf = hinf_norm(S)
    ts = settling_time(step_response(T, horizon, dt), band, v_min)
    if not math.isfinite(ts):
        raise NotSettled("not settled")
    return MetricsVector(float(s_inf), ts)
