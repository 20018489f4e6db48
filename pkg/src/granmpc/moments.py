"""Mixed-moment model of bicomponent coagulation in a continuous granulator.

The state is the vector of nine mixed moments ``M_ij = int p^i s^j f(p, s)``
for ``i, j in {0, 1, 2}``, where ``p`` is the total mass of a granule and
``s`` its drug mass. With a size-independent kernel ``k0`` the moment
equations close exactly::

    dM_ij/dt = k0/2 * sum_{a<=i, b<=j} C(i,a) C(j,b) M_ab M_{i-a,j-b}
               - k0 * M_ij * M_00
               + alpha * (c_f * p_f^i * s_f^j - M_ij)

The last term is the continuous feed of monodisperse particles
``(p_f, s_f)`` at number concentration ``c_f`` with equal withdrawal.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence, Union

import numba
import numpy as np

#: Component order of the state vector.
ORDER: tuple[tuple[int, int], ...] = (
    (0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (0, 2), (1, 2), (2, 1), (2, 2),
)
NAMES = tuple(f"m{i}{j}" for i, j in ORDER)
N_MOMENTS = len(ORDER)
_INDEX = {ij: k for k, ij in enumerate(ORDER)}

M00, M10, M01, M11, M20, M02, M12, M21, M22 = range(N_MOMENTS)

# Index pairs (lo, hi) with lo <= hi implied by s <= p.
_ORDER_PAIRS = ((M01, M10), (M02, M11), (M11, M20), (M12, M21))

DEGENERATE_M00 = 1e-12


_P_POW = np.array([i for i, _ in ORDER], dtype=np.float64)
_S_POW = np.array([j for _, j in ORDER], dtype=np.float64)


class InvariantViolation(ValueError):
    """Raised when an integrated trajectory leaves the admissible moment set."""

    def __init__(self, time: float, name: str):
        super().__init__(f"moment invariant {name!r} violated at t={time:.6g}; "
                         "reduce the step size")
        self.time = time
        self.name = name


class DegeneratePopulation(ValueError):
    """Raised when ratios of moments are requested for an empty population."""


@dataclass(frozen=True)
class MomentState:
    m00: float
    m10: float
    m01: float
    m11: float
    m20: float
    m02: float
    m12: float
    m21: float
    m22: float

    @classmethod
    def from_array(cls, x) -> "MomentState":
        x = np.asarray(x, dtype=float)
        if x.shape != (N_MOMENTS,):
            raise ValueError(f"expected {N_MOMENTS} moments, got shape {x.shape}")
        return cls(*(float(v) for v in x))

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)])

    def violations(self, rtol: float = 1e-9) -> list[str]:
        """Names of the invariants this state breaks (empty when admissible)."""
        return invariant_violations(self.as_array(), rtol=rtol)


def invariant_violations(x: np.ndarray, rtol: float = 1e-9,
                         cauchy_schwarz: bool = True) -> list[str]:
    x = np.asarray(x, dtype=float)
    scale = np.abs(x).max(initial=0.0)
    atol = rtol * scale + 1e-300
    bad = [NAMES[k] + ">=0" for k in range(N_MOMENTS) if x[k] < -atol]
    for lo, hi in _ORDER_PAIRS:
        if x[lo] > x[hi] + rtol * (abs(x[lo]) + abs(x[hi])) + 1e-300:
            bad.append(f"{NAMES[lo]}<={NAMES[hi]}")
    if cauchy_schwarz:
        for a, b, c in ((M11, M20, M02), (M10, M00, M20), (M01, M00, M02)):
            if x[a] ** 2 > x[b] * x[c] * (1 + 2 * rtol) + atol ** 2:
                bad.append(f"{NAMES[a]}^2<={NAMES[b]}*{NAMES[c]}")
    return bad


@dataclass(frozen=True)
class FeedSpec:
    """Continuous feed of monodisperse particles with equal withdrawal rate."""

    alpha: float
    c_f: float
    p_f: float
    s_f: float

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not self.c_f >= 0:
            raise ValueError(f"c_f must be >= 0, got {self.c_f}")
        if not 0 <= self.s_f <= self.p_f:
            raise ValueError(f"need 0 <= s_f <= p_f, got s_f={self.s_f}, p_f={self.p_f}")

    def with_drug(self, s_f: float) -> "FeedSpec":
        return FeedSpec(self.alpha, self.c_f, self.p_f, s_f)

    def with_concentration(self, c_f: float) -> "FeedSpec":
        return FeedSpec(self.alpha, c_f, self.p_f, self.s_f)


@dataclass(frozen=True)
class KernelSpec:
    k0: float
    variant: str = "constant"

    def __post_init__(self):
        if self.variant != "constant":
            raise ValueError(f"unsupported kernel variant {self.variant!r}")
        if not self.k0 > 0:
            raise ValueError(f"k0 must be > 0, got {self.k0}")


def feed_moment_array(c_f, p_f, s_f) -> np.ndarray:
    """Moments of a point-mass feed; broadcasts over array arguments."""
    c_f, p_f, s_f = (np.asarray(v, dtype=float)[..., None] for v in (c_f, p_f, s_f))
    return c_f * p_f ** _P_POW * s_f ** _S_POW


def feed_moments(feed: FeedSpec) -> MomentState:
    return MomentState.from_array(feed_moment_array(feed.c_f, feed.p_f, feed.s_f))


@numba.njit(cache=True)
def _rhs(x, fm, alpha, k0, out):
    # Column layout: x[k, r] is moment k of state r. Birth terms carrying an
    # M00 factor cancel the death term, leaving only the cross products.
    for r in range(x.shape[1]):
        m00, m10, m01, m11 = x[0, r], x[1, r], x[2, r], x[3, r]
        m20, m02, m12, m21, m22 = x[4, r], x[5, r], x[6, r], x[7, r], x[8, r]
        out[0, r] = -0.5 * k0 * m00 * m00 + alpha * (fm[0, r] - m00)
        out[1, r] = alpha * (fm[1, r] - m10)
        out[2, r] = alpha * (fm[2, r] - m01)
        out[3, r] = k0 * m10 * m01 + alpha * (fm[3, r] - m11)
        out[4, r] = k0 * m10 * m10 + alpha * (fm[4, r] - m20)
        out[5, r] = k0 * m01 * m01 + alpha * (fm[5, r] - m02)
        out[6, r] = k0 * (2.0 * m01 * m11 + m10 * m02) + alpha * (fm[6, r] - m12)
        out[7, r] = k0 * (2.0 * m10 * m11 + m01 * m20) + alpha * (fm[7, r] - m21)
        out[8, r] = (k0 * (2.0 * m01 * m21 + m02 * m20 + 2.0 * m10 * m12 + 2.0 * m11 * m11)
                     + alpha * (fm[8, r] - m22))


@numba.njit(cache=True)
def _rk4_cols(x, fm, alpha, k0, dt, nsteps, traj):
    """Advance all columns of ``x`` in place; ``traj`` receives every step."""
    n, m = x.shape
    k1 = np.empty_like(x)
    k2 = np.empty_like(x)
    k3 = np.empty_like(x)
    k4 = np.empty_like(x)
    tmp = np.empty_like(x)
    record = traj.shape[0] > 0
    if record:
        traj[0] = x
    for step in range(nsteps):
        _rhs(x, fm, alpha, k0, k1)
        for k in range(n):
            for r in range(m):
                tmp[k, r] = x[k, r] + 0.5 * dt * k1[k, r]
        _rhs(tmp, fm, alpha, k0, k2)
        for k in range(n):
            for r in range(m):
                tmp[k, r] = x[k, r] + 0.5 * dt * k2[k, r]
        _rhs(tmp, fm, alpha, k0, k3)
        for k in range(n):
            for r in range(m):
                tmp[k, r] = x[k, r] + dt * k3[k, r]
        _rhs(tmp, fm, alpha, k0, k4)
        for k in range(n):
            for r in range(m):
                x[k, r] += dt / 6.0 * (k1[k, r] + 2.0 * k2[k, r] + 2.0 * k3[k, r] + k4[k, r])
        if record:
            traj[step + 1] = x


_NO_TRAJ = np.empty((0, N_MOMENTS, 1))


def rhs_array(x, feed_moments_arr, alpha: float, k0: float) -> np.ndarray:
    """Closure right-hand side on raw arrays (``k0 = 0`` switches coagulation off)."""
    out = np.empty((N_MOMENTS, 1))
    _rhs(np.asarray(x, dtype=float).reshape(N_MOMENTS, 1),
         np.asarray(feed_moments_arr, dtype=float).reshape(N_MOMENTS, 1),
         float(alpha), float(k0), out)
    return out[:, 0]


def moment_rhs(state: MomentState, feed: FeedSpec, kernel: KernelSpec) -> MomentState:
    """Time derivative of every mixed moment (returned as a MomentState-shaped value)."""
    d = rhs_array(state.as_array(), feed_moment_array(feed.c_f, feed.p_f, feed.s_f),
                  feed.alpha, kernel.k0)
    return MomentState.from_array(d)


def _n_steps(span: float, dt: float) -> int:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n = round(span / dt)
    if n < 0 or abs(n * dt - span) > 1e-9 * max(1.0, abs(span)):
        raise ValueError(f"time span {span} is not a multiple of dt={dt}")
    return int(n)


def propagate(x: np.ndarray, feed_moments_arr: np.ndarray, alpha: float, k0: float,
              dt: float, span: float) -> np.ndarray:
    """Advance a batch of states (rows) over ``span`` with per-row feed moments.

    Returns a new array; the fast path used by the controllers and the
    Monte Carlo validation.
    """
    x = np.asarray(x, dtype=float)
    cols = np.array(np.atleast_2d(x).T, order="C")
    fm = np.ascontiguousarray(np.broadcast_to(feed_moments_arr, cols.T.shape).T, dtype=float)
    _rk4_cols(cols, fm, float(alpha), float(k0), float(dt), _n_steps(span, dt), _NO_TRAJ)
    return cols.T.reshape(x.shape).copy()


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (len(times), 9)

    def __len__(self):
        return len(self.times)

    def state(self, k: int) -> MomentState:
        return MomentState.from_array(self.states[k])

    @property
    def final(self) -> MomentState:
        return self.state(-1)


FeedSchedule = Union[FeedSpec, Sequence[FeedSpec]]


def integrate(state: MomentState, feed_schedule: FeedSchedule, kernel: KernelSpec,
              dt: float = 0.01, t_end: float = 1.0, hold: float | None = None,
              check: bool = True) -> Trajectory:
    """Integrate the moment ODE with fixed-step RK4, sampling every step.

    ``feed_schedule`` is a single FeedSpec, or a sequence of FeedSpecs each
    held for ``hold`` time units (zero-order hold; the last one persists).
    """
    n_total = _n_steps(t_end, dt)
    if isinstance(feed_schedule, FeedSpec):
        schedule = [feed_schedule]
        per_segment = n_total
    else:
        schedule = list(feed_schedule)
        if not schedule:
            raise ValueError("empty feed schedule")
        if hold is None:
            raise ValueError("a sequence of feeds needs a hold period")
        per_segment = _n_steps(hold, dt)
        if per_segment == 0:
            raise ValueError("hold period shorter than dt")

    x = state.as_array().reshape(N_MOMENTS, 1)
    traj = np.empty((n_total + 1, N_MOMENTS, 1))
    traj[0] = x
    done = 0
    seg = 0
    while done < n_total:
        feed = schedule[min(seg, len(schedule) - 1)]
        n = min(per_segment, n_total - done) if len(schedule) > 1 else n_total - done
        fm = feed_moment_array(feed.c_f, feed.p_f, feed.s_f).reshape(N_MOMENTS, 1)
        _rk4_cols(x, fm, float(feed.alpha), float(kernel.k0), float(dt), n,
                  traj[done:done + n + 1])
        done += n
        seg += 1
    traj = traj[:, :, 0]
    times = dt * np.arange(n_total + 1)

    if check:
        for k in range(n_total + 1):
            bad = invariant_violations(traj[k], cauchy_schwarz=False)
            if bad:
                raise InvariantViolation(float(times[k]), bad[0])
    return Trajectory(times, traj)


def summary_array(x: np.ndarray) -> np.ndarray:
    """(M01/M00, M10/M00, M02/M00) along the last axis of a moment array."""
    x = np.asarray(x, dtype=float)
    m00 = x[..., M00]
    if np.any(m00 <= DEGENERATE_M00):
        raise DegeneratePopulation(f"m00 <= {DEGENERATE_M00}: ratios undefined")
    return np.stack([x[..., M01] / m00, x[..., M10] / m00, x[..., M02] / m00], axis=-1)


def summary(state: MomentState) -> tuple[float, float, float]:
    """Mean drug mass, mean total mass and drug second moment per particle."""
    mean_drug, mean_mass, drug_second = summary_array(state.as_array())
    return float(mean_drug), float(mean_mass), float(drug_second)


#: Initial state used for the PCE validation and the closed-loop campaigns.
PAPER_X0 = MomentState(1.9, 2.0, 0.2, 0.2, 2.3, 0.02, 0.03, 0.3, 0.05)
