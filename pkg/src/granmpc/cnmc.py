"""Constant-number Monte Carlo (cNMC) simulation of batch bicomponent coagulation.

N simulation particles stand for a physical population of number
concentration ``concentration``. Each coagulation event merges one pair and
refills the emptied slot with a copy of a random survivor, so N never
changes; the represented volume grows instead, which shows up as a drop in
``concentration``. The rescaling is chosen so that total-mass density is
conserved exactly at every event.

Used as an independent check on the closed moment equations; it never feeds
the controllers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .moments import ORDER, KernelSpec, MomentState

_P_POW = np.array([i for i, _ in ORDER])
_S_POW = np.array([j for _, j in ORDER])


@dataclass
class Particle:
    p: float
    s: float

    def __post_init__(self):
        if not self.p > 0 or not 0 <= self.s <= self.p:
            raise ValueError(f"need p > 0 and 0 <= s <= p, got p={self.p}, s={self.s}")


@dataclass
class Ensemble:
    """Simulation particles plus the physical concentration they represent.

    ``p`` and ``s`` are mutated in place by :func:`coagulation_event`.
    """

    p: np.ndarray
    s: np.ndarray
    concentration: float
    time: float = 0.0

    @property
    def n(self) -> int:
        return len(self.p)

    def particles(self) -> list[Particle]:
        return [Particle(float(a), float(b)) for a, b in zip(self.p, self.s)]

    def copy(self) -> "Ensemble":
        return Ensemble(self.p.copy(), self.s.copy(), self.concentration, self.time)


def init_monodisperse(n: int, p0: float, s0: float, c0: float) -> Ensemble:
    if n < 2:
        raise ValueError(f"need at least 2 particles for pair selection, got {n}")
    if not p0 > 0 or not 0 <= s0 <= p0:
        raise ValueError(f"need p0 > 0 and 0 <= s0 <= p0, got p0={p0}, s0={s0}")
    if not c0 > 0:
        raise ValueError(f"concentration must be positive, got {c0}")
    return Ensemble(np.full(n, float(p0)), np.full(n, float(s0)), float(c0))


def kernel_value(kernel: KernelSpec, p1, s1, p2, s2) -> float:
    return kernel.k0


def kernel_majorant(kernel: KernelSpec, ensemble: Ensemble) -> float:
    """Upper bound of the kernel over the current population."""
    return kernel.k0


def waiting_time(ensemble: Ensemble, kernel: KernelSpec) -> float:
    return 2.0 / ((ensemble.n - 1) * kernel_majorant(kernel, ensemble) * ensemble.concentration)


def coagulation_event(ensemble: Ensemble, kernel: KernelSpec,
                      rng: np.random.Generator) -> tuple[Ensemble, float]:
    """Perform one merge event in place and return ``(ensemble, dt)``.

    Pairs are drawn uniformly and accepted with probability ``k / k_max``;
    for the constant kernel every candidate is accepted. The time step is the
    mean-field waiting time, ``2 / ((N - 1) k_max C)``, which makes the
    expected number decay match ``dC/dt = -k C^2 / 2``.
    """
    n = ensemble.n
    p, s = ensemble.p, ensemble.s
    k_max = kernel_majorant(kernel, ensemble)
    while True:
        i = int(rng.integers(n))
        j = int(rng.integers(n - 1))
        if j >= i:
            j += 1
        accept = kernel_value(kernel, p[i], s[i], p[j], s[j]) / k_max
        if accept >= 1.0 or rng.random() < accept:
            break

    dt = waiting_time(ensemble, kernel)
    mass_before = p.sum()
    p[i] += p[j]
    s[i] += s[j]
    # Survivors are every slot except j, including the merged particle at i.
    d = int(rng.integers(n - 1))
    if d >= j:
        d += 1
    p[j] = p[d]
    s[j] = s[d]
    ensemble.concentration *= mass_before / p.sum()
    ensemble.time += dt
    return ensemble, dt


def ensemble_moments(ensemble: Ensemble) -> MomentState:
    """Monte Carlo estimate ``M_ij = C * mean(p^i s^j)``."""
    p = ensemble.p[:, None] ** _P_POW
    s = ensemble.s[:, None] ** _S_POW
    return MomentState.from_array(ensemble.concentration * (p * s).mean(axis=0))


def run_batch(ensemble: Ensemble, kernel: KernelSpec, t_end: float,
              rng: np.random.Generator, output_times=None):
    """Run events up to ``t_end`` past the current time; return ``(times, moments)``.

    ``moments[k]`` estimates the population alive at ``times[k]``, i.e. after
    the last event at or before that time. Output times are absolute and
    default to the start and end of the run. The ensemble is advanced in place.
    """
    if t_end < 0:
        raise ValueError(f"t_end must be >= 0, got {t_end}")
    if output_times is None:
        output_times = [ensemble.time, ensemble.time + t_end]
    times = np.asarray(output_times, dtype=float)
    if np.any(np.diff(times) < 0):
        raise ValueError("output times must be sorted")
    out = np.empty((len(times), len(ORDER)))
    k = 0
    while k < len(times):
        next_time = ensemble.time + waiting_time(ensemble, kernel)
        while k < len(times) and times[k] < next_time:
            out[k] = ensemble_moments(ensemble).as_array()
            k += 1
        if k < len(times):
            coagulation_event(ensemble, kernel, rng)
    return times, out
