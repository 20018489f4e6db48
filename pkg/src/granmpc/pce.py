"""Polynomial chaos expansions over independent standardized random inputs.

Univariate families are normalized to probability weights:

* ``hermite``  - probabilists' Hermite ``He_d``, standard normal weight, ``E[He_d^2] = d!``
* ``legendre`` - Legendre ``P_d``, uniform weight on [-1, 1], ``E[P_d^2] = 1/(2d+1)``
* ``laguerre`` - generalized Laguerre ``L_d^(a)``, Gamma(a+1, 1) weight,
  ``E[L_d^2] = Gamma(d+a+1) / (d! Gamma(a+1))``

Coefficients are computed non-intrusively: the model is evaluated on a
tensor Gauss grid and projected onto each basis polynomial.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb, factorial, lgamma, exp
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal

FAMILIES = ("hermite", "legendre", "laguerre")


class ProjectionError(RuntimeError):
    """The model evaluator failed at a quadrature node."""

    def __init__(self, node: int, point, cause: BaseException):
        super().__init__(f"evaluator failed at node {node} (w={list(np.round(point, 6))}): {cause}")
        self.node = node
        self.point = np.asarray(point)


@dataclass(frozen=True)
class PolynomialFamily:
    name: str = "hermite"
    shape: float = 0.0  # Laguerre only: weight x^shape e^-x

    def __post_init__(self):
        if self.name not in FAMILIES:
            raise ValueError(f"unknown polynomial family {self.name!r}")
        if self.shape <= -1:
            raise ValueError("Laguerre shape must exceed -1")

    def recurrence(self, d: int) -> tuple[float, float, float]:
        """(a, b, c) with ``phi_{d+1} = (a x + b) phi_d - c phi_{d-1}``."""
        if self.name == "hermite":
            return 1.0, 0.0, float(d)
        if self.name == "legendre":
            return (2 * d + 1) / (d + 1), 0.0, d / (d + 1)
        a = self.shape
        return -1.0 / (d + 1), (2 * d + 1 + a) / (d + 1), (d + a) / (d + 1)

    def jacobi(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Diagonal and off-diagonal of the Jacobi matrix of the monic recurrence."""
        d = np.arange(n, dtype=float)
        if self.name == "hermite":
            diag, beta = np.zeros(n), d[1:]
        elif self.name == "legendre":
            diag, beta = np.zeros(n), d[1:] ** 2 / (4 * d[1:] ** 2 - 1)
        else:
            diag, beta = 2 * d + self.shape + 1, d[1:] * (d[1:] + self.shape)
        return diag, np.sqrt(beta)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.name == "hermite":
            return rng.standard_normal(size)
        if self.name == "legendre":
            return rng.uniform(-1.0, 1.0, size)
        return rng.gamma(self.shape + 1.0, 1.0, size)


HERMITE = PolynomialFamily("hermite")


def _family(family) -> PolynomialFamily:
    return family if isinstance(family, PolynomialFamily) else PolynomialFamily(family)


def poly_table(family, max_degree: int, w) -> np.ndarray:
    """Values of degrees ``0..max_degree`` at ``w``; shape ``w.shape + (max_degree+1,)``."""
    fam = _family(family)
    w = np.asarray(w, dtype=float)
    out = np.empty(w.shape + (max_degree + 1,))
    out[..., 0] = 1.0
    if max_degree >= 1:
        a, b, _ = fam.recurrence(0)
        out[..., 1] = a * w + b
    for d in range(1, max_degree):
        a, b, c = fam.recurrence(d)
        out[..., d + 1] = (a * w + b) * out[..., d] - c * out[..., d - 1]
    return out


def poly_eval(family, degree: int, w):
    if degree < 0:
        raise ValueError("degree must be >= 0")
    v = poly_table(family, degree, w)[..., degree]
    return float(v) if np.ndim(v) == 0 else v


def norm_sq(family, degree: int) -> float:
    """``E[phi_d(w)^2]`` under the family's probability weight."""
    fam = _family(family)
    if degree < 0:
        raise ValueError("degree must be >= 0")
    if fam.name == "hermite":
        return float(factorial(degree))
    if fam.name == "legendre":
        return 1.0 / (2 * degree + 1)
    a = fam.shape
    return exp(lgamma(degree + a + 1) - lgamma(degree + 1) - lgamma(a + 1))


@lru_cache(maxsize=64)
def _gauss_rule_cached(fam: PolynomialFamily, n: int):
    diag, off = fam.jacobi(n)
    nodes = eigh_tridiagonal(diag, off, eigvals_only=True)
    # Newton polish on phi_n; weights from the Christoffel identity
    # w_i = 1 / sum_d phi_d(x_i)^2 / ||phi_d||^2.
    norms = np.array([norm_sq(fam, d) for d in range(n + 1)])
    for _ in range(3):
        step = poly_table(fam, n, nodes)[:, n] / _poly_derivative(fam, n, nodes)
        if np.all(np.abs(step) <= 1e-16 * np.maximum(1.0, np.abs(nodes))):
            break
        nodes = nodes - step
    table = poly_table(fam, n - 1, nodes)
    weights = 1.0 / (table ** 2 / norms[:n]).sum(axis=1)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def _poly_derivative(fam: PolynomialFamily, n: int, x: np.ndarray) -> np.ndarray:
    vals = np.zeros((n + 1,) + x.shape)
    ders = np.zeros_like(vals)
    vals[0] = 1.0
    if n >= 1:
        a, b, _ = fam.recurrence(0)
        vals[1] = a * x + b
        ders[1] = a
    for d in range(1, n):
        a, b, c = fam.recurrence(d)
        vals[d + 1] = (a * x + b) * vals[d] - c * vals[d - 1]
        ders[d + 1] = a * vals[d] + (a * x + b) * ders[d] - c * ders[d - 1]
    return ders[n]


def gauss_rule(family, node_count: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss nodes and probability weights (exact to degree ``2n - 1``)."""
    if node_count < 1:
        raise ValueError("node_count must be >= 1")
    fam = _family(family)
    nodes, weights = _gauss_rule_cached(fam, int(node_count))
    if not (np.all(np.isfinite(nodes)) and np.all(np.isfinite(weights))):
        raise np.linalg.LinAlgError(f"Gauss rule for {fam.name} with {node_count} nodes did not converge")
    return nodes.copy(), weights.copy()


@dataclass(frozen=True)
class TensorGrid:
    points: np.ndarray   # (Q, n), first dimension varies slowest
    weights: np.ndarray  # (Q,)


def tensor_grid(rules: Sequence[tuple[np.ndarray, np.ndarray]]) -> TensorGrid:
    nodes = [np.asarray(r[0]) for r in rules]
    wts = [np.asarray(r[1]) for r in rules]
    points = np.array(list(itertools.product(*nodes)), dtype=float).reshape(-1, len(rules))
    weights = np.ones(len(points))
    for k, w in enumerate(itertools.product(*wts)):
        weights[k] = np.prod(w)
    return TensorGrid(points, weights)


@dataclass(frozen=True)
class BasisSet:
    """Ordered multivariate basis ``prod_j phi_{alpha_j}(w_j)`` with its squared norms."""

    dim: int
    scheme: str
    degree: int
    indices: np.ndarray  # (L, dim) integer multi-indices
    norms: np.ndarray    # (L,)
    families: tuple[PolynomialFamily, ...] = field(default=())

    def __len__(self):
        return len(self.indices)

    @property
    def max_degree(self) -> np.ndarray:
        return self.indices.max(axis=0)

    def evaluate(self, w) -> np.ndarray:
        """Basis matrix of shape ``(Q, L)`` at points ``w`` of shape ``(Q, dim)``."""
        w = np.atleast_2d(np.asarray(w, dtype=float))
        if w.shape[1] != self.dim:
            raise ValueError(f"expected points with {self.dim} coordinates, got {w.shape[1]}")
        out = np.ones((w.shape[0], len(self)))
        for j, fam in enumerate(self.families):
            table = poly_table(fam, int(self.max_degree[j]), w[:, j])
            out *= table[:, self.indices[:, j]]
        return out


def total_degree_count(n_dims: int, degree: int) -> int:
    """Number of multi-indices with total degree at most ``degree``: (n+m)!/(n!m!)."""
    return comb(n_dims + degree, degree)


def index_set(n_dims: int, scheme: str = "tensor", degree: int = 2, family="hermite") -> BasisSet:
    """Multi-index basis ordered by nondecreasing total degree.

    ``scheme`` is ``"tensor"`` (each coordinate up to ``degree``) or
    ``"total_degree"`` (coordinate sum up to ``degree``).
    """
    if n_dims < 1:
        raise ValueError("n_dims must be >= 1")
    if degree < 0:
        raise ValueError("degree must be >= 0")
    fams = tuple(_family(f) for f in family) if isinstance(family, (list, tuple)) \
        else (_family(family),) * n_dims
    if len(fams) != n_dims:
        raise ValueError("one family per dimension required")
    full = itertools.product(range(degree + 1), repeat=n_dims)
    if scheme == "tensor":
        idx = list(full)
    elif scheme == "total_degree":
        idx = [a for a in full if sum(a) <= degree]
    else:
        raise ValueError(f"unknown truncation scheme {scheme!r}")
    idx.sort(key=lambda a: (sum(a), tuple(-v for v in a)))
    indices = np.array(idx, dtype=int).reshape(-1, n_dims)
    norms = np.array([np.prod([norm_sq(f, int(d)) for f, d in zip(fams, a)]) for a in indices])
    return BasisSet(n_dims, scheme, degree, indices, norms, fams)


@dataclass(frozen=True)
class PceModel:
    basis: BasisSet
    coefficients: np.ndarray

    def __post_init__(self):
        if len(self.coefficients) != len(self.basis):
            raise ValueError("coefficient count must equal basis size")

    def mean(self) -> float:
        return float(self.coefficients[0])

    def variance(self) -> float:
        return float(np.sum(self.coefficients[1:] ** 2 * self.basis.norms[1:]))

    def __call__(self, w) -> np.ndarray:
        return self.basis.evaluate(w) @ self.coefficients

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        w = np.column_stack([f.sample(rng, size) for f in self.basis.families])
        return self(w)

    def to_json(self) -> str:
        return json.dumps({
            "dim": self.basis.dim,
            "scheme": self.basis.scheme,
            "degree": self.basis.degree,
            "families": [[f.name, f.shape] for f in self.basis.families],
            "indices": self.basis.indices.tolist(),
            "coefficients": [float(c) for c in self.coefficients],
        })

    @classmethod
    def from_json(cls, text: str) -> "PceModel":
        d = json.loads(text)
        fams = [PolynomialFamily(n, s) for n, s in d["families"]]
        basis = index_set(d["dim"], d["scheme"], d["degree"], fams)
        if basis.indices.tolist() != d["indices"]:
            raise ValueError("serialized index order does not match this basis")
        return cls(basis, np.array(d["coefficients"], dtype=float))


def pce_mean(model: PceModel) -> float:
    return model.mean()


def pce_variance(model: PceModel) -> float:
    return model.variance()


def default_grid(basis: BasisSet, node_count: int | Sequence[int] = 6) -> TensorGrid:
    counts = [node_count] * basis.dim if np.ndim(node_count) == 0 else list(node_count)
    return tensor_grid([gauss_rule(f, n) for f, n in zip(basis.families, counts)])


def project_values(values, basis: BasisSet, grid: TensorGrid) -> np.ndarray:
    """Coefficients from model values at the grid points; trailing axes are batched."""
    phi = basis.evaluate(grid.points)
    values = np.asarray(values, dtype=float)
    weighted = grid.weights.reshape((-1,) + (1,) * (values.ndim - 1)) * values
    return np.tensordot(phi, weighted, axes=(0, 0)) / basis.norms.reshape((-1,) + (1,) * (values.ndim - 1))


def project(evaluator: Callable, basis: BasisSet, rule: TensorGrid | int = 6,
            vectorized: bool = False) -> PceModel:
    """Non-intrusive spectral projection of ``evaluator`` onto ``basis``.

    ``rule`` is a precomputed tensor grid or a per-dimension node count. With
    ``vectorized=True`` the evaluator receives all points as a ``(Q, dim)``
    array; otherwise it is called once per node with a length-``dim`` vector.
    """
    grid = rule if isinstance(rule, TensorGrid) else default_grid(basis, rule)
    counts = [len(np.unique(grid.points[:, j])) for j in range(basis.dim)]
    if any(c < d + 1 for c, d in zip(counts, basis.max_degree)):
        raise ValueError("quadrature needs at least degree+1 nodes per dimension")
    if vectorized:
        values = np.asarray(evaluator(grid.points), dtype=float).reshape(-1)
    else:
        values = np.empty(len(grid.points))
        for q, w in enumerate(grid.points):
            try:
                values[q] = evaluator(w)
            except Exception as exc:
                raise ProjectionError(q, w, exc) from exc
    return PceModel(basis, project_values(values, basis, grid))
