"""Discretized state spaces on a one-dimensional interval.

The continuum model works with the nested spaces

    Y = L^q(0, L)  ⊂  H = L^2(0, L)  ⊂  X = W^{-1,2}(0, L)  ⊂  V = W^{-3,2}(0, L)

carrying, respectively, the porous-media energy, the particle state, the
metric in which coupling estimates contract, and the weak topology of path
space.  On a grid of J interior points everything becomes exact linear
algebra: the sine eigenpairs of the discrete Dirichlet Laplacian diagonalize
all dual norms, so

    ||x||_H^2 = sum_k c_k^2,   ||x||_X^2 = sum_k c_k^2 / mu_k,
    ||x||_V^2 = sum_k c_k^2 / mu_k^3,

with c_k the normalized sine coefficients and mu_k the stencil eigenvalues
mu_k = (2(J+1)/L)^2 sin^2(pi k / (2(J+1))).  L^q norms are quadrature sums.

Path space is the set of V-valued trajectories with q-integrable Y-norm,
sampled on a time grid and metrized by

    d(a, b) = sup_t ||a(t) - b(t)||_V + ( int_0^T ||a(t) - b(t)||_Y^alpha dt )^{1/alpha},

with trapezoidal time quadrature.  The compactness functional

    N(y) = int |d/du ( |y|^{q/2-1} y )|^2 du,    N_p(y) = ||y||_H^{2(p-1)} N(y)

is discretized with one-sided differences and homogeneous Dirichlet ghost
values; it drives the coercivity checks and the moment audits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.fft import dst


class ConfigurationError(ValueError):
    """Raised when a configuration violates a structural constraint."""


@dataclass(frozen=True)
class Constants:
    """Parametric constants of the model with their admissibility chain.

    The allowed region is
    T, lam > 0; alpha, gamma > 1; beta >= max(2, gamma);
    eta >= max(beta/2, alpha/2); eta > 2; alpha > rho >= 1.
    """

    T: float
    lam: float
    alpha: float
    gamma: float
    beta: float
    eta: float
    rho: float

    def validate(self) -> None:
        checks = [
            (self.T > 0, "T must be positive"),
            (self.lam > 0, "lam must be positive"),
            (self.alpha > 1, "alpha must exceed 1"),
            (self.gamma > 1, "gamma must exceed 1"),
            (self.beta >= max(2.0, self.gamma), "beta must be >= max(2, gamma)"),
            (
                self.eta >= max(self.beta / 2.0, self.alpha / 2.0),
                "eta must be >= max(beta/2, alpha/2)",
            ),
            (self.eta > 2, "eta must exceed 2"),
            (self.alpha > self.rho, "alpha must exceed rho"),
            (self.rho >= 1, "rho must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigurationError(f"constants: {msg}")


@dataclass(frozen=True)
class SpaceConfig:
    """Grid, porous-media exponent and constants for the discretized spaces.

    J interior points at u_j = j L/(J+1); q >= 2 is the L^q exponent of Y
    (and equals alpha); the dual order of V is fixed to 3 (= d + 2 in
    dimension d = 1).
    """

    J: int
    domain_length: float
    q: float
    constants: Constants
    dual_order_V: int = 3

    def __post_init__(self):
        if self.J < 2:
            raise ConfigurationError("J must be at least 2")
        if self.domain_length <= 0:
            raise ConfigurationError("domain_length must be positive")
        if self.q < 2:
            raise ConfigurationError("q must be >= 2")
        if self.dual_order_V != 3:
            raise ConfigurationError("dual_order_V is fixed to 3 in dimension one")
        self.constants.validate()
        if abs(self.constants.alpha - self.q) > 1e-12:
            raise ConfigurationError("alpha must equal q for the porous-media instance")

    @property
    def h(self) -> float:
        return self.domain_length / (self.J + 1)

    @cached_property
    def grid(self) -> np.ndarray:
        """Interior grid points u_j, j = 1..J."""
        return self.h * np.arange(1, self.J + 1)

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues mu_k of -Laplacian_h (3-point Dirichlet stencil)."""
        k = np.arange(1, self.J + 1)
        return (2.0 * (self.J + 1) / self.domain_length) ** 2 * np.sin(
            np.pi * k / (2.0 * (self.J + 1))
        ) ** 2

    @cached_property
    def eigenbasis(self) -> np.ndarray:
        """Columns are the H-orthonormal sine eigenvectors, shape (J, J)."""
        j = np.arange(1, self.J + 1)
        k = np.arange(1, self.J + 1)
        return np.sqrt(2.0 / self.domain_length) * np.sin(
            np.pi * np.outer(j, k) / (self.J + 1)
        )

    # The type-I DST satisfies dst(dst(x)) = 2 (J+1) x, which fixes the
    # normalization of both directions below.
    def to_coeffs(self, values: np.ndarray) -> np.ndarray:
        """Sine coefficients against the H-orthonormal eigenbasis."""
        return 0.5 * self.h * np.sqrt(2.0 / self.domain_length) * dst(values, type=1, axis=-1)

    def from_coeffs(self, coeffs: np.ndarray) -> np.ndarray:
        """Grid values from sine coefficients (inverse of :meth:`to_coeffs`)."""
        return 0.5 * np.sqrt(2.0 / self.domain_length) * dst(coeffs, type=1, axis=-1)

    def laplacian(self, values: np.ndarray) -> np.ndarray:
        """3-point Dirichlet stencil, batched over leading axes."""
        padded = np.zeros(values.shape[:-1] + (self.J + 2,))
        padded[..., 1:-1] = values
        return (padded[..., 2:] - 2.0 * padded[..., 1:-1] + padded[..., :-2]) / self.h**2

    def laplacian_inv(self, values: np.ndarray) -> np.ndarray:
        """Spectral inverse of -Laplacian_h."""
        return self.from_coeffs(self.to_coeffs(values) / self.eigenvalues)


def signed_power(values: np.ndarray, p: float) -> np.ndarray:
    """Phi_p(s) = |s|^{p-1} s, elementwise.

    Multiply chains for the common exponents; float powers are an order of
    magnitude slower and sit on the simulation hot path.
    """
    if p == 1.0:
        return values
    if p == 2.0:
        return values * np.abs(values)
    if p == 3.0:
        return values * values * values
    if p == 1.5:
        return values * np.sqrt(np.abs(values))
    return np.sign(values) * np.abs(values) ** p


@dataclass(frozen=True)
class Field:
    """A state in the discretized spaces: values at the J interior points."""

    space: SpaceConfig
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.space.J,):
            raise ConfigurationError(
                f"field has shape {values.shape}, expected ({self.space.J},)"
            )
        object.__setattr__(self, "values", values)
        self.values.setflags(write=False)

    @cached_property
    def coeffs(self) -> np.ndarray:
        return self.space.to_coeffs(self.values)

    @classmethod
    def zero(cls, space: SpaceConfig) -> "Field":
        return cls(space, np.zeros(space.J))

    @classmethod
    def from_coeffs(cls, space: SpaceConfig, coeffs: np.ndarray) -> "Field":
        return cls(space, space.from_coeffs(np.asarray(coeffs, dtype=float)))

    @classmethod
    def eigenfunction(cls, space: SpaceConfig, k: int) -> "Field":
        """k-th sine eigenfunction (1-based), unit H-norm."""
        if not 1 <= k <= space.J:
            raise ConfigurationError(f"eigenfunction index {k} outside 1..{space.J}")
        return cls(space, space.eigenbasis[:, k - 1].copy())

    @classmethod
    def from_function(cls, space: SpaceConfig, fn) -> "Field":
        return cls(space, np.asarray(fn(space.grid), dtype=float))

    def norm(self, which: str) -> float:
        return norm(self, which)

    def __add__(self, other: "Field") -> "Field":
        return Field(self.space, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        return Field(self.space, self.values - other.values)

    def __rmul__(self, scalar: float) -> "Field":
        return Field(self.space, float(scalar) * self.values)


def norm(fld: Field, which: str) -> float:
    """Norm of a field in H, V, X, Y, or the duals Vstar / Ystar.

    H is the (quadrature-weighted) discrete L^2 norm; X and V weight the sine
    coefficients by mu_k^{-1} and mu_k^{-3}; Y is the discrete L^q norm.
    Vstar weights by mu_k^{+3}; Ystar is the exact dual of Y under the
    X-pairing, computed as the L^{q/(q-1)} norm of (-Laplacian_h)^{-1} x.
    """
    space = fld.space
    if which == "H":
        return float(np.sqrt(space.h * np.sum(fld.values**2)))
    if which == "Y":
        return float((space.h * np.sum(np.abs(fld.values) ** space.q)) ** (1.0 / space.q))
    if which == "X":
        return float(np.sqrt(np.sum(fld.coeffs**2 / space.eigenvalues)))
    if which == "V":
        return float(np.sqrt(np.sum(fld.coeffs**2 / space.eigenvalues**3)))
    if which == "Vstar":
        return float(np.sqrt(np.sum(fld.coeffs**2 * space.eigenvalues**3)))
    if which == "Ystar":
        conj = space.q / (space.q - 1.0)
        g = space.laplacian_inv(fld.values)
        return float((space.h * np.sum(np.abs(g) ** conj)) ** (1.0 / conj))
    raise ConfigurationError(f"unknown space {which!r}")


def nfunctional_values(space: SpaceConfig, values: np.ndarray) -> np.ndarray:
    """Compactness functional on raw (..., J) arrays.

    Discrete analogue of int |d/du Phi_{q/2}(y)|^2 du with Dirichlet ghost
    cells: one-sided differences over the J+1 cells of the padded profile.
    """
    w = signed_power(values, space.q / 2.0)
    padded = np.zeros(w.shape[:-1] + (space.J + 2,))
    padded[..., 1:-1] = w
    return np.sum(np.diff(padded, axis=-1) ** 2, axis=-1) / space.h


def nfunctional(fld: Field) -> float:
    """N(y): zero only at y = 0, q-homogeneous, controls the Y-norm."""
    return float(nfunctional_values(fld.space, fld.values))


def npfunctional(fld: Field, p: float) -> float:
    """N_p(y) = ||y||_H^{2(p-1)} N(y)."""
    return norm(fld, "H") ** (2.0 * (p - 1.0)) * nfunctional(fld)


@dataclass(frozen=True)
class PathSample:
    """A trajectory sampled on a time grid: states[i] is the field at times[i]."""

    space: SpaceConfig
    times: np.ndarray
    states: np.ndarray  # shape (M+1, J)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if times.ndim != 1 or states.shape != (times.size, self.space.J):
            raise ConfigurationError("times/states shapes are inconsistent")
        if times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise ConfigurationError("times must be strictly increasing from 0")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        self.times.setflags(write=False)
        self.states.setflags(write=False)

    def field(self, i: int) -> Field:
        return Field(self.space, self.states[i].copy())

    @property
    def terminal(self) -> Field:
        return self.field(len(self.times) - 1)


def path_metric(a: PathSample, b: PathSample) -> float:
    """Metric on sampled paths: sup-V distance plus alpha-mean Y distance."""
    if a.space is not b.space and (
        a.space.J != b.space.J or a.space.domain_length != b.space.domain_length
    ):
        raise ConfigurationError("paths live on different spatial grids")
    if a.times.shape != b.times.shape or not np.array_equal(a.times, b.times):
        raise ConfigurationError("paths live on different time grids")
    space = a.space
    diff = a.states - b.states
    coeffs = space.to_coeffs(diff)
    v_norms = np.sqrt(np.sum(coeffs**2 / space.eigenvalues**3, axis=-1))
    alpha = space.constants.alpha
    y_norms = (space.h * np.sum(np.abs(diff) ** space.q, axis=-1)) ** (1.0 / space.q)
    y_part = np.trapezoid(y_norms**alpha, a.times) ** (1.0 / alpha)
    return float(np.max(v_norms) + y_part)
