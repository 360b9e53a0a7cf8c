"""Statistical verification of the martingale characterization.

A law solves the controlled equation iff, for smooth compactly supported g
and smooth test fields y, the process

    M^{g,y}_t = g(<X_t, y>) - int_0^t int L_{g,y}(f, s, X_s, mu_s) M(ds, df)

is a martingale, where

    L_{g,y}(f, t, v, mu) = g'(<v, y>) <b(f, t, v, mu), y>
                           + (1/2) g''(<v, y>) ||sigma*(f) y||^2.

The computable surrogate is the orthogonality form: for s < t and a bounded
weight psi_s of the trajectory up to s,  E[(M_t - M_s) psi_s] = 0.  On
simulated paths the time integral is discretized with left endpoints
(matching the Euler scheme), so a correct simulator shows a residual within
a band of 3 Monte-Carlo standard errors plus an O(dt) quadrature bias that
is itself estimated from a dt-refinement pair.

The countable dense test classes are replaced by a fixed panel of eight
(g, y) pairs: compactly supported bumps and smoothly clipped quadratics
against eigenfunctions, a rough mode mixture and a localized bump.  The
panel covers both the single-path form above (limit dynamics, expectation
over independent copies) and the n-particle form with generators summed
over particles, test fields y/n, and the system's own empirical measure in
the coefficient arguments (expectation over replicate systems).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from mflab.coefficients import CoefficientSet, EmpiricalFieldMeasure
from mflab.particles import Ensemble
from mflab.spaces import ConfigurationError, Field, SpaceConfig


@dataclass(frozen=True)
class GFunction:
    """A C^2 test function with analytic first and second derivatives."""

    name: str
    value: callable
    d1: callable
    d2: callable


def bump_g(a: float) -> GFunction:
    """Smooth bump supported on (-a, a), normalized to 1 at the origin."""

    def _parts(x):
        x = np.asarray(x, dtype=float)
        u = x / a
        inside = np.abs(u) < 1.0 - 1e-12
        w = np.where(inside, 1.0 - u**2, 1.0)
        g = np.where(inside, np.exp(1.0 - 1.0 / w), 0.0)
        return x, inside, w, g

    def value(x):
        return _parts(x)[3]

    def d1(x):
        x, inside, w, g = _parts(x)
        wp = -2.0 * x / a**2
        return np.where(inside, g * wp / w**2, 0.0)

    def d2(x):
        x, inside, w, g = _parts(x)
        wp = -2.0 * x / a**2
        wpp = -2.0 / a**2
        up = wp / w**2
        upp = wpp / w**2 - 2.0 * wp**2 / w**3
        return np.where(inside, g * (up**2 + upp), 0.0)

    return GFunction(f"bump[{a:g}]", value, d1, d2)


def clipped_quadratic_g(r_clip: float) -> GFunction:
    """x^2 inside |x| <= R, brought smoothly (C^2) to zero by |x| = 2R.

    The taper is the quintic smoothstep, whose first and second derivatives
    vanish at both ends of the transition, so g stays C^2 with compact
    support.
    """

    def _taper(r):
        t = np.clip((r - r_clip) / r_clip, 0.0, 1.0)
        s = 1.0 - (6.0 * t**5 - 15.0 * t**4 + 10.0 * t**3)
        sp = -(30.0 * t**4 - 60.0 * t**3 + 30.0 * t**2) / r_clip
        spp = -(120.0 * t**3 - 180.0 * t**2 + 60.0 * t) / r_clip**2
        return s, sp, spp

    def value(x):
        x = np.asarray(x, dtype=float)
        s, _, _ = _taper(np.abs(x))
        return x**2 * s

    def d1(x):
        x = np.asarray(x, dtype=float)
        r = np.abs(x)
        s, sp, _ = _taper(r)
        return 2.0 * x * s + x**2 * sp * np.sign(x)

    def d2(x):
        x = np.asarray(x, dtype=float)
        r = np.abs(x)
        s, sp, spp = _taper(r)
        return 2.0 * s + 4.0 * r * sp + r**2 * spp

    return GFunction(f"quad[{r_clip:g}]", value, d1, d2)


@dataclass(frozen=True)
class GeneratorSpec:
    """One panel entry: a (g, y) pair plus the weight kind for psi_s."""

    name: str
    g: GFunction
    y: Field
    psi_kind: str = "one"  # one | tanh_pair | control_mass

    def __post_init__(self):
        if self.psi_kind not in ("one", "tanh_pair", "control_mass"):
            raise ConfigurationError(f"unknown psi kind {self.psi_kind!r}")


def builtin_panel(space: SpaceConfig) -> list:
    """The default eight (g, y) specs used by the residual experiments."""
    e1 = Field.eigenfunction(space, 1)
    e2 = Field.eigenfunction(space, 2)
    kmax = min(8, space.J)
    rough_coeffs = np.zeros(space.J)
    rough_coeffs[:kmax] = 1.0 / np.arange(1, kmax + 1)
    rough = Field.from_coeffs(space, rough_coeffs)
    rough = (1.0 / rough.norm("H")) * rough
    mid = 0.35 * space.domain_length
    width = space.domain_length / 12.0
    ybump = Field(space, np.exp(-((space.grid - mid) ** 2) / (2.0 * width**2)))
    ybump = (1.0 / ybump.norm("H")) * ybump

    g_small, g_wide = bump_g(2.0), bump_g(4.0)
    q_small, q_wide = clipped_quadratic_g(3.0), clipped_quadratic_g(6.0)
    psis = ("one", "tanh_pair", "control_mass")
    entries = [
        ("bump2_e1", g_small, e1),
        ("bump2_e2", g_small, e2),
        ("bump4_rough", g_wide, rough),
        ("bump4_ybump", g_wide, ybump),
        ("quad3_e1", q_small, e1),
        ("quad3_rough", q_small, rough),
        ("quad6_e2", q_wide, e2),
        ("quad6_ybump", q_wide, ybump),
    ]
    return [
        GeneratorSpec(name, g, y, psis[i % len(psis)])
        for i, (name, g, y) in enumerate(entries)
    ]


def generator_eval(
    spec: GeneratorSpec,
    cs: CoefficientSet,
    f_idx: int,
    t: float,
    v: Field,
    mu: EmpiricalFieldMeasure,
) -> float:
    """L_{g,y} at one point of the coefficient domain."""
    space = cs.space
    theta = space.h * float(np.sum(v.values * spec.y.values))
    b = cs.drift_eval(f_idx, t, v, mu)
    pair = space.h * float(np.sum(b.values * spec.y.values))
    c2 = float(np.sum(cs.sigma_table[f_idx] ** 2 * spec.y.coeffs**2))
    g1 = float(spec.g.d1(theta))
    g2 = float(spec.g.d2(theta))
    return g1 * pair + 0.5 * g2 * c2


def _require_full_resolution(ens: Ensemble) -> None:
    if ens.times.size != ens.full_times.size:
        raise ConfigurationError(
            "martingale residuals need full-resolution paths (save_every = 1)"
        )


def _spec_tables(specs: list, cs: CoefficientSet):
    """Stacked test-field and diffusion tables: Y (J, Sp) and C2 (K, Sp)."""
    y_matrix = np.stack([s.y.values for s in specs], axis=1)
    c2 = np.stack([cs.sigma_table**2 @ s.y.coeffs**2 for s in specs], axis=1)
    return y_matrix, c2


def _control_mass_weights(ens: Ensemble, s_idx: int) -> np.ndarray:
    """Coordinate-weighted control mass on [0, s]: bounded by T max|coord|."""
    dts = np.diff(ens.times)[:s_idx]
    return (ens.control_probs[:, :s_idx, :] @ ens.actions.coords) @ dts


def _psi_weights(spec: GeneratorSpec, ens: Ensemble, theta_s: np.ndarray, s_idx: int):
    if spec.psi_kind == "one":
        return np.ones(ens.n)
    if spec.psi_kind == "tanh_pair":
        return np.tanh(theta_s)
    return _control_mass_weights(ens, s_idx)


def _check_window(ens: Ensemble, s_idx: int, t_idx: int) -> None:
    _require_full_resolution(ens)
    if not 0 <= s_idx < t_idx < ens.times.size:
        raise ConfigurationError("need grid indices 0 <= s < t <= M")


def mckean_panel(
    specs: list,
    ens: Ensemble,
    cs: CoefficientSet,
    s_idx: int,
    t_idx: int,
    flow_means: np.ndarray | None = None,
) -> list:
    """Residuals E[(M_t - M_s) psi_s] for all specs in one pass.

    Paths are treated as independent copies of the limit dynamics; the
    measure argument of the coefficients is the frozen flow when given,
    otherwise the ensemble's own mean path.  Returns [(estimate, se)] in
    spec order; the step walk is shared across specs, which is what makes
    large panels affordable.
    """
    _check_window(ens, s_idx, t_idx)
    space = ens.space
    y_matrix, c2 = _spec_tables(specs, cs)
    theta = space.h * (ens.states @ y_matrix)  # (n, S+1, Sp)
    dts = np.diff(ens.times)
    comp = np.zeros((ens.n, len(specs)))
    for u in range(s_idx, t_idx):
        states_u = ens.states[:, u, :]
        probs_u = ens.control_probs[:, u, :]
        mean_u = flow_means[u] if flow_means is not None else ens.mean_path[u]
        pair_u = space.h * (cs.mixed_drift(states_u, mean_u, probs_u) @ y_matrix)
        mix2_u = probs_u @ c2
        th_u = theta[:, u, :]
        for j, spec in enumerate(specs):
            comp[:, j] += dts[u] * (
                spec.g.d1(th_u[:, j]) * pair_u[:, j]
                + 0.5 * spec.g.d2(th_u[:, j]) * mix2_u[:, j]
            )
    out = []
    for j, spec in enumerate(specs):
        increment = (
            spec.g.value(theta[:, t_idx, j]) - spec.g.value(theta[:, s_idx, j]) - comp[:, j]
        )
        d = increment * _psi_weights(spec, ens, theta[:, s_idx, j], s_idx)
        se = float(np.std(d, ddof=1) / math.sqrt(d.size)) if d.size > 1 else 0.0
        out.append((float(np.mean(d)), se))
    return out


def martingale_residual(
    spec: GeneratorSpec,
    ens: Ensemble,
    cs: CoefficientSet,
    s_idx: int,
    t_idx: int,
    flow_means: np.ndarray | None = None,
) -> tuple[float, float]:
    """Single-spec convenience wrapper around :func:`mckean_panel`."""
    return mckean_panel([spec], ens, cs, s_idx, t_idx, flow_means)[0]


def nparticle_panel_increments(
    specs: list,
    ens: Ensemble,
    cs: CoefficientSet,
    s_idx: int,
    t_idx: int,
) -> list:
    """(M_t - M_s) psi_s of one n-particle system, one value per spec.

    Uses the summed per-particle generators with test fields y^k = y/n, so
    the paired observable is g(<mean state, y>) and the coefficient measure
    argument is the system's own empirical law.
    """
    _check_window(ens, s_idx, t_idx)
    space = ens.space
    n = ens.n
    y_matrix, c2 = _spec_tables(specs, cs)
    theta_sys = space.h * (ens.mean_path @ y_matrix)  # (S+1, Sp)
    dts = np.diff(ens.times)
    comp = np.zeros(len(specs))
    for u in range(s_idx, t_idx):
        states_u = ens.states[:, u, :]
        probs_u = ens.control_probs[:, u, :]
        b_mixed = cs.mixed_drift(states_u, ens.mean_path[u], probs_u)
        pair_u = space.h * (b_mixed.mean(axis=0) @ y_matrix)  # (Sp,)
        mix2_u = (probs_u @ c2).mean(axis=0)  # (Sp,)
        for j, spec in enumerate(specs):
            th = theta_sys[u, j]
            comp[j] += dts[u] * (
                float(spec.g.d1(th)) * pair_u[j]
                + 0.5 * float(spec.g.d2(th)) * mix2_u[j] / n
            )
    out = []
    for j, spec in enumerate(specs):
        increment = (
            float(spec.g.value(theta_sys[t_idx, j]))
            - float(spec.g.value(theta_sys[s_idx, j]))
            - comp[j]
        )
        if spec.psi_kind == "one":
            psi = 1.0
        elif spec.psi_kind == "tanh_pair":
            psi = math.tanh(theta_sys[s_idx, j])
        else:
            psi = float(np.mean(_control_mass_weights(ens, s_idx)))
        out.append(increment * psi)
    return out


def martingale_residual_nparticle(
    spec: GeneratorSpec,
    ensembles: list,
    cs: CoefficientSet,
    s_idx: int,
    t_idx: int,
) -> tuple[float, float]:
    """Estimate E[(M_t - M_s) psi_s] over replicate n-particle systems."""
    d = np.array(
        [nparticle_panel_increments([spec], e, cs, s_idx, t_idx)[0] for e in ensembles]
    )
    se = float(np.std(d, ddof=1) / math.sqrt(d.size)) if d.size > 1 else 0.0
    return float(np.mean(d)), se
