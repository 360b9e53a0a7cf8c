"""Value functions over control families and the convergence experiments.

The uncomputable suprema over admissible-law sets are replaced by maxima
over a fixed finite control family, evaluated with the same members at every
particle number and in the limit, so finite-n and limit values are
like-for-like.  Test functionals are continuous with a declared growth
bound |psi(nu)| <= C (1 + ||nu||^alpha) that is asserted on every evaluated
ensemble.

Experiments provided here:

* value tables V^n = max over members of Monte-Carlo member values, with
  standard errors, the limit column from the fixed-point reference, and an
  independent large-n proxy column;
* epsilon-optimal member extraction from a value table;
* the particle-approximation decay experiment (exact path-law Wasserstein
  distance to the limit reference as n grows, plus time-sliced state-space
  distances and a self-distance baseline);
* the set-convergence experiment (Hausdorff distance between law sets built
  from the family at finite n and at the reference, plus the law-set
  continuity probes in the initial state).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from mflab.coefficients import CoefficientSet
from mflab.controls import ControlFamily, ControlMember
from mflab.measures import (
    LawSet,
    OuterLaw,
    empirical_state_measure,
    hausdorff,
    theta_moment,
    wasserstein_fields,
    wasserstein_paths,
)
from mflab.mckean import PicardResult, picard_mckean, sample_frozen_ensemble
from mflab.particles import Ensemble, SimConfig, simulate_particles
from mflab.rng import StreamKey
from mflab.spaces import ConfigurationError, Field


class GrowthBoundError(AssertionError):
    """A test functional violated its declared growth bound."""


@dataclass(frozen=True)
class InputFunctional:
    """Named continuous functional of an empirical path-control law.

    kinds:
      zero          constant 0 (degenerate sanity functional)
      terminal_h2   mean over paths of min(||X_T||_H^2, clip^2)
      running_cost  mean over paths of the clipped state profile integral
                    int <X_s, phi> ds plus kappa times the control cost
                    int int cost(f) M(ds, df) with cost(f) = coord(f)^2

    ``growth_c`` is the declared constant of |psi(nu)| <= C (1 + ||nu||_
    {alpha}^alpha); it is checked against the exact moment of every evaluated
    ensemble and a violation raises :class:`GrowthBoundError`.
    """

    name: str
    kind: str
    clip: float = 10.0
    kappa: float = 1.0
    profile_mode: int = 1

    def __post_init__(self):
        if self.kind not in ("zero", "terminal_h2", "running_cost"):
            raise ConfigurationError(f"unknown test functional kind {self.kind!r}")
        if self.clip <= 0:
            raise ConfigurationError("clip radius must be positive")

    def growth_c(self, ens: Ensemble) -> float:
        if self.kind == "zero":
            return 1.0
        if self.kind == "terminal_h2":
            return self.clip**2
        T = ens.space.constants.T
        coords = ens.actions.coords
        return T * self.clip + abs(self.kappa) * T * float(np.max(coords**2)) + 1.0

    def evaluate(self, ens: Ensemble) -> float:
        if self.kind == "zero":
            value = 0.0
        elif self.kind == "terminal_h2":
            h2 = ens.space.h * np.sum(ens.states[:, -1, :] ** 2, axis=1)
            value = float(np.mean(np.minimum(h2, self.clip**2)))
        else:
            space = ens.space
            phi = Field.eigenfunction(space, self.profile_mode).values
            pairings = np.clip(space.h * (ens.states @ phi), -self.clip, self.clip)
            state_part = np.trapezoid(pairings, ens.times, axis=1)
            cost = ens.actions.coords**2
            dt = np.diff(ens.times)
            control_part = np.sum((ens.control_probs @ cost) * dt, axis=1)
            value = float(np.mean(state_part + self.kappa * control_part))
        self._assert_growth(ens, value)
        return value

    def _assert_growth(self, ens: Ensemble, value: float) -> None:
        alpha = ens.space.constants.alpha
        bound = self.growth_c(ens) * (1.0 + theta_moment(ens, alpha) ** alpha)
        if abs(value) > bound + 1e-9:
            raise GrowthBoundError(
                f"functional {self.name!r} broke its growth bound: |{value:.6g}| > {bound:.6g}"
            )


@dataclass
class ValueCell:
    mean: float
    se: float
    replicates: int

    def to_dict(self) -> dict:
        return {"mean": self.mean, "se": self.se, "replicates": self.replicates}


@dataclass
class ValueReport:
    """Member values per particle count; column 0 is the limit reference."""

    member_names: list
    n_list: list
    cells: dict  # (member, n) -> ValueCell; n = 0 is the limit column
    proxy_n: int

    def value(self, n: int) -> float:
        return max(self.cells[(m, n)].mean for m in self.member_names)

    def argmax(self, n: int) -> str:
        best = self.member_names[0]
        for m in self.member_names[1:]:
            if self.cells[(m, n)].mean > self.cells[(best, n)].mean:
                best = m
        return best

    def pooled_se(self, n: int) -> float:
        return math.sqrt(sum(self.cells[(m, n)].se ** 2 for m in self.member_names))

    def gap_table(self) -> list:
        v0 = self.value(0)
        rows = []
        for n in self.n_list + [self.proxy_n]:
            rows.append(
                {
                    "n": n,
                    "value": self.value(n),
                    "gap_to_limit": abs(self.value(n) - v0),
                    "argmax": self.argmax(n),
                    "pooled_se": self.pooled_se(n),
                }
            )
        return rows

    def to_dict(self) -> dict:
        return {
            "member_names": self.member_names,
            "n_list": self.n_list,
            "proxy_n": self.proxy_n,
            "limit_value": self.value(0),
            "limit_argmax": self.argmax(0),
            "cells": {
                f"{m}@{n}": cell.to_dict() for (m, n), cell in sorted(self.cells.items())
            },
            "gap_table": self.gap_table(),
        }


def value_function(
    cs: CoefficientSet,
    family: ControlFamily,
    cfg: SimConfig,
    x0: Field,
    psi: InputFunctional,
    n_list: list,
    replicates: int,
    key: StreamKey,
    n_cloud: int = 512,
    limit_replicates: int | None = None,
    proxy_replicates: int = 4,
    picard_max_iter: int = 8,
    picard_tol: float = 1e-3,
) -> ValueReport:
    """Monte-Carlo value table over the family, finite n and the limit.

    Each (member, n) cell averages psi over independent particle runs; the
    limit column averages psi over independent fixed-point references
    (one per seed).  A large-n proxy column (4 x max n) cross-validates the
    limit column.
    """
    if replicates < 8:
        raise ConfigurationError("need at least 8 replicates for standard errors")
    limit_replicates = limit_replicates if limit_replicates is not None else max(
        4, replicates // 2
    )
    proxy_n = 4 * max(n_list)
    cells: dict = {}
    for member in family:
        for n in list(n_list) + [proxy_n]:
            reps = proxy_replicates if n == proxy_n else replicates
            vals = []
            for r in range(reps):
                ens = simulate_particles(
                    cs,
                    member,
                    cfg.replace(n_particles=n),
                    x0,
                    key=key.child("value", member.name, n, r),
                )
                vals.append(psi.evaluate(ens))
            cells[(member.name, n)] = ValueCell(
                float(np.mean(vals)),
                float(np.std(vals, ddof=1) / math.sqrt(reps)),
                reps,
            )
        vals = []
        for r in range(limit_replicates):
            res = picard_mckean(
                cs,
                member,
                cfg,
                x0,
                n_cloud=n_cloud,
                max_iter=picard_max_iter,
                tol=picard_tol,
                key=key.child("limit", member.name, r),
            )
            vals.append(psi.evaluate(res.ensemble))
        cells[(member.name, 0)] = ValueCell(
            float(np.mean(vals)),
            float(np.std(vals, ddof=1) / math.sqrt(limit_replicates)),
            limit_replicates,
        )
    return ValueReport(
        member_names=[m.name for m in family],
        n_list=list(n_list),
        cells=cells,
        proxy_n=proxy_n,
    )


def epsilon_optimal(report: ValueReport, n: int, epsilon: float) -> list:
    """Members within epsilon of the best value at particle count n,
    in declaration order (deterministic tie-break)."""
    if epsilon < 0:
        raise ConfigurationError("epsilon must be nonnegative")
    if not any(key[1] == n for key in report.cells):
        raise KeyError(f"report has no column for n = {n}")
    best = report.value(n)
    return [m for m in report.member_names if report.cells[(m, n)].mean >= best - epsilon]


@dataclass
class ChaosRow:
    n: int
    mean: float
    se: float
    replicates: int

    def to_dict(self) -> dict:
        return {"n": self.n, "distance": self.mean, "se": self.se, "replicates": self.replicates}


@dataclass
class ChaosTable:
    rows: list
    baseline: float
    fitted_rate: float
    slice_times: list
    slice_w2x: dict  # n -> list of per-time distances

    def decreasing_within_se(self) -> bool:
        for a, b in zip(self.rows, self.rows[1:]):
            if b.mean > a.mean + a.se + b.se:
                return False
        return True

    def to_dict(self) -> dict:
        return {
            "rows": [r.to_dict() for r in self.rows],
            "baseline_self_distance": self.baseline,
            "fitted_rate": self.fitted_rate,
            "decreasing_within_se": self.decreasing_within_se(),
            "slice_times": self.slice_times,
            "slice_w2x": {str(n): v for n, v in self.slice_w2x.items()},
        }


def chaos_experiment(
    cs: CoefficientSet,
    member: ControlMember,
    cfg: SimConfig,
    x0: Field,
    n_list: list,
    reference: PicardResult,
    replicates: int,
    key: StreamKey,
) -> ChaosTable:
    """Distance of n-particle empirical path laws to the limit reference.

    Emits, per n, the exact path-law Wasserstein distance (mean and standard
    error over independent runs), a time-sliced state-space distance curve,
    the self-distance baseline between two fresh reference-size draws of the
    limit dynamics, and the log-log fitted decay rate.
    """
    ref_ens = reference.ensemble
    flow = reference.flow
    n_cloud = flow.n_cloud
    if n_cloud <= max(n_list):
        raise ConfigurationError("the reference cloud must be finer than every tested n")
    rho = cs.space.constants.rho

    b1 = sample_frozen_ensemble(cs, member, cfg, x0, flow, n_cloud, key.child("baseline", 0))
    b2 = sample_frozen_ensemble(cs, member, cfg, x0, flow, n_cloud, key.child("baseline", 1))
    baseline = wasserstein_paths(b1, b2, rho)

    rows = []
    slice_w2x: dict = {}
    for n in n_list:
        ds = []
        for r in range(replicates):
            ens = simulate_particles(
                cs, member, cfg.replace(n_particles=n), x0, key=key.child("n", n, r)
            )
            ds.append(wasserstein_paths(ens, ref_ens, rho))
            if r == 0:
                slice_w2x[n] = [
                    wasserstein_fields(
                        empirical_state_measure(ens, i), flow.cloud_measure(i), 2.0, "X"
                    )
                    for i in range(ens.times.size)
                ]
        rows.append(
            ChaosRow(
                n=n,
                mean=float(np.mean(ds)),
                se=float(np.std(ds, ddof=1) / math.sqrt(replicates)) if replicates > 1 else 0.0,
                replicates=replicates,
            )
        )
    logs_n = np.log([r.n for r in rows])
    logs_d = np.log([max(r.mean, 1e-300) for r in rows])
    fitted = float(np.polyfit(logs_n, logs_d, 1)[0])
    return ChaosTable(
        rows=rows,
        baseline=baseline,
        fitted_rate=fitted,
        slice_times=[float(t) for t in ref_ens.times],
        slice_w2x=slice_w2x,
    )


@dataclass
class HausdorffTable:
    decay_rows: list  # dicts: x_label, n, h
    continuity_rows: list  # dicts: x_label, probe, dx_h, h
    baseline: float

    def to_dict(self) -> dict:
        return {
            "decay_rows": self.decay_rows,
            "continuity_rows": self.continuity_rows,
            "baseline": self.baseline,
        }


def _law_set_finite(
    cs: CoefficientSet,
    family: ControlFamily,
    cfg: SimConfig,
    x0: Field,
    n: int,
    components: int,
    key: StreamKey,
    label: str,
) -> LawSet:
    members = []
    for member in family:
        ensembles = tuple(
            simulate_particles(
                cs, member, cfg.replace(n_particles=n), x0, key=key.child(member.name, r)
            )
            for r in range(components)
        )
        members.append(OuterLaw(ensembles, tag=f"{member.name}@n={n}"))
    return LawSet(tuple(members), label=label)


def _law_set_reference(
    cs: CoefficientSet,
    family: ControlFamily,
    cfg: SimConfig,
    x0: Field,
    n_cloud: int,
    key: StreamKey,
    label: str,
    picard_max_iter: int = 8,
    picard_tol: float = 1e-3,
) -> LawSet:
    members = []
    for member in family:
        res = picard_mckean(
            cs,
            member,
            cfg,
            x0,
            n_cloud=n_cloud,
            max_iter=picard_max_iter,
            tol=picard_tol,
            key=key.child(member.name),
        )
        members.append(OuterLaw((res.ensemble,), tag=f"{member.name}@limit"))
    return LawSet(tuple(members), label=label)


def hausdorff_experiment(
    cs: CoefficientSet,
    family: ControlFamily,
    cfg: SimConfig,
    x_list: list,
    n_list: list,
    key: StreamKey,
    components: int = 3,
    n_cloud: int = 256,
    probe_scales: tuple = (0.05, 0.15, 0.45),
) -> HausdorffTable:
    """Set-convergence table: Hausdorff distance of finite-n law sets to the
    reference sets, per initial state, plus continuity probes in x.

    The continuity column compares reference law sets at x and at
    x' = x + delta * (first eigenfunction) for increasing delta, against
    ||x - x'||_H.
    """
    rho = cs.space.constants.rho
    space = cs.space
    decay_rows = []
    continuity_rows = []
    baseline = 0.0
    for xi, x0 in enumerate(x_list):
        label = f"x{xi}"
        ref_set = _law_set_reference(
            cs, family, cfg, x0, n_cloud, key.child("ref", xi), f"{label}:ref"
        )
        # a second reference draw gives the MC tolerance for "decreasing"
        ref_set_b = _law_set_reference(
            cs, family, cfg, x0, n_cloud, key.child("refb", xi), f"{label}:refb"
        )
        baseline = max(baseline, hausdorff(ref_set, ref_set_b, rho))
        for n in n_list:
            fin = _law_set_finite(
                cs, family, cfg, x0, n, components, key.child("fin", xi, n), f"{label}:n{n}"
            )
            decay_rows.append(
                {"x_label": label, "n": n, "h": hausdorff(fin, ref_set, rho)}
            )
        bump = Field.eigenfunction(space, 1)
        for pi, delta in enumerate(probe_scales):
            x_probe = Field(space, x0.values + delta * bump.values)
            probe_set = _law_set_reference(
                cs, family, cfg, x_probe, n_cloud, key.child("probe", xi, pi), f"{label}:p{pi}"
            )
            continuity_rows.append(
                {
                    "x_label": label,
                    "probe": pi,
                    "dx_h": float(delta * bump.norm("H")),
                    "h": hausdorff(probe_set, ref_set, rho),
                }
            )
    return HausdorffTable(
        decay_rows=decay_rows, continuity_rows=continuity_rows, baseline=baseline
    )
