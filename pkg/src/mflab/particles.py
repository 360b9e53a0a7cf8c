"""Simulation of the controlled interacting particle system.

Each of the n particles follows the explicit Euler-Maruyama update

    Y^k_{m+1} = Y^k_m + dt [ Lap_h Phi_q(Y^k_m) + (Y^k_m - mean_n(Y_m))
                             + sum_j p^k_{m,j} c(f_j) ]
                + sigma_bar(p^k_m) dW^k_m,

with the noise expanded on the leading sine modes and per-(particle, step)
counter-based streams: the increment of particle k at step m is a fixed
function of (seed, k, m), independent of ensemble size and scheduling.  In
frozen-flow mode the interaction mean is read from a prescribed measure flow
instead of the ensemble, which is how the McKean-Vlasov solver reuses this
integrator.

The explicit scheme is conditionally stable; :func:`adaptive_dt` returns a
locally stable step for the nonlinear diffusion and a blow-up guard aborts
with context when a state norm passes the configured ceiling.

:func:`moment_report` audits the simulated paths against the closed-form
a-priori bounds: particle-averaged running moments against
(1 + 2 ||x||^{2p}) exp{6 lam p T (1 + 18 p)} and the combined
moment-plus-energy functional against its explicit ceiling.  Both are
evaluated in log space because the bounds are astronomically loose by
design; a failure indicates a bug, not a near miss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.special import logsumexp

from mflab.coefficients import ActionSpace, CoefficientSet
from mflab.controls import ControlMember, RelaxedControlPath
from mflab.rng import StreamKey, master_key, normal_matrix
from mflab.spaces import (
    ConfigurationError,
    Field,
    PathSample,
    SpaceConfig,
    nfunctional_values,
)


class BlowUpError(RuntimeError):
    """Explicit-scheme instability: a state norm passed the ceiling."""

    def __init__(self, step: int, time: float, norm: float, ceiling: float):
        self.step = step
        self.time = time
        self.norm = norm
        super().__init__(
            f"state H-norm {norm:.3e} exceeded ceiling {ceiling:.3e} at step {step} "
            f"(t = {time:.6g}); reduce the time step or enable adaptive dt"
        )


@dataclass(frozen=True)
class SimConfig:
    """Particle count, time stepping, noise truncation and safety rails."""

    n_particles: int
    M_steps: int
    rng_seed: int
    dt_policy: str = "fixed"
    base_dt: float | None = None
    noise_modes: int = 8
    cutoff_m: float | None = None
    save_every: int = 1
    blowup_ceiling: float = 1e6

    def __post_init__(self):
        if self.n_particles < 1:
            raise ConfigurationError("n_particles must be at least 1")
        if self.M_steps < 1:
            raise ConfigurationError("M_steps must be at least 1")
        if self.dt_policy not in ("fixed", "adaptive"):
            raise ConfigurationError("dt_policy must be 'fixed' or 'adaptive'")
        if self.base_dt is not None and self.base_dt <= 0:
            raise ConfigurationError("base_dt must be positive")
        if self.noise_modes < 1:
            raise ConfigurationError("noise_modes must be at least 1")
        if self.cutoff_m is not None and self.cutoff_m <= 0:
            raise ConfigurationError("cutoff_m must be positive when set")
        if self.save_every < 1:
            raise ConfigurationError("save_every must be at least 1")

    def fixed_dt(self, T: float) -> float:
        dt = self.base_dt if self.base_dt is not None else T / self.M_steps
        if abs(self.M_steps * dt - T) > 1e-9 * max(1.0, T):
            raise ConfigurationError("fixed policy requires M_steps * dt == T")
        return dt

    def replace(self, **kw) -> "SimConfig":
        from dataclasses import replace

        return replace(self, **kw)


def adaptive_dt(y_max_abs: float, cfg: SimConfig, space: SpaceConfig) -> float:
    """Locally stable explicit step for the degenerate diffusion.

    The linearization of Lap_h Phi_q has modulus at most
    (q-1) |y|^{q-2} * 4/h^2, so dt = safety * h^2 / ((q-1) max(1,|y|)^{q-2})
    with safety = 0.25 keeps the step inside the stability region; the
    max(1, .) floor avoids division blow-up near zero states.
    """
    safety = 0.25
    cap = safety * space.h**2 / ((space.q - 1.0) * max(1.0, y_max_abs) ** (space.q - 2.0))
    if cfg.base_dt is None:
        return cap
    return min(cfg.base_dt, cap)


def smooth_cutoff(r: float, m: float) -> float:
    """C-infinity cutoff: 1 on [0, m], 0 on [2m, inf)."""
    if r <= m:
        return 1.0
    if r >= 2.0 * m:
        return 0.0

    def b(x):
        return math.exp(-1.0 / x) if x > 0 else 0.0

    up, down = b((2.0 * m - r) / m), b((r - m) / m)
    return up / (up + down)


@dataclass(frozen=True)
class ControlledPath:
    """One particle's trajectory together with its realized control path."""

    path: PathSample
    control: RelaxedControlPath


@dataclass(frozen=True)
class Ensemble:
    """n controlled paths sharing grid and initial state.

    Represents the joint empirical law of states and controls.  ``states``
    holds the paths on the stored grid; ``mean_path`` keeps the particle
    mean at full step resolution (the interaction statistic), which the
    fixed-point solver consumes.
    """

    space: SpaceConfig
    actions: ActionSpace
    times: np.ndarray  # stored grid, shape (S+1,)
    states: np.ndarray  # (n, S+1, J)
    control_probs: np.ndarray  # (n, S, K)
    full_times: np.ndarray  # (M+1,)
    mean_path: np.ndarray  # (M+1, J)
    init_values: np.ndarray  # (J,)
    provenance: dict = dc_field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.states.shape[0]

    def path(self, k: int) -> PathSample:
        return PathSample(self.space, self.times.copy(), self.states[k].copy())

    def control_path(self, k: int) -> RelaxedControlPath:
        return RelaxedControlPath(self.actions, self.times.copy(), self.control_probs[k].copy())

    def controlled_path(self, k: int) -> ControlledPath:
        return ControlledPath(self.path(k), self.control_path(k))

    def init_field(self) -> Field:
        return Field(self.space, self.init_values.copy())

    def permuted(self, perm: np.ndarray) -> "Ensemble":
        return Ensemble(
            space=self.space,
            actions=self.actions,
            times=self.times,
            states=self.states[perm],
            control_probs=self.control_probs[perm],
            full_times=self.full_times,
            mean_path=self.mean_path,
            init_values=self.init_values,
            provenance=dict(self.provenance, permuted=True),
        )


def simulate_particles(
    cs: CoefficientSet,
    member: ControlMember,
    cfg: SimConfig,
    x0: Field,
    frozen_means: np.ndarray | None = None,
    key: StreamKey | None = None,
) -> Ensemble:
    """Run the particle system; deterministic given (cfg.rng_seed, key).

    ``frozen_means`` (shape (M_steps+1, J)) switches the interaction term to
    a prescribed mean flow (independent copies of the limit dynamics).  With
    the adaptive policy the step count is not known in advance, so frozen
    flows and ``fixed`` row-matrix controls require the fixed policy.
    """
    space = cs.space
    T = space.constants.T
    if x0.space.J != space.J:
        raise ConfigurationError("initial state lives on a different grid")
    modes = cfg.noise_modes
    if modes > space.J:
        raise ConfigurationError("noise_modes cannot exceed the number of grid points")
    adaptive = cfg.dt_policy == "adaptive"
    if adaptive and frozen_means is not None:
        raise ConfigurationError("frozen-flow simulation requires the fixed dt policy")
    if key is None:
        key = master_key(cfg.rng_seed, "sim")

    n = cfg.n_particles
    basis = space.eigenbasis[:, :modes]  # (J, modes)
    sigma_sq = cs.sigma_table[:, :modes] ** 2  # (K, modes)

    Y = np.tile(x0.values, (n, 1))
    t = 0.0
    dt_fixed = None if adaptive else cfg.fixed_dt(T)

    stored_states = [Y.copy()]
    stored_times = [0.0]
    stored_rows = []
    full_times = [0.0]
    mean_path = [Y.mean(axis=0)]

    m = 0
    while True:
        if adaptive:
            if t >= T - 1e-14:
                break
            dt = min(adaptive_dt(float(np.max(np.abs(Y))), cfg, space), T - t)
        else:
            if m >= cfg.M_steps:
                break
            dt = dt_fixed

        probs = member.rows(cs.actions, m, t, Y, space)  # (n, K)
        mean = frozen_means[m] if frozen_means is not None else Y.mean(axis=0)
        drift = cs.mixed_drift(Y, mean, probs)
        if cfg.cutoff_m is not None:
            total = float(np.sum(np.sqrt(space.h * np.sum(Y**2, axis=1))))
            drift = smooth_cutoff(total, cfg.cutoff_m) * drift

        diag = np.sqrt(probs @ sigma_sq)  # (n, modes): sigma_bar under the row
        xi = normal_matrix(key.child("step", m), n, modes)
        Y = Y + dt * drift + math.sqrt(dt) * (diag * xi) @ basis.T

        worst = float(np.max(np.sqrt(space.h * np.sum(Y**2, axis=1))))
        if worst > cfg.blowup_ceiling:
            raise BlowUpError(m, t + dt, worst, cfg.blowup_ceiling)

        if m % cfg.save_every == 0:
            stored_rows.append(probs)
        t = t + dt
        m += 1
        full_times.append(t)
        mean_path.append(Y.mean(axis=0))
        if m % cfg.save_every == 0 or (not adaptive and m == cfg.M_steps) or (
            adaptive and t >= T - 1e-14
        ):
            if stored_times[-1] != t:
                stored_states.append(Y.copy())
                stored_times.append(t)

    # one control row per stored cell (left endpoints of the stored grid)
    n_cells = len(stored_times) - 1
    rows = np.stack(stored_rows[:n_cells], axis=1) if n_cells else np.zeros((n, 0, cs.actions.K))

    return Ensemble(
        space=space,
        actions=cs.actions,
        times=np.asarray(stored_times),
        states=np.stack(stored_states, axis=1),
        control_probs=rows,
        full_times=np.asarray(full_times),
        mean_path=np.stack(mean_path),
        init_values=x0.values.copy(),
        provenance={
            "seed": cfg.rng_seed,
            "key": tuple(key.lanes),
            "member": member.name,
            "n_particles": n,
            "dt_policy": cfg.dt_policy,
            "steps": m,
            "noise_modes": modes,
            "sigma_tail": cs.sigma_tail(modes),
        },
    )


def exact_modal_heat(
    space: SpaceConfig, x0_values: np.ndarray, t: float, discrete: bool = True
) -> np.ndarray:
    """Heat-equation solution by modal decay.

    ``discrete=True`` uses the stencil eigenvalues (exact-in-time solution of
    the semi-discrete system); ``discrete=False`` uses the continuum Dirichlet
    eigenvalues (k pi / L)^2, i.e. the true PDE solution sampled on the grid.
    """
    coeffs = space.to_coeffs(x0_values)
    if discrete:
        lam = space.eigenvalues
    else:
        k = np.arange(1, space.J + 1)
        lam = (k * np.pi / space.domain_length) ** 2
    return space.from_coeffs(coeffs * np.exp(-lam * t))


# -- moment audits -----------------------------------------------------------


@dataclass
class MomentEntry:
    p: float
    empirical: float
    log10_empirical: float
    log10_bound: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "empirical": self.empirical,
            "log10_empirical": self.log10_empirical,
            "log10_bound": self.log10_bound,
            "passed": self.passed,
        }


@dataclass
class MomentReport:
    entries: list
    energy_integral: float  # time integral of N along the paths (mean over particles)
    energy_integral_high: float  # same for N_{beta/2+1}
    j_empirical_log10: float
    j_bound_log10: float
    j_passed: bool

    @property
    def all_passed(self) -> bool:
        return self.j_passed and all(e.passed for e in self.entries)

    def to_dict(self) -> dict:
        return {
            "entries": [e.to_dict() for e in self.entries],
            "energy_integral": self.energy_integral,
            "energy_integral_high": self.energy_integral_high,
            "j_empirical_log10": self.j_empirical_log10,
            "j_bound_log10": self.j_bound_log10,
            "j_passed": self.j_passed,
            "all_passed": self.all_passed,
        }


def moment_bound_log(x_h: float, p: float, lam: float, T: float) -> float:
    """log of (1 + 2 ||x||^{2p}) exp{6 lam p T (1 + 18 p)}."""
    return math.log1p(2.0 * x_h ** (2.0 * p)) + 6.0 * lam * p * T * (1.0 + 18.0 * p)


def _energy_bound_terms_log(x_h: float, p: float, lam: float, T: float) -> list:
    """log-terms of (1/2p)[||x||^{2p} + lam p T (2p+1)(1 + 3 e^{6 lam p T (1+18p)} (1+2||x||^{2p}))]."""
    terms = []
    if x_h > 0:
        terms.append(math.log(x_h ** (2.0 * p) / (2.0 * p)))
    terms.append(math.log(lam * T * (2.0 * p + 1.0) / 2.0))
    terms.append(
        math.log(3.0 * lam * T * (2.0 * p + 1.0) / 2.0)
        + 6.0 * lam * p * T * (1.0 + 18.0 * p)
        + math.log1p(2.0 * x_h ** (2.0 * p))
    )
    return terms


def j_ceiling_log(x_h: float, constants) -> float:
    """log of the explicit admissibility ceiling at initial H-norm x_h.

    Sum of the sup-moment bound at p = eta and the two energy-integral
    bounds at p = 1 and p = beta/2 + 1; evaluated in log space since the
    exponentials overflow double precision for calibrated lam.
    """
    lam, T, beta, eta = constants.lam, constants.T, constants.beta, constants.eta
    terms = [moment_bound_log(x_h, eta, lam, T)]
    terms += _energy_bound_terms_log(x_h, 1.0, lam, T)
    terms += _energy_bound_terms_log(x_h, beta / 2.0 + 1.0, lam, T)
    return float(logsumexp(terms))


def moment_report(ens: Ensemble, p_list: list, constants=None) -> MomentReport:
    """Audit particle-averaged moments and energies against the closed bounds."""
    space = ens.space
    consts = constants if constants is not None else space.constants
    lam, T, beta = consts.lam, consts.T, consts.beta
    x_h = float(np.sqrt(space.h * np.sum(ens.init_values**2)))

    h_norms = np.sqrt(space.h * np.sum(ens.states**2, axis=2))  # (n, S+1)
    sup_h = h_norms.max(axis=1)  # (n,)

    entries = []
    for p in p_list:
        if p < 1:
            raise ConfigurationError("moment orders must satisfy p >= 1")
        emp = float(np.mean(sup_h ** (2.0 * p)))
        log_emp = math.log(emp) if emp > 0 else -math.inf
        log_bound = moment_bound_log(x_h, p, lam, T)
        entries.append(
            MomentEntry(
                p=float(p),
                empirical=emp,
                log10_empirical=log_emp / math.log(10.0),
                log10_bound=log_bound / math.log(10.0),
                passed=log_emp <= log_bound,
            )
        )

    energies = nfunctional_values(space, ens.states)  # (n, S+1)
    p_high = beta / 2.0 + 1.0
    energies_high = h_norms ** (2.0 * (p_high - 1.0)) * energies
    int_n = float(np.mean(np.trapezoid(energies, ens.times, axis=1)))
    int_nh = float(np.mean(np.trapezoid(energies_high, ens.times, axis=1)))

    eta = consts.eta
    j_emp = float(np.mean(sup_h ** (2.0 * eta))) + int_n + int_nh
    j_emp_log = math.log(j_emp) if j_emp > 0 else -math.inf
    j_bound_log = j_ceiling_log(x_h, consts)

    return MomentReport(
        entries=entries,
        energy_integral=int_n,
        energy_integral_high=int_nh,
        j_empirical_log10=j_emp_log / math.log(10.0),
        j_bound_log10=j_bound_log / math.log(10.0),
        j_passed=j_emp_log <= j_bound_log,
    )
