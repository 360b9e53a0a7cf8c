"""Relaxed controls: probability-kernel paths over a finite action space.

A relaxed control assigns to each time cell a probability vector over the
actions; its time marginal is Lebesgue by construction (every row is a
probability vector on a cell of positive length).  The control enters the
dynamics twice: the drift is averaged under the row, and the diffusion uses
the row as the mixing measure of sigma_bar.

Control paths are compared in a metric inducing weak convergence of the
time-action measures on a fixed grid: the time integral of the exact
1-Wasserstein distance between rows, with ground distance given by the
embedded action coordinates.

A :class:`ControlFamily` is a finite list of named generators -- fixed rows,
Dirac actions, or deterministic state-feedback rules -- standing in for the
(uncountable) admissible control sets, so that value-function experiments
compare the same candidates at every particle number and in the limit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mflab.coefficients import ActionSpace
from mflab.spaces import ConfigurationError, SpaceConfig


@dataclass(frozen=True)
class RelaxedControlPath:
    """Piecewise-constant control kernel: row m rules the cell [t_m, t_{m+1})."""

    actions: ActionSpace
    times: np.ndarray  # cell edges, shape (M+1,)
    cell_probs: np.ndarray  # shape (M, K)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        probs = np.asarray(self.cell_probs, dtype=float)
        if probs.shape != (times.size - 1, self.actions.K):
            raise ConfigurationError("cell_probs must have shape (len(times)-1, K)")
        if np.any(probs < -1e-15):
            raise ConfigurationError("cell probabilities must be nonnegative")
        if np.max(np.abs(probs.sum(axis=1) - 1.0)) > 1e-12:
            raise ConfigurationError("each control row must sum to one")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "cell_probs", probs)
        self.times.setflags(write=False)
        self.cell_probs.setflags(write=False)

    def row(self, cell: int) -> np.ndarray:
        if not 0 <= cell < self.cell_probs.shape[0]:
            raise IndexError(f"cell {cell} out of range")
        return self.cell_probs[cell]


def sample_action_kernel(rc: RelaxedControlPath, cell: int) -> np.ndarray:
    """The kernel value m(t, df) on a cell: the probability row itself."""
    return rc.row(cell)


def _cdf_features(actions: ActionSpace, probs: np.ndarray) -> np.ndarray:
    """Per-row CDF jumps weighted by coordinate gaps (for exact 1-D W1).

    For sorted coordinates x_(1) <= ... <= x_(K), the 1-Wasserstein distance
    between two rows is sum_k (x_(k+1) - x_(k)) |F_a(x_(k)) - F_b(x_(k))|,
    so rows map isometrically (in L1) to gap-weighted partial sums.
    """
    order = np.argsort(actions.coords, kind="stable")
    gaps = np.diff(actions.coords[order])
    cums = np.cumsum(probs[..., order], axis=-1)[..., :-1]
    return cums * gaps


def w1_rows(actions: ActionSpace, rows_a: np.ndarray, rows_b: np.ndarray) -> np.ndarray:
    """Exact W1 between probability rows on the embedded coordinates."""
    fa = _cdf_features(actions, rows_a)
    fb = _cdf_features(actions, rows_b)
    return np.sum(np.abs(fa - fb), axis=-1)


def vague_distance(a: RelaxedControlPath, b: RelaxedControlPath) -> float:
    """Time-integrated exact W1 between rows; metrizes weak convergence
    of the time-action measures on the shared grid."""
    if not np.array_equal(a.times, b.times):
        raise ConfigurationError("control paths live on different time grids")
    if not np.array_equal(a.actions.coords, b.actions.coords):
        raise ConfigurationError("control paths use different action spaces")
    dt = np.diff(a.times)
    return float(np.sum(dt * w1_rows(a.actions, a.cell_probs, b.cell_probs)))


@dataclass(frozen=True)
class ControlMember:
    """One named control generator.

    kinds:
      dirac          unit mass at ``action`` in every cell
      uniform        uniform row in every cell
      fixed          explicit (M, K) row matrix on the simulation grid
      feedback_sign  mass at ``pos_action`` when the state's spatial mean is
                     positive, else at ``neg_action`` (pure in the state)
    """

    name: str
    kind: str
    action: int | None = None
    pos_action: int | None = None
    neg_action: int | None = None
    matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("dirac", "uniform", "fixed", "feedback_sign"):
            raise ConfigurationError(f"unknown control kind {self.kind!r}")
        if self.kind == "dirac" and self.action is None:
            raise ConfigurationError(f"control {self.name!r}: dirac needs an action index")
        if self.kind == "feedback_sign" and (self.pos_action is None or self.neg_action is None):
            raise ConfigurationError(
                f"control {self.name!r}: feedback_sign needs pos_action and neg_action"
            )
        if self.kind == "fixed":
            if self.matrix is None:
                raise ConfigurationError(f"control {self.name!r}: fixed needs a row matrix")
            object.__setattr__(self, "matrix", np.asarray(self.matrix, dtype=float))

    @property
    def state_dependent(self) -> bool:
        return self.kind == "feedback_sign"

    def rows(
        self,
        actions: ActionSpace,
        cell: int,
        t: float,
        states: np.ndarray,
        space: SpaceConfig,
    ) -> np.ndarray:
        """Probability rows for every particle, shape (n, K)."""
        n = states.shape[0]
        K = actions.K
        if self.kind == "dirac":
            out = np.zeros((n, K))
            out[:, self.action] = 1.0
            return out
        if self.kind == "uniform":
            return np.full((n, K), 1.0 / K)
        if self.kind == "fixed":
            if cell >= self.matrix.shape[0]:
                raise ConfigurationError(
                    f"control {self.name!r}: fixed matrix has no row for cell {cell}"
                )
            return np.broadcast_to(self.matrix[cell], (n, K)).copy()
        # feedback_sign: spatial mean of each particle's own state
        means = space.h * np.sum(states, axis=1)
        out = np.zeros((n, K))
        out[means > 0, self.pos_action] = 1.0
        out[means <= 0, self.neg_action] = 1.0
        return out


@dataclass(frozen=True)
class ControlFamily:
    members: tuple

    def __post_init__(self):
        if len(self.members) == 0:
            raise ConfigurationError("control family must be nonempty")
        names = [m.name for m in self.members]
        if len(set(names)) != len(names):
            raise ConfigurationError("control member names must be distinct")

    def __iter__(self):
        return iter(self.members)

    def __len__(self):
        return len(self.members)

    def member(self, name: str) -> ControlMember:
        for m in self.members:
            if m.name == name:
                return m
        raise KeyError(f"no control member named {name!r}")


def family_from_config(entries: list) -> ControlFamily:
    """Build a family from config dicts ({name, kind, ...})."""
    members = []
    for entry in entries:
        members.append(
            ControlMember(
                name=entry["name"],
                kind=entry["kind"],
                action=entry.get("action"),
                pos_action=entry.get("pos_action"),
                neg_action=entry.get("neg_action"),
                matrix=entry.get("matrix"),
            )
        )
    return ControlFamily(tuple(members))
