"""Per-bus load-ensemble transition-probability optimization.

An ensemble is a large population of cycling loads at one bus, described
by a state-probability vector rho(t) evolving under a column-stochastic
transition matrix P(t) (entry [a, b] is the probability of moving from
origin state b to destination state a). The optimizer trades energy cost
against a weighted relative-entropy penalty for deviating from the
user-preferred target matrix, solved exactly by a backward value sweep
followed by a forward probability sweep.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._kernels.pure import exact_simplex
from .errors import ConfigError, SupportViolationError


@dataclass
class EnsembleSpec:
    """One bus-located load ensemble.

    p_alpha / q_alpha: rated per-state powers in MW / MVAr.
    pbar: column-stochastic target matrix, pbar[a, b] = prob of b -> a.
    gamma: penalty weights, shape (n, n) or (T, n, n); > 0 on the support.
    energy_cost: per-state arrival cost, shape (T, n); row k applies at
        time k + 1 (the destination state of decision step k).
    rho_init: initial state distribution.
    """

    bus_id: int
    p_alpha: np.ndarray
    q_alpha: np.ndarray
    pbar: np.ndarray
    gamma: np.ndarray
    energy_cost: np.ndarray
    rho_init: np.ndarray

    def __post_init__(self):
        self.p_alpha = np.asarray(self.p_alpha, dtype=float)
        self.q_alpha = np.asarray(self.q_alpha, dtype=float)
        self.pbar = np.asarray(self.pbar, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=float)
        self.energy_cost = np.asarray(self.energy_cost, dtype=float)
        self.rho_init = np.asarray(self.rho_init, dtype=float)

        n = self.n_states
        if self.pbar.shape != (n, n):
            raise ConfigError(f"bus {self.bus_id}: target matrix must be {n}x{n}")
        if self.q_alpha.shape != (n,):
            raise ConfigError(f"bus {self.bus_id}: q_alpha must have {n} entries")
        if np.any(self.pbar < 0):
            raise ConfigError(f"bus {self.bus_id}: target matrix has negative entries")
        sums = self.pbar.sum(axis=0)
        if np.any(np.abs(sums - 1.0) > 1e-8):
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise ConfigError(
                f"bus {self.bus_id}: target matrix column {bad + 1} sums to {sums[bad]!r}, not 1"
            )
        # make every column sum exactly 1.0 so zero-cost optimization is an exact no-op
        for b in range(n):
            self.pbar[:, b] = exact_simplex(self.pbar[:, b])

        if self.gamma.ndim == 2:
            gshape = (n, n)
        elif self.gamma.ndim == 3:
            gshape = (self.horizon, n, n)
        else:
            gshape = None
        if gshape is None or self.gamma.shape != gshape:
            raise ConfigError(f"bus {self.bus_id}: gamma must be (n, n) or (T, n, n)")
        support = self.pbar > 0
        gmin = np.where(support, self.gamma if self.gamma.ndim == 2 else self.gamma.min(axis=0), np.inf)
        if np.any(gmin <= 0):
            raise ConfigError(
                f"bus {self.bus_id}: penalty weights must be positive on the target support"
            )
        if np.any(self.gamma < 0):
            raise ConfigError(f"bus {self.bus_id}: penalty weights must be nonnegative")

        if self.energy_cost.ndim != 2 or self.energy_cost.shape[1] != n:
            raise ConfigError(f"bus {self.bus_id}: energy cost table must be (T, {n})")
        if self.rho_init.shape != (n,) or np.any(self.rho_init < 0):
            raise ConfigError(f"bus {self.bus_id}: initial distribution invalid")
        if abs(self.rho_init.sum() - 1.0) > 1e-8:
            raise ConfigError(f"bus {self.bus_id}: initial distribution must sum to 1")
        self.rho_init = exact_simplex(self.rho_init)

    @property
    def n_states(self):
        return int(self.p_alpha.shape[0])

    @property
    def horizon(self):
        return int(self.energy_cost.shape[0])

    def gamma_full(self, horizon=None):
        """Penalty weights materialized to shape (T, n, n)."""
        T = self.horizon if horizon is None else horizon
        if self.gamma.ndim == 3:
            if self.gamma.shape[0] != T:
                raise ConfigError(f"bus {self.bus_id}: gamma horizon {self.gamma.shape[0]} != {T}")
            return self.gamma
        return np.broadcast_to(self.gamma, (T,) + self.gamma.shape).copy()


@dataclass
class EffectiveCost:
    """Per-state arrival costs including dual-price terms; shape (T, n)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("effective cost must be a (T, n) array")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("effective cost has non-finite entries")

    @property
    def horizon(self):
        return int(self.values.shape[0])


@dataclass
class MdpTrajectory:
    """Optimized transition matrices and state probabilities over the horizon."""

    transition: np.ndarray  # (T, n, n)
    rho: np.ndarray         # (T+1, n)
    value: np.ndarray       # (T+1, n)
    objective: float

    @property
    def horizon(self):
        return int(self.transition.shape[0])

    def implied_p(self, p_alpha):
        """Per-step ensemble injection sum_a p_alpha[a] * rho[t, a], t = 1..T."""
        return self.rho[1:] @ np.asarray(p_alpha, dtype=float)


def propagate(rho_t, p_t):
    """One step of the probability evolution: rho(t+1) = P(t) rho(t)."""
    rho_t = np.asarray(rho_t, dtype=float)
    p_t = np.asarray(p_t, dtype=float)
    if p_t.ndim != 2 or p_t.shape[0] != p_t.shape[1] or p_t.shape[1] != rho_t.shape[0]:
        raise ValueError(f"dimension mismatch: P is {p_t.shape}, rho is {rho_t.shape}")
    out = p_t @ rho_t
    return exact_simplex(out)


def effective_utility(energy_cost, lam_p, lam_q, p_alpha, q_alpha) -> EffectiveCost:
    """Combine energy cost with dual-price terms.

    energy_cost (T, n); lam_p, lam_q (T,) duals in currency per per-unit
    power; p_alpha, q_alpha (n,) state powers in per-unit.
    """
    energy_cost = np.asarray(energy_cost, dtype=float)
    lam_p = np.asarray(lam_p, dtype=float)
    lam_q = np.asarray(lam_q, dtype=float)
    p_alpha = np.asarray(p_alpha, dtype=float)
    q_alpha = np.asarray(q_alpha, dtype=float)
    T, n = energy_cost.shape
    if lam_p.shape != (T,) or lam_q.shape != (T,):
        raise ValueError("dual price vectors must have one entry per step")
    if p_alpha.shape != (n,) or q_alpha.shape != (n,):
        raise ValueError("state power vectors must have one entry per state")
    values = energy_cost + np.outer(lam_p, p_alpha) + np.outer(lam_q, q_alpha)
    return EffectiveCost(values)


def kl_stage_cost(p_t, pbar, gamma_t, u_next, rho_t):
    """One decision step of the integrated objective.

    sum_{a,b} P[a,b] * (u_next[a] + gamma[a,b] * log(P[a,b]/pbar[a,b])) * rho[b]
    with the 0 * log(0/x) = 0 convention. Raises SupportViolationError if P
    puts mass where the target matrix has none.
    """
    p_t = np.asarray(p_t, dtype=float)
    pbar = np.asarray(pbar, dtype=float)
    gamma_t = np.asarray(gamma_t, dtype=float)
    u_next = u_next.values if isinstance(u_next, EffectiveCost) else np.asarray(u_next, dtype=float)
    u_next = np.atleast_1d(np.squeeze(u_next))
    rho_t = np.asarray(rho_t, dtype=float)

    off_support = (p_t > 0) & (pbar == 0)
    if np.any(off_support):
        a, b = np.argwhere(off_support)[0]
        raise SupportViolationError(
            f"transition {b + 1} -> {a + 1} has probability {p_t[a, b]!r} "
            "but is absent from the target matrix support"
        )
    pos = p_t > 0
    kl = np.zeros_like(p_t)
    kl[pos] = gamma_t[pos] * np.log(p_t[pos] / pbar[pos])
    stage = (p_t * (u_next[:, None] + kl)) @ rho_t
    return float(stage.sum())


def backward_step_row(c, gamma_row, pbar_row):
    """Optimal transition distribution out of one origin state.

    c[a] = effective arrival cost plus continuation value at destination a.
    Returns (distribution over destinations, attained minimum).
    """
    return _kernels.backward_column(
        np.asarray(c, dtype=float),
        np.asarray(gamma_row, dtype=float),
        np.asarray(pbar_row, dtype=float),
    )


def solve_mdp(spec: EnsembleSpec, u_eff: EffectiveCost) -> MdpTrajectory:
    """Exact finite-horizon solve: backward value sweep, forward propagation.

    The backward recursion is independent of rho, so the optimized P(t)
    does not depend on the initial distribution.
    """
    T = u_eff.horizon
    gamma = np.ascontiguousarray(spec.gamma_full(T))
    P, V = _kernels.kl_backward(u_eff.values, spec.pbar, gamma)

    n = spec.n_states
    rho = np.zeros((T + 1, n))
    rho[0] = spec.rho_init
    for t in range(T):
        rho[t + 1] = propagate(rho[t], P[t])

    objective = 0.0
    for t in range(T):
        objective += kl_stage_cost(P[t], spec.pbar, gamma[t], u_eff.values[t], rho[t])
    return MdpTrajectory(transition=P, rho=rho, value=V, objective=objective)
