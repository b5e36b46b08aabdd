"""Measurement-scheme evaluation: shot plans, analytic variance, bias, RMSE.

Each Pauli-form basis block is measured in its own rotated all-Z basis; the
energy estimator is the constant plus the per-basis sample means. Bias is
the analytic expectation difference between the exact Hamiltonian and the
block assembly; variance composes per-basis analytic variances through the
shot allocation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PlanError, TargetUnreachableError
from .integrals import IntegralSet
from .lcu import PauliHamiltonian
from .reference import FockState, diagonal_moments, expectation_energy, rotate_orbitals


@dataclass
class MeasurementPlan:
    scheme: str                    # "uniform" | "weights" | "explicit"
    shots_total: int
    shots_per_basis: np.ndarray    # length n_t + 1
    weights: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.shots_per_basis)
        if np.any(counts < 0):
            raise PlanError("negative shot counts")
        if int(np.sum(counts)) != self.shots_total:
            raise PlanError("shot counts do not sum to shots_total")


@dataclass
class EstimatorStats:
    bias: float
    variance: float
    rmse: float
    per_basis_variance: np.ndarray
    per_basis_mean: np.ndarray
    expected_value: float


def basis_weights(h: PauliHamiltonian) -> np.ndarray:
    """L2 norm of each block's Pauli coefficients.

    Linear coefficients enter directly; a stored quadratic entry q_ij stands
    for the Pauli term 2*q_ij Z_i Z_j (i < j), so the quadratic part
    contributes sqrt(2)*||q||_F.
    """
    out = np.empty(len(h.bases))
    for i, block in enumerate(h.bases):
        out[i] = math.sqrt(float(np.sum(block.linear ** 2))
                           + 2.0 * float(np.sum(block.quadratic ** 2)))
    return out


def _largest_remainder(shares: np.ndarray, total: int) -> np.ndarray:
    """Integer apportionment preserving the exact total; ties by index."""
    floors = np.floor(shares).astype(int)
    rem = total - int(np.sum(floors))
    if rem > 0:
        frac = shares - floors
        order = np.lexsort((np.arange(len(shares)), -frac))
        floors[order[:rem]] += 1
    return floors


def allocate(h: PauliHamiltonian, scheme: str, shots_total: int,
             explicit: np.ndarray | None = None) -> MeasurementPlan:
    """Build a shot plan: uniform split, weight-proportional, or pass-through."""
    weights = basis_weights(h)
    n_bases = len(h.bases)
    if shots_total < 0:
        raise PlanError("shots_total must be >= 0")
    if scheme == "uniform":
        shares = np.full(n_bases, shots_total / n_bases)
        counts = _largest_remainder(shares, shots_total)
    elif scheme == "weights":
        total_w = float(np.sum(weights))
        if total_w == 0.0 and shots_total > 0:
            raise PlanError("all basis weights vanish; cannot allocate by weight")
        active = int(np.sum(weights > 0))
        if shots_total < active:
            raise PlanError(f"need at least {active} shots for {active} weighted bases")
        shares = weights / total_w * shots_total if total_w > 0 else np.zeros(n_bases)
        counts = _largest_remainder(shares, shots_total)
    elif scheme == "explicit":
        if explicit is None:
            raise PlanError("explicit scheme requires shot counts")
        counts = np.asarray(explicit, dtype=int)
        if len(counts) != n_bases:
            raise PlanError("explicit counts must cover every basis")
        if int(np.sum(counts)) != shots_total:
            raise PlanError("explicit counts do not sum to shots_total")
    else:
        raise PlanError(f"unknown scheme {scheme!r}")
    return MeasurementPlan(scheme=scheme, shots_total=shots_total,
                           shots_per_basis=counts, weights=weights)


def block_moments(h: PauliHamiltonian, state: FockState):
    """Analytic per-basis (mean, variance) of a state under every block.

    The state is rotated by each block's transposed rotation (measuring Z
    after the rotation circuit equals conjugating the observable).
    """
    means = np.empty(len(h.bases))
    variances = np.empty(len(h.bases))
    for i, block in enumerate(h.bases):
        rotated = rotate_orbitals(state, block.rotation.T)
        means[i], variances[i] = diagonal_moments(rotated, block)
    return means, variances


_VARIANCE_FLOOR = 1e-18


def _compose(plan: MeasurementPlan, means, variances, exact_value: float) -> EstimatorStats:
    counts = np.asarray(plan.shots_per_basis)
    scale = max(float(np.max(variances)), 1.0)
    for i, (m_i, v_i) in enumerate(zip(counts, variances)):
        if m_i == 0 and v_i > _VARIANCE_FLOOR * scale:
            raise PlanError(f"basis {i} has zero shots but nonzero variance {v_i:.3e}")
    variance = float(np.sum(np.where(counts > 0, variances / np.maximum(counts, 1), 0.0)))
    expected = float(np.sum(means))
    bias = exact_value - expected
    return EstimatorStats(bias=bias, variance=variance,
                          rmse=math.sqrt(bias ** 2 + variance),
                          per_basis_variance=variances,
                          per_basis_mean=means,
                          expected_value=expected)


def estimator_stats(integral_set: IntegralSet, h: PauliHamiltonian,
                    state: FockState, plan: MeasurementPlan) -> EstimatorStats:
    """Bias, analytic variance, and RMSE of the energy estimator.

    Bias is the exact expectation of the integral-set Hamiltonian minus the
    block assembly's expectation (constant plus block means); variance is
    sum_b var_b / shots_b. Blocks allocated zero shots must carry zero
    analytic variance (their means still enter analytically).
    """
    means, variances = block_moments(h, state)
    exact = expectation_energy(integral_set, state)
    stats = _compose(plan, means, variances, exact - h.constant)
    return EstimatorStats(bias=stats.bias, variance=stats.variance, rmse=stats.rmse,
                          per_basis_variance=stats.per_basis_variance,
                          per_basis_mean=stats.per_basis_mean,
                          expected_value=stats.expected_value + h.constant)


def gap_stats(integral_set: IntegralSet, h: PauliHamiltonian,
              singlet: FockState, triplet: FockState,
              plan_s: MeasurementPlan, plan_t: MeasurementPlan,
              exact_gap: float) -> EstimatorStats:
    """Statistics of the triplet-minus-singlet gap estimator.

    Bias is exact_gap minus the compressed-Hamiltonian gap (constants
    cancel); variance is the sum of the two states' estimator variances.
    """
    means_s, var_s = block_moments(h, singlet)
    means_t, var_t = block_moments(h, triplet)
    stats_s = _compose(plan_s, means_s, var_s, 0.0)
    stats_t = _compose(plan_t, means_t, var_t, 0.0)
    gap_model = stats_t.expected_value - stats_s.expected_value
    bias = exact_gap - gap_model
    variance = stats_s.variance + stats_t.variance
    return EstimatorStats(bias=bias, variance=variance,
                          rmse=math.sqrt(bias ** 2 + variance),
                          per_basis_variance=var_s + var_t,
                          per_basis_mean=means_t - means_s,
                          expected_value=gap_model)


def shots_to_target(integral_set: IntegralSet, h: PauliHamiltonian,
                    state: FockState, scheme: str, epsilon: float) -> int:
    """Smallest total shot count with sqrt(bias^2 + Var) <= epsilon.

    Uses the closed form of the chosen allocation in the continuous limit:
    Var(M) = K / M with K scheme-specific, so M = ceil(K / (eps^2 - bias^2)).
    """
    means, variances = block_moments(h, state)
    exact = expectation_energy(integral_set, state)
    bias = exact - (h.constant + float(np.sum(means)))
    if abs(bias) >= epsilon:
        raise TargetUnreachableError(
            f"target {epsilon:.3e} below systematic bias floor {abs(bias):.3e}",
            bias=bias)
    if scheme == "uniform":
        k = len(h.bases) * float(np.sum(variances))
    elif scheme == "weights":
        w = basis_weights(h)
        if np.any((w == 0) & (variances > _VARIANCE_FLOOR)):
            raise PlanError("a zero-weight basis carries variance")
        active = w > 0
        k = float(np.sum(w)) * float(np.sum(variances[active] / w[active]))
    else:
        raise PlanError(f"scheme {scheme!r} has no closed-form allocation")
    if k == 0.0:
        return 0
    return int(math.ceil(k / (epsilon ** 2 - bias ** 2)))


def monte_carlo_estimate(h: PauliHamiltonian, state: FockState,
                         plan: MeasurementPlan, seed) -> float:
    """One full-pipeline estimator draw: sampled mean per basis, summed."""
    from .reference import sample_basis

    rng = np.random.default_rng(seed)
    total = h.constant
    for i, block in enumerate(h.bases):
        shots = int(plan.shots_per_basis[i])
        if shots == 0:
            rotated = rotate_orbitals(state, block.rotation.T)
            mean, _ = diagonal_moments(rotated, block)
            total += mean
            continue
        rotated = rotate_orbitals(state, block.rotation.T)
        mean, _ = sample_basis(rotated, block, shots, rng.integers(2 ** 63))
        total += mean
    return total
