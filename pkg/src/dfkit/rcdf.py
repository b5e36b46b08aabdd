"""Regularized compressed double factorization.

The rank-one constraint on the leaf cores is lifted and the leaves are refit
to the two-electron tensor by a nested two-step optimization: quasi-Newton
descent on the antisymmetric rotation generators at fixed cores, then an
exact core solve at fixed rotations. The core solve is a linear system in
the stacked core entries, handled matrix-free by preconditioned conjugate
gradients; an L1 penalty is handled by sign-freezing sweeps around the same
solver. Cores may be penalized per entry via a weight tensor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.optimize

from . import _kernels
from ._linalg import (antisymmetric_gradient, expm_antisymmetric, frobenius_norm,
                      so_log)
from .errors import ConvergenceError
from .integrals import IntegralSet
from .xdf import DFLeaf, DFRepresentation, xdf_factorize


@dataclass
class RegularizationConfig:
    """Penalty sum_tkl rho_tkl |z^t_kl|^gamma with gamma = 1 (L1) or 2 (L2).

    ``rho`` is either a uniform non-negative scalar or a full (n_t, n, n)
    tensor of non-negative weights.
    """

    gamma: int = 2
    rho: float | np.ndarray = 0.0

    def __post_init__(self):
        if self.gamma not in (1, 2):
            raise ValueError("gamma must be 1 or 2")
        if np.any(np.asarray(self.rho) < 0):
            raise ValueError("regularization weights must be >= 0")

    def rho_tensor(self, n_t: int, n: int) -> np.ndarray:
        rho = np.asarray(self.rho, dtype=float)
        if rho.ndim == 0:
            return np.full((n_t, n, n), float(rho))
        if rho.shape != (n_t, n, n):
            raise ValueError(f"rho tensor has shape {rho.shape}, expected {(n_t, n, n)}")
        return rho


@dataclass
class LbfgsSettings:
    memory: int = 10
    grad_tol: float = 1e-8     # scaled by max(1, |cost|) at each outer cycle
    max_iters: int = 200


@dataclass
class CgSettings:
    tol: float = 1e-10         # relative residual
    max_iters: int = 10000


@dataclass
class L1Settings:
    max_sweeps: int = 40
    sign_tol: float = 1e-12


@dataclass
class OptimizerConfig:
    n_t: int
    frob_tol: float = 1e-6
    max_outer_iters: int = 50
    stagnation_tol: float = 1e-12
    lbfgs: LbfgsSettings = field(default_factory=LbfgsSettings)
    cg: CgSettings = field(default_factory=CgSettings)
    l1: L1Settings = field(default_factory=L1Settings)

    def __post_init__(self):
        if self.n_t < 1:
            raise ValueError("n_t must be >= 1")
        for name, val in (("frob_tol", self.frob_tol),
                          ("cg.tol", self.cg.tol),
                          ("lbfgs.grad_tol", self.lbfgs.grad_tol)):
            if val <= 0:
                raise ValueError(f"{name} must be > 0")


@dataclass
class GeneratorSet:
    """Antisymmetric rotation generators, one per leaf."""

    x: list

    def __post_init__(self):
        for t, mat in enumerate(self.x):
            if np.max(np.abs(mat + mat.T)) > 1e-12:
                raise ValueError(f"generator {t} is not antisymmetric")


# ---------------------------------------------------------------------------
# cost pieces
# ---------------------------------------------------------------------------

def _as_stacks(u, z):
    us = np.stack([np.asarray(m, dtype=float) for m in u]) if len(u) else np.zeros((0, 0, 0))
    zs = np.stack([np.asarray(m, dtype=float) for m in z]) if len(z) else np.zeros((0, 0, 0))
    if us.shape != zs.shape:
        raise ValueError("u and z stacks disagree in shape")
    return us, zs


def residual(u, z, eri: np.ndarray) -> np.ndarray:
    """Model-minus-target two-body tensor, built leaf by leaf.

    delta[p,q,r,s] = sum_t sum_kl u^t[p,k] u^t[q,k] z^t[k,l] u^t[r,l] u^t[s,l]
    - eri[p,q,r,s]. No six-index intermediate is materialized.
    """
    us, zs = _as_stacks(u, z)
    n = eri.shape[0]
    if us.size and us.shape[1] != n:
        raise ValueError("leaf dimension does not match eri")
    for t in range(us.shape[0]):
        if np.max(np.abs(us[t].T @ us[t] - np.eye(n))) > 1e-8:
            raise ValueError(f"u[{t}] is not orthogonal")
    return _kernels.reconstruct_two_body(us, zs) - eri


def penalty(z, reg: RegularizationConfig) -> float:
    if not len(z):
        return 0.0
    zs = np.stack(z)
    rho = reg.rho_tensor(zs.shape[0], zs.shape[1])
    return float(np.sum(rho * np.abs(zs) ** reg.gamma))


def cost(u, z, eri: np.ndarray, reg: RegularizationConfig) -> float:
    """0.5 * ||residual||_F^2 plus the configured core penalty."""
    delta = residual(u, z, eri)
    return 0.5 * float(np.sum(delta * delta)) + penalty(z, reg)


def grad_u(u, z, delta: np.ndarray):
    """Per-leaf gradient of 0.5*||delta||_F^2 with respect to the rotations.

    d/du^t[m,i] = 4 sum_qrsl delta[m,q,r,s] u^t[q,i] z^t[i,l] u^t[r,l] u^t[s,l];
    the penalty term does not involve the rotations.
    """
    us, zs = _as_stacks(u, z)
    return list(_kernels.grad_u_stack(us, zs, delta))


def grad_x(x: GeneratorSet, u, z, delta: np.ndarray):
    """Chain grad_u through the differential of the matrix exponential.

    Entry (p, q) of each returned matrix is the derivative of the cost with
    respect to the independent generator parameter x[p, q] = -x[q, p]; the
    matrices are exactly antisymmetric.
    """
    gus = grad_u(u, z, delta)
    out = []
    for xt, gu in zip(x.x, gus):
        _, mu, q = expm_antisymmetric(np.asarray(xt, dtype=float))
        out.append(antisymmetric_gradient(mu, q, gu))
    return out


# ---------------------------------------------------------------------------
# matrix-free core solve
# ---------------------------------------------------------------------------

def _overlap_squares(us: np.ndarray) -> np.ndarray:
    """s2[t, o] = (us[t].T @ us[o]) ** 2 elementwise."""
    n_t = us.shape[0]
    s2 = np.empty((n_t, n_t, us.shape[1], us.shape[1]))
    for t in range(n_t):
        for o in range(n_t):
            s2[t, o] = (us[t].T @ us[o]) ** 2
    return s2


def _pcg(apply_a: Callable, b: np.ndarray, diag: np.ndarray,
         tol: float, max_iters: int, mask: np.ndarray | None = None):
    """Jacobi-preconditioned conjugate gradients on the stacked core vector.

    Solves apply_a(z) = b from a zero start. With ``mask``, the system is
    restricted to the masked entries (the rest are pinned at zero).
    Returns (solution, iterations); raises ConvergenceError on stall.
    """
    if mask is not None:
        b = b * mask
    x = np.zeros_like(b)
    r = b.copy()
    scale = frobenius_norm(b)
    if scale == 0.0:
        return x, 0
    inv_diag = 1.0 / diag
    if mask is not None:
        inv_diag = inv_diag * mask
    zvec = r * inv_diag
    p = zvec.copy()
    rz = float(np.sum(r * zvec))
    for it in range(1, max_iters + 1):
        ap = apply_a(p)
        if mask is not None:
            ap = ap * mask
        denom = float(np.sum(p * ap))
        if denom <= 0:
            # numerically singular direction: drop it from the Krylov space
            break
        alpha = rz / denom
        x += alpha * p
        r -= alpha * ap
        if frobenius_norm(r) <= tol * scale:
            return x, it
        zvec = r * inv_diag
        rz_new = float(np.sum(r * zvec))
        beta = rz_new / rz
        rz = rz_new
        p = zvec + beta * p
    res = frobenius_norm(r) / scale
    if res <= 10 * tol:
        return x, max_iters
    raise ConvergenceError(
        f"conjugate gradients stalled at relative residual {res:.3e}", residual=res)


@dataclass
class ZSolveResult:
    z: list
    cg_iterations: int
    sweeps: int = 0


def _target_congruences(us: np.ndarray, eri: np.ndarray) -> np.ndarray:
    return _kernels.leaf_congruence(us, eri)


def solve_z_l2(u, eri: np.ndarray, rho, cg: CgSettings | None = None) -> ZSolveResult:
    """Optimal cores at fixed rotations under the squared (L2) penalty.

    Stationarity of the cost in the cores is the linear system
    (M* M + 2 diag(rho)) z = M*(eri), with M the leaf model map; only the
    operator action and its diagonal (1 + 2 rho) are formed. The system is
    solved by preconditioned conjugate gradients from a zero start and the
    solution symmetrized per leaf.
    """
    cg = cg or CgSettings()
    us = np.stack([np.asarray(m, dtype=float) for m in u])
    n_t, n, _ = us.shape
    reg = RegularizationConfig(gamma=2, rho=rho)
    rho_t = reg.rho_tensor(n_t, n)
    s2 = _overlap_squares(us)
    b = _target_congruences(us, eri)

    def apply_a(zs):
        return _kernels.apply_fit_operator(s2, zs) + 2.0 * rho_t * zs

    diag = 1.0 + 2.0 * rho_t
    z, iters = _pcg(apply_a, b, diag, cg.tol, cg.max_iters)
    z = 0.5 * (z + np.transpose(z, (0, 2, 1)))
    return ZSolveResult(z=list(z), cg_iterations=iters)


def solve_z_l1(u, eri: np.ndarray, rho, current_z,
               cg: CgSettings | None = None,
               l1: L1Settings | None = None) -> ZSolveResult:
    """Optimal cores at fixed rotations under the absolute-value (L1) penalty.

    Fixed-point iteration on the sign pattern: freeze signs from the current
    iterate, move the penalty into the right-hand side, solve the linear
    system restricted to the active entries, soft-threshold entries whose
    solution crossed zero, and reactivate pinned entries whose stationarity
    residual exceeds their weight. Stops when the sign pattern is stable.
    """
    cg = cg or CgSettings()
    l1 = l1 or L1Settings()
    us = np.stack([np.asarray(m, dtype=float) for m in u])
    n_t, n, _ = us.shape
    reg = RegularizationConfig(gamma=1, rho=rho)
    rho_t = reg.rho_tensor(n_t, n)
    s2 = _overlap_squares(us)
    b = _target_congruences(us, eri)

    def apply_a(zs):
        return _kernels.apply_fit_operator(s2, zs)

    diag = np.ones_like(b)
    total_iters = 0

    if np.all(rho_t == 0.0):
        z, iters = _pcg(apply_a, b, diag, cg.tol, cg.max_iters)
        z = 0.5 * (z + np.transpose(z, (0, 2, 1)))
        return ZSolveResult(z=list(z), cg_iterations=iters, sweeps=0)

    z = np.stack([np.asarray(m, dtype=float) for m in current_z])
    if not np.any(z):
        z, iters = _pcg(apply_a, b, diag, cg.tol, cg.max_iters)
        total_iters += iters
        z = np.where(np.abs(z) > rho_t, z, 0.0)

    signs = np.sign(z)
    for sweep in range(1, l1.max_sweeps + 1):
        active = signs != 0.0
        rhs = b - rho_t * signs
        z, iters = _pcg(apply_a, rhs, diag, cg.tol, cg.max_iters,
                        mask=active.astype(float))
        total_iters += iters
        # entries that crossed zero get soft-thresholded out
        flipped = active & (np.sign(z) * signs < 0)
        z[flipped] = 0.0
        new_signs = np.where(flipped, 0.0, np.sign(z))
        # pinned entries whose subgradient interval excludes zero re-enter
        grad0 = apply_a(z) - b
        reactivate = (~active) & (np.abs(grad0) > rho_t + l1.sign_tol)
        new_signs = np.where(reactivate, -np.sign(grad0), new_signs)
        if np.array_equal(new_signs, signs):
            z = 0.5 * (z + np.transpose(z, (0, 2, 1)))
            return ZSolveResult(z=list(z), cg_iterations=total_iters, sweeps=sweep)
        signs = new_signs
    raise ConvergenceError(
        f"L1 sign pattern failed to stabilize in {l1.max_sweeps} sweeps",
        residual=float(np.max(np.abs(apply_a(z) - b))))


def solve_z(u, eri, reg: RegularizationConfig, current_z,
            cg: CgSettings | None = None, l1: L1Settings | None = None) -> ZSolveResult:
    if reg.gamma == 2:
        return solve_z_l2(u, eri, reg.rho, cg=cg)
    return solve_z_l1(u, eri, reg.rho, current_z, cg=cg, l1=l1)


# ---------------------------------------------------------------------------
# the nested two-step optimizer
# ---------------------------------------------------------------------------

@dataclass
class RcdfResult:
    representation: DFRepresentation
    converged: bool
    cycles: int
    cost: float
    frob_error: float
    lbfgs_iterations: int
    cg_iterations: int


def _pack(xs: np.ndarray, iu) -> np.ndarray:
    return np.concatenate([x[iu] for x in xs]) if len(xs) else np.zeros(0)


def _unpack(vec: np.ndarray, n_t: int, n: int, iu) -> np.ndarray:
    per = len(iu[0])
    xs = np.zeros((n_t, n, n))
    for t in range(n_t):
        seg = vec[t * per:(t + 1) * per]
        xs[t][iu] = seg
        xs[t] -= xs[t].T
    return xs


def rcdf_optimize(integral_set: IntegralSet, init: DFRepresentation,
                  reg: RegularizationConfig, opt: OptimizerConfig,
                  trace_sink: Callable | None = None) -> RcdfResult:
    """Two-step descent on rotations and cores from a double-factorized start.

    Alternates quasi-Newton descent over all generators jointly at fixed
    cores with the exact core solve at fixed rotations, until the residual
    Frobenius norm reaches ``opt.frob_tol``, progress stagnates, or the
    cycle cap is hit. Emits one record per cycle to ``trace_sink``. The
    one-body factor and the scalar offset are taken from ``init`` unchanged:
    they are fixed by the exact integrals, not by the fit.

    Returns the best iterate; ``converged`` is False when the cap was
    reached first (partial results remain usable).
    """
    if init.n_t != opt.n_t:
        raise ValueError(f"initial representation has {init.n_t} leaves, config wants {opt.n_t}")
    n = integral_set.n
    n_t = opt.n_t
    eri = integral_set.eri
    iu = np.triu_indices(n, 1)

    xs = np.zeros((n_t, n, n))
    for t, leaf in enumerate(init.leaves):
        if np.max(np.abs(leaf.u.T @ leaf.u - np.eye(n))) > 1e-8:
            raise ValueError(f"initial rotation {t} is not orthogonal")
        xs[t] = so_log(leaf.u)
    zs = init.z_stack().copy()
    rho_t = reg.rho_tensor(n_t, n)

    def build_result(us, zs, cost_val, frob, converged, cycles, lb_total, cg_total):
        leaves = [DFLeaf(u=us[t].copy(), z=0.5 * (zs[t] + zs[t].T)) for t in range(n_t)]
        rep = DFRepresentation(n=n, one_body=init.one_body, leaves=leaves,
                               offset=init.offset)
        return RcdfResult(representation=rep, converged=converged, cycles=cycles,
                          cost=cost_val, frob_error=frob,
                          lbfgs_iterations=lb_total, cg_iterations=cg_total)

    def eval_cost_grad(vec, zs_fixed):
        xs_loc = _unpack(vec, n_t, n, iu)
        us = np.empty((n_t, n, n))
        decomps = []
        for t in range(n_t):
            u, mu, q = expm_antisymmetric(xs_loc[t])
            us[t] = u
            decomps.append((mu, q))
        delta = _kernels.reconstruct_two_body(us, zs_fixed) - eri
        c = 0.5 * float(np.sum(delta * delta)) + float(
            np.sum(rho_t * np.abs(zs_fixed) ** reg.gamma))
        gus = _kernels.grad_u_stack(us, zs_fixed, delta)
        grads = np.empty((n_t, n, n))
        for t in range(n_t):
            mu, q = decomps[t]
            grads[t] = antisymmetric_gradient(mu, q, gus[t])
        return c, _pack(grads, iu), us

    us0 = np.stack([expm_antisymmetric(xs[t])[0] for t in range(n_t)])
    delta0 = _kernels.reconstruct_two_body(us0, zs) - eri
    frob = frobenius_norm(delta0)
    cost_val = 0.5 * frob ** 2 + float(np.sum(rho_t * np.abs(zs) ** reg.gamma))

    best = (cost_val, us0.copy(), zs.copy(), frob)
    lb_total = 0
    cg_total = 0

    if frob <= opt.frob_tol:
        return build_result(us0, zs, cost_val, frob, True, 0, 0, 0)

    converged = False
    cycles = 0
    prev_cost = cost_val
    for cycle in range(1, opt.max_outer_iters + 1):
        cycles = cycle
        vec0 = _pack(xs, iu)
        lb_iters = 0
        if vec0.size:
            gtol = opt.lbfgs.grad_tol * max(1.0, abs(prev_cost))
            res = scipy.optimize.minimize(
                lambda v: eval_cost_grad(v, zs)[:2], vec0,
                jac=True, method="L-BFGS-B",
                options={"maxiter": opt.lbfgs.max_iters,
                         "maxcor": opt.lbfgs.memory,
                         "gtol": gtol, "ftol": 1e-16})
            vec = res.x
            lb_iters = int(res.nit)
            xs = _unpack(vec, n_t, n, iu)
        lb_total += lb_iters
        us = np.stack([expm_antisymmetric(xs[t])[0] for t in range(n_t)])

        zres = solve_z(list(us), eri, reg, list(zs), cg=opt.cg, l1=opt.l1)
        zs = np.stack(zres.z)
        cg_total += zres.cg_iterations

        delta = _kernels.reconstruct_two_body(us, zs) - eri
        frob = frobenius_norm(delta)
        pen = float(np.sum(rho_t * np.abs(zs) ** reg.gamma))
        cost_val = 0.5 * frob ** 2 + pen
        if trace_sink is not None:
            trace_sink({"cycle": cycle, "cost": cost_val, "frob_error": frob,
                        "penalty": pen, "cg_iters": zres.cg_iterations,
                        "lbfgs_iters": lb_iters})
        if cost_val < best[0]:
            best = (cost_val, us.copy(), zs.copy(), frob)
        if frob <= opt.frob_tol:
            converged = True
            break
        if abs(prev_cost - cost_val) <= opt.stagnation_tol * max(1.0, abs(cost_val)):
            break
        prev_cost = cost_val

    cost_val, us, zs, frob = best
    return build_result(us, zs, cost_val, frob, converged, cycles, lb_total, cg_total)


def high_penalty_truncation_init(integral_set: IntegralSet, n_t: int,
                                 rho_high: float, base_rho: float = 0.0):
    """Full factorization plus a weight tensor penalizing the trailing leaves.

    Returns ``(rep, reg)`` where the first ``n_t`` leaves carry ``base_rho``
    and the rest ``rho_high``. Run the optimizer on the pair, then drop the
    leaves whose core norm collapsed (see :func:`drop_null_leaves`).
    """
    rep = xdf_factorize(integral_set)
    full = rep.n_t
    if n_t > full:
        raise ValueError(f"n_t = {n_t} exceeds full leaf count {full}")
    n = integral_set.n
    rho = np.full((full, n, n), float(base_rho))
    rho[n_t:] = float(rho_high)
    return rep, RegularizationConfig(gamma=2, rho=rho)


def drop_null_leaves(rep: DFRepresentation, rel_tol: float = 1e-8) -> DFRepresentation:
    """Remove leaves whose core Frobenius norm fell below rel_tol * max."""
    norms = [frobenius_norm(leaf.z) for leaf in rep.leaves]
    top = max(norms, default=0.0)
    keep = [leaf for leaf, nm in zip(rep.leaves, norms) if nm > rel_tol * top]
    return DFRepresentation(n=rep.n, one_body=rep.one_body, leaves=keep,
                            offset=rep.offset)
