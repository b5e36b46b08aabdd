"""Hot numerical kernels with a numba fast path and a pure-numpy fallback.

The factorization optimizer spends essentially all of its time in the four
leaf contractions below, and the estimator spends its time evaluating
measurement outcomes over basis configurations. Both get an ``@njit``
implementation; set ``DFKIT_PURE_NUMPY=1`` to force the numpy path (it is
also selected automatically when numba is unavailable).

``benchmarks/bench_kernels.py`` compares the two paths.
"""

from __future__ import annotations

import os

import numpy as np

_FORCE_NUMPY = os.environ.get("DFKIT_PURE_NUMPY", "").strip() not in ("", "0")

try:  # pragma: no cover - exercised through either backend
    if _FORCE_NUMPY:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # noqa: D103 - decorator stub
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# pure-numpy reference implementations
# ---------------------------------------------------------------------------

def _outer_columns(u: np.ndarray) -> np.ndarray:
    """(n^2, n) matrix whose column k is the outer product of u[:, k] with itself."""
    n = u.shape[0]
    return np.einsum("pk,qk->pqk", u, u).reshape(n * n, n)


def reconstruct_two_body_np(us: np.ndarray, zs: np.ndarray) -> np.ndarray:
    n_t, n, _ = us.shape
    out = np.zeros((n * n, n * n))
    for t in range(n_t):
        om = _outer_columns(us[t])
        out += om @ zs[t] @ om.T
    return out.reshape(n, n, n, n)


def leaf_congruence_np(us: np.ndarray, g4: np.ndarray) -> np.ndarray:
    n_t, n, _ = us.shape
    g2 = g4.reshape(n * n, n * n)
    out = np.empty((n_t, n, n))
    for t in range(n_t):
        om = _outer_columns(us[t])
        out[t] = om.T @ g2 @ om
    return out


def grad_u_stack_np(us: np.ndarray, zs: np.ndarray, delta: np.ndarray) -> np.ndarray:
    n_t, n, _ = us.shape
    out = np.empty((n_t, n, n))
    for t in range(n_t):
        u, z = us[t], zs[t]
        # k[i, r, s] = sum_l z[i, l] u[r, l] u[s, l]
        k = np.einsum("il,rl,sl->irs", z, u, u)
        # grad[m, i] = 4 sum_qrs delta[m, q, r, s] u[q, i] k[i, r, s]
        dq = np.tensordot(delta, u, axes=([1], [0]))  # (m, r, s, i)
        out[t] = 4.0 * np.einsum("mrsi,irs->mi", dq, k)
    return out


def apply_fit_operator_np(s2: np.ndarray, zs: np.ndarray) -> np.ndarray:
    """Normal-operator action: out[t] = sum_o s2[t,o] @ zs[o] @ s2[t,o].T.

    ``s2[t, o]`` is the elementwise square of the frame overlap
    ``us[t].T @ us[o]``; the regularization diagonal is not included here.
    """
    return np.einsum("tokm,omn,toln->tkl", s2, zs, s2, optimize=True)


def f_values_np(signs: np.ndarray, linear: np.ndarray, quad: np.ndarray) -> np.ndarray:
    """Measurement outcome per configuration: s.lin + s^T quad s (zero diagonal)."""
    return signs @ linear + np.einsum("bi,ij,bj->b", signs, quad, signs)


# ---------------------------------------------------------------------------
# numba fast paths
# ---------------------------------------------------------------------------

@njit(cache=True)
def _reconstruct_two_body_nb(us, zs):  # pragma: no cover - jitted
    n_t = us.shape[0]
    n = us.shape[1]
    out = np.zeros((n, n, n, n))
    for t in range(n_t):
        u = us[t]
        uz = u @ zs[t]
        for p in range(n):
            for q in range(n):
                # row (p,q) of the leaf model: sum_l (u z)[?] -- build as
                # m[r,s] = sum_kl u[p,k] u[q,k] z[k,l] u[r,l] u[s,l]
                coeff = np.zeros(n)
                for k in range(n):
                    w = u[p, k] * u[q, k]
                    if w != 0.0:
                        for l in range(n):
                            coeff[l] += w * zs[t][k, l]
                for r in range(n):
                    for s in range(n):
                        acc = 0.0
                        for l in range(n):
                            acc += coeff[l] * u[r, l] * u[s, l]
                        out[p, q, r, s] += acc
    return out


@njit(cache=True)
def _leaf_congruence_nb(us, g4):  # pragma: no cover - jitted
    n_t = us.shape[0]
    n = us.shape[1]
    out = np.empty((n_t, n, n))
    tmp = np.empty((n, n, n))
    for t in range(n_t):
        u = us[t]
        # tmp[k, r, s] = sum_pq g4[p,q,r,s] u[p,k] u[q,k]
        for k in range(n):
            for r in range(n):
                for s in range(n):
                    acc = 0.0
                    for p in range(n):
                        up = u[p, k]
                        if up == 0.0:
                            continue
                        for q in range(n):
                            acc += g4[p, q, r, s] * up * u[q, k]
                    tmp[k, r, s] = acc
        for k in range(n):
            for l in range(n):
                acc = 0.0
                for r in range(n):
                    ur = u[r, l]
                    if ur == 0.0:
                        continue
                    for s in range(n):
                        acc += tmp[k, r, s] * ur * u[s, l]
                out[t, k, l] = acc
    return out


@njit(cache=True)
def _grad_u_stack_nb(us, zs, delta):  # pragma: no cover - jitted
    n_t = us.shape[0]
    n = us.shape[1]
    out = np.zeros((n_t, n, n))
    k3 = np.empty((n, n, n))
    for t in range(n_t):
        u = us[t]
        z = zs[t]
        for i in range(n):
            for r in range(n):
                for s in range(n):
                    acc = 0.0
                    for l in range(n):
                        acc += z[i, l] * u[r, l] * u[s, l]
                    k3[i, r, s] = acc
        for m in range(n):
            for i in range(n):
                acc = 0.0
                for q in range(n):
                    uq = u[q, i]
                    if uq == 0.0:
                        continue
                    for r in range(n):
                        for s in range(n):
                            acc += delta[m, q, r, s] * uq * k3[i, r, s]
                out[t, m, i] = 4.0 * acc
    return out


@njit(cache=True)
def _apply_fit_operator_nb(s2, zs):  # pragma: no cover - jitted
    n_t = zs.shape[0]
    n = zs.shape[1]
    out = np.zeros((n_t, n, n))
    for t in range(n_t):
        for o in range(n_t):
            w = s2[t, o]
            out[t] += w @ zs[o] @ w.T
    return out


@njit(cache=True)
def _f_values_nb(signs, linear, quad):  # pragma: no cover - jitted
    m = signs.shape[0]
    d = signs.shape[1]
    out = np.empty(m)
    for b in range(m):
        acc = 0.0
        for i in range(d):
            si = signs[b, i]
            acc += si * linear[i]
            row = 0.0
            for j in range(d):
                row += quad[i, j] * signs[b, j]
            acc += si * row
        out[b] = acc
    return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def reconstruct_two_body(us: np.ndarray, zs: np.ndarray) -> np.ndarray:
    """Two-body tensor of a leaf collection: sum_t U^t U^t Z^t U^t U^t."""
    us = np.ascontiguousarray(us, dtype=np.float64)
    zs = np.ascontiguousarray(zs, dtype=np.float64)
    if us.shape[0] == 0:
        n = us.shape[1] if us.ndim == 3 else 0
        return np.zeros((n, n, n, n))
    if HAVE_NUMBA:
        return _reconstruct_two_body_nb(us, zs)
    return reconstruct_two_body_np(us, zs)


def leaf_congruence(us: np.ndarray, g4: np.ndarray) -> np.ndarray:
    """Per-leaf congruence transform b[t] = (U^t x U^t)^T g4 (U^t x U^t)."""
    us = np.ascontiguousarray(us, dtype=np.float64)
    g4 = np.ascontiguousarray(g4, dtype=np.float64)
    if HAVE_NUMBA:
        return _leaf_congruence_nb(us, g4)
    return leaf_congruence_np(us, g4)


def grad_u_stack(us: np.ndarray, zs: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Gradient of 0.5*||delta||_F^2 with respect to each U^t (delta = model - target)."""
    us = np.ascontiguousarray(us, dtype=np.float64)
    zs = np.ascontiguousarray(zs, dtype=np.float64)
    delta = np.ascontiguousarray(delta, dtype=np.float64)
    if HAVE_NUMBA:
        return _grad_u_stack_nb(us, zs, delta)
    return grad_u_stack_np(us, zs, delta)


def apply_fit_operator(s2: np.ndarray, zs: np.ndarray) -> np.ndarray:
    s2 = np.ascontiguousarray(s2, dtype=np.float64)
    zs = np.ascontiguousarray(zs, dtype=np.float64)
    if HAVE_NUMBA:
        return _apply_fit_operator_nb(s2, zs)
    return apply_fit_operator_np(s2, zs)


def f_values(signs: np.ndarray, linear: np.ndarray, quad: np.ndarray) -> np.ndarray:
    signs = np.ascontiguousarray(signs, dtype=np.float64)
    linear = np.ascontiguousarray(linear, dtype=np.float64)
    quad = np.ascontiguousarray(quad, dtype=np.float64)
    if HAVE_NUMBA:
        return _f_values_nb(signs, linear, quad)
    return f_values_np(signs, linear, quad)
