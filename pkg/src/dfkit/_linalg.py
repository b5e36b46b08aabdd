"""Deterministic eigendecomposition and orthogonal-matrix calculus helpers.

Sign and ordering conventions live here so that every module produces
bit-identical factors for identical inputs, including in the presence of
degenerate eigenvalues.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg


def normalize_eigenvector_signs(vecs: np.ndarray) -> np.ndarray:
    """Flip eigenvector columns so the largest-magnitude entry is positive.

    Ties on magnitude resolve to the lowest row index.
    """
    out = vecs.copy()
    for k in range(out.shape[1]):
        col = out[:, k]
        j = int(np.argmax(np.abs(col)))
        if col[j] < 0:
            out[:, k] = -col
    return out


def deterministic_eigh(a: np.ndarray, order: str = "descending"):
    """Symmetric eigendecomposition with reproducible ordering and signs.

    Args:
        a: real symmetric matrix.
        order: ``"descending"`` (by eigenvalue), ``"ascending"``, or
            ``"abs_descending"`` (by magnitude, largest first).

    Returns:
        ``(w, v)`` with ``a = v @ diag(w) @ v.T``. Columns are sign-normalized
        and ties between (near-)degenerate eigenvalues are broken by
        lexicographic comparison of the normalized column entries.
    """
    w, v = np.linalg.eigh(a)
    v = normalize_eigenvector_signs(v)
    if order == "ascending":
        key = w
    elif order == "descending":
        key = -w
    elif order == "abs_descending":
        key = -np.abs(w)
    else:
        raise ValueError(f"unknown order {order!r}")
    idx = np.argsort(key, kind="stable")
    # lexicographic tie-break inside clusters of near-equal sort keys
    scale = max(np.max(np.abs(w)), 1.0)
    idx = list(idx)
    i = 0
    while i < len(idx):
        j = i + 1
        while j < len(idx) and abs(key[idx[j]] - key[idx[i]]) <= 1e-12 * scale:
            j += 1
        if j - i > 1:
            idx[i:j] = sorted(idx[i:j], key=lambda t: tuple(np.round(v[:, t], 12)))
        i = j
    idx = np.array(idx)
    return w[idx], v[:, idx]


def make_special_orthogonal(w: np.ndarray, v: np.ndarray):
    """Ensure ``det(v) = +1`` by flipping the column of the smallest-|w| pair.

    Flipping an eigenvector sign leaves ``v @ diag(w) @ v.T`` unchanged, so
    this is free. Returns the (possibly) modified ``v``.
    """
    if np.linalg.det(v) < 0:
        k = int(np.argmin(np.abs(w)))
        v = v.copy()
        v[:, k] = -v[:, k]
    return v


def expm_antisymmetric(x: np.ndarray):
    """Exponential of a real antisymmetric matrix via a Hermitian eigenproblem.

    ``1j*x`` is Hermitian, so ``x = q @ diag(-1j*mu) @ q.conj().T`` with real
    ``mu``. Returns ``(u, mu, q)`` where ``u = exp(x)`` is real orthogonal and
    ``(mu, q)`` can be reused by :func:`dexpm_adjoint`.
    """
    mu, q = np.linalg.eigh(1j * x)
    u = (q * np.exp(-1j * mu)) @ q.conj().T
    return u.real, mu, q


def _phi_matrix(mu: np.ndarray) -> np.ndarray:
    """Divided differences of exp over the spectrum ``lam = -1j*mu``."""
    lam = -1j * mu
    d = lam[:, None] - lam[None, :]
    small = np.abs(d) < 1e-12
    num = np.exp(lam)[:, None] - np.exp(lam)[None, :]
    confluent = np.exp((lam[:, None] + lam[None, :]) / 2.0)
    return np.where(small, confluent, num / np.where(small, 1.0, d))


def dexpm_adjoint(mu: np.ndarray, q: np.ndarray, grad_u: np.ndarray) -> np.ndarray:
    """Adjoint of the differential of expm at an antisymmetric point.

    Given the unconstrained gradient ``grad_u`` of a scalar cost with respect
    to ``u = exp(x)``, returns the unconstrained gradient ``w`` with respect
    to ``x`` (not yet projected onto antisymmetric matrices):
    ``tr(w.T @ h) = tr(grad_u.T @ dexp_x[h])`` for every direction ``h``.
    """
    phi = _phi_matrix(mu)
    t = q.conj().T @ grad_u.T @ q
    w = (q @ (t * phi) @ q.conj().T).T
    return w.real


def antisymmetric_gradient(mu, q, grad_u):
    """Gradient w.r.t. the independent entries of an antisymmetric generator.

    Entry (p, q) of the result is the derivative with respect to the single
    parameter that sets ``x[p, q] = -x[q, p]``; the matrix is exactly
    antisymmetric by construction.
    """
    w = dexpm_adjoint(mu, q, grad_u)
    return w - w.T


def so_log(u: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Principal logarithm of a special-orthogonal matrix, projected antisymmetric.

    Raises if the round trip ``exp(log(u))`` misses ``u`` by more than ``tol``
    (can happen for eigenvalue pairs at -1, which do not occur for factors
    produced by this package's eigendecompositions in practice).
    """
    ell = scipy.linalg.logm(u)
    x = np.real(ell)
    x = 0.5 * (x - x.T)
    back, _, _ = expm_antisymmetric(x)
    if np.max(np.abs(back - u)) > tol:
        raise ValueError("matrix logarithm round trip failed; u too close to a 180-degree rotation")
    return x


def frobenius_norm(a: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.asarray(a) ** 2)))
