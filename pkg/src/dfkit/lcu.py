"""Pauli/LCU assembly of a double-factorized Hamiltonian and its lambda norms.

Qubit layout: qubit 2k is the spin-up half of spatial orbital k, qubit 2k+1
the spin-down half. Every basis block is an orbital rotation followed by
all-Z measurements; coefficients are stored as one linear vector over single
Z operators and one symmetric zero-diagonal matrix over Z x Z pairs, where
the actual Pauli coefficient of Z_i Z_j (i < j) is twice the stored entry.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._linalg import deterministic_eigh, frobenius_norm
from .integrals import IntegralSet
from .xdf import DFRepresentation


@dataclass
class BasisBlock:
    """One jointly-measurable group: rotation plus Z / ZZ coefficients."""

    rotation: np.ndarray    # n x n orthogonal
    linear: np.ndarray      # length 2n
    quadratic: np.ndarray   # 2n x 2n symmetric, zero diagonal


@dataclass
class PauliHamiltonian:
    """Constant plus rotated diagonal blocks; block 0 is the one-body basis."""

    n: int
    constant: float
    bases: list = field(default_factory=list)


@dataclass
class LambdaReport:
    lambda_lcu: float
    lambda_burg: float
    one_body_part: float
    per_leaf_lcu: np.ndarray
    per_leaf_burg: np.ndarray

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "lambda_lcu": self.lambda_lcu,
            "lambda_burg": self.lambda_burg,
            "one_body": self.one_body_part,
            "per_leaf_lcu": list(self.per_leaf_lcu),
            "per_leaf_burg": list(self.per_leaf_burg),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=1)


def scalar_offset(integral_set: IntegralSet) -> float:
    """State-independent scalar of the Pauli form, from the exact integrals.

    E_c + sum_p h_pp + (1/2) sum_pq (pp|qq) - (1/4) sum_pq (pq|pq).
    """
    eri = integral_set.eri
    return float(integral_set.e_core
                 + np.trace(integral_set.h_one)
                 + 0.5 * np.einsum("ppqq->", eri)
                 - 0.25 * np.einsum("pqpq->", eri))


def _two_body_quadratic(z: np.ndarray) -> np.ndarray:
    """ZZ coefficient matrix of one leaf over 2n qubits.

    Off-diagonal z[k, l] feeds all four spin combinations of qubits
    (2k, 2k+1) x (2l, 2l+1) at weight z[k, l]/8; the diagonal z[k, k]
    contributes only the up-down cross term at the same weight (the same-spin
    same-index products are identities and cancel exactly against the
    delta subtractions).
    """
    n = z.shape[0]
    quad = np.zeros((2 * n, 2 * n))
    w = z / 8.0
    for sa in (0, 1):
        for sb in (0, 1):
            quad[sa::2, sb::2] += w
    # same-qubit entries are not ZZ terms; zero the diagonal, keep the
    # up-down cross term produced above
    np.fill_diagonal(quad, 0.0)
    return quad


def build_pauli_hamiltonian(rep: DFRepresentation) -> PauliHamiltonian:
    """Assemble measurement blocks from a (possibly compressed) representation.

    The constant and the one-body block always come from the exact integrals
    via the representation's ``offset`` and ``one_body``; compression error
    lives purely in the two-body quadratic blocks.
    """
    n = rep.n
    bases = []
    linear0 = np.repeat(-0.5 * rep.one_body.f_eigs, 2)
    bases.append(BasisBlock(rotation=rep.one_body.u0.copy(),
                            linear=linear0,
                            quadratic=np.zeros((2 * n, 2 * n))))
    for leaf in rep.leaves:
        bases.append(BasisBlock(rotation=leaf.u.copy(),
                                linear=np.zeros(2 * n),
                                quadratic=_two_body_quadratic(leaf.z)))
    return PauliHamiltonian(n=n, constant=rep.offset, bases=bases)


def reconstruct_eri(rep: DFRepresentation) -> np.ndarray:
    """Two-body tensor implied by the representation's leaves."""
    return _kernels.reconstruct_two_body(rep.u_stack(), rep.z_stack())


def frobenius_error(rep: DFRepresentation, eri: np.ndarray) -> float:
    return frobenius_norm(reconstruct_eri(rep) - eri)


def leaf_sqrt(z: np.ndarray) -> np.ndarray:
    """Symmetric (possibly complex) square root with W @ W.T = z.

    Eigendecompose the symmetric core and take principal roots; negative
    eigenvalues give purely imaginary columns.
    """
    if np.max(np.abs(z - z.T)) > 1e-10 * max(1.0, float(np.max(np.abs(z)))):
        raise ValueError("leaf core must be symmetric")
    w, v = np.linalg.eigh(0.5 * (z + z.T))
    roots = np.sqrt(w.astype(complex))
    return (v * roots) @ v.T


def lambda_report(rep: DFRepresentation) -> LambdaReport:
    """Evaluate both lambda norms of a representation.

    lambda_LCU is the coefficient 1-norm of the Pauli form,
    sum_k |f_k| + sum_t ( sum_{k<l} |z_kl| + (1/4) sum_k |z_kk| );
    lambda_Burg recasts each leaf through its matrix square root W,
    sum_k |f_k| + (1/4) sum_t sum_i ( sum_k |W^t_ki| )^2, with |.| the
    complex modulus.
    """
    one_body = float(np.sum(np.abs(rep.one_body.f_eigs)))
    upper = np.triu_indices(rep.n, 1)
    per_leaf_lcu = np.empty(rep.n_t)
    per_leaf_burg = np.empty(rep.n_t)
    for t, leaf in enumerate(rep.leaves):
        per_leaf_lcu[t] = (np.sum(np.abs(leaf.z[upper]))
                           + 0.25 * np.sum(np.abs(np.diag(leaf.z))))
        w = leaf_sqrt(leaf.z)
        per_leaf_burg[t] = 0.25 * float(np.sum(np.sum(np.abs(w), axis=0) ** 2))
    return LambdaReport(lambda_lcu=one_body + float(np.sum(per_leaf_lcu)),
                        lambda_burg=one_body + float(np.sum(per_leaf_burg)),
                        one_body_part=one_body,
                        per_leaf_lcu=per_leaf_lcu,
                        per_leaf_burg=per_leaf_burg)


def lambda_lcu(rep: DFRepresentation) -> float:
    return lambda_report(rep).lambda_lcu


def lambda_burg(rep: DFRepresentation) -> float:
    return lambda_report(rep).lambda_burg


@dataclass
class CholeskyDF:
    """Screened per-leaf eigenpairs of the sum-of-squares factorization."""

    rank: int
    frob_error: float
    lambda_value: float
    leaf_eigs: list   # per retained leaf: (u, screened eigenvalue vector, g)


def cholesky_df_lambda(integral_set: IntegralSet, threshold: float) -> CholeskyDF:
    """Eigen-route sum-of-squares factorization with per-eigenvalue screening.

    Builds L^t = sqrt(g_t) V^t (signs of indefinite g folded into the square),
    zeroes per-leaf eigenvalues with sqrt(|g_t|)|lam| below ``threshold``, and
    reports surviving rank, reconstruction error, and the one-body part plus
    (1/4) sum_t ||screened L^t||_1^2.
    """
    from .xdf import xdf_factorize

    rep = xdf_factorize(integral_set)
    one_body = float(np.sum(np.abs(rep.one_body.f_eigs)))
    n = integral_set.n
    model = np.zeros((n, n, n, n))
    lam_sum_sq = 0.0
    rank = 0
    kept = []
    for leaf in rep.leaves:
        g = leaf.g
        lam_leaf, u = deterministic_eigh(leaf.v, order="descending")
        scaled = np.sqrt(abs(g)) * np.abs(lam_leaf)
        lam_screened = np.where(scaled >= threshold, lam_leaf, 0.0)
        if not np.any(lam_screened):
            continue
        rank += 1
        kept.append((u, np.sqrt(abs(g)) * lam_screened, g))
        v_screened = (u * lam_screened) @ u.T
        model += g * np.einsum("pq,rs->pqrs", v_screened, v_screened)
        lam_sum_sq += abs(g) * float(np.sum(np.abs(lam_screened))) ** 2
    err = frobenius_norm(model - integral_set.eri)
    return CholeskyDF(rank=rank, frob_error=err,
                      lambda_value=one_body + 0.25 * lam_sum_sq,
                      leaf_eigs=kept)


def lambda_table_text(report: LambdaReport, n_t: int, frob_error: float | None = None) -> str:
    """Aligned text rendering of a lambda report."""
    rows = [("n_t", str(n_t)),
            ("lambda_LCU", f"{report.lambda_lcu:.6f}"),
            ("lambda_Burg", f"{report.lambda_burg:.6f}"),
            ("one-body part", f"{report.one_body_part:.6f}")]
    if frob_error is not None:
        rows.insert(1, ("frob_error", f"{frob_error:.6e}"))
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)
