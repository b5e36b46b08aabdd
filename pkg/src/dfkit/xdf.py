"""Explicit double factorization of integral sets.

The two-electron tensor, viewed over grouped (pq),(rs) indices, is
eigendecomposed; each retained eigen-matrix is symmetric (a consequence of
8-fold symmetry) and is eigendecomposed again, yielding per-leaf orthogonal
rotations U^t and rank-one symmetric cores Z^t. The modified one-body tensor
gets a single diagonalization of its own.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._linalg import deterministic_eigh, frobenius_norm, make_special_orthogonal
from .errors import SymmetryError
from .integrals import IntegralSet, validate


@dataclass
class OneBodyFactor:
    """Eigendecomposition of the modified one-electron tensor (Hartree)."""

    f_matrix: np.ndarray   # n x n symmetric
    u0: np.ndarray         # n x n special orthogonal
    f_eigs: np.ndarray     # length n, descending


@dataclass
class DFLeaf:
    """One factorization term: rotation ``u`` and symmetric core ``z``.

    ``g`` and ``v`` record the grouped-eigendecomposition origin when the
    leaf came out of exact X-DF; optimized leaves leave them as None.
    """

    u: np.ndarray
    z: np.ndarray
    g: float | None = None
    v: np.ndarray | None = None


@dataclass
class DFRepresentation:
    """One-body factor, ordered two-body leaves, and the scalar offset."""

    n: int
    one_body: OneBodyFactor
    leaves: list = field(default_factory=list)
    offset: float = 0.0

    @property
    def n_t(self) -> int:
        return len(self.leaves)

    def u_stack(self) -> np.ndarray:
        if not self.leaves:
            return np.zeros((0, self.n, self.n))
        return np.stack([leaf.u for leaf in self.leaves])

    def z_stack(self) -> np.ndarray:
        if not self.leaves:
            return np.zeros((0, self.n, self.n))
        return np.stack([leaf.z for leaf in self.leaves])


def build_one_body_factor(integral_set: IntegralSet) -> OneBodyFactor:
    """Contract and diagonalize the modified one-electron tensor.

    f_pq = h_pq - (1/2) sum_r (pr|qr) + sum_r (pq|rr), eigenvalues sorted
    descending with deterministic eigenvector signs and det(u0) = +1.
    """
    problems = validate(integral_set, tol=1e-8)
    if problems:
        raise SymmetryError(f"integral set fails symmetry validation: {problems[0]}")
    eri = integral_set.eri
    f = (integral_set.h_one
         - 0.5 * np.einsum("prqr->pq", eri)
         + np.einsum("pqrr->pq", eri))
    w, v = deterministic_eigh(f, order="descending")
    v = make_special_orthogonal(w, v)
    return OneBodyFactor(f_matrix=f, u0=v, f_eigs=w)


def xdf_factorize(integral_set: IntegralSet, eig_cutoff: float | None = None) -> DFRepresentation:
    """Exact double factorization, leaves ordered by descending |eigenvalue|.

    Args:
        integral_set: validated integrals.
        eig_cutoff: drop grouped-index eigenvalues with |g| <= cutoff. The
            default 1e-12 * max|g| discards numerical noise so the
            eigen-matrix symmetry check stays well posed.

    Raises:
        SymmetryError: a retained eigen-matrix is asymmetric beyond 1e-6,
            which signals a non-8-fold-symmetric input.
    """
    from .lcu import scalar_offset

    n = integral_set.n
    one_body = build_one_body_factor(integral_set)
    grouped = integral_set.eri.reshape(n * n, n * n)
    g, vecs = deterministic_eigh(grouped, order="abs_descending")
    if eig_cutoff is None:
        eig_cutoff = 1e-12 * max(float(np.max(np.abs(g))), 1.0) if g.size else 0.0
    if eig_cutoff < 0:
        raise ValueError("eig_cutoff must be >= 0")

    leaves = []
    for t in range(len(g)):
        if abs(g[t]) <= eig_cutoff:
            continue
        v_mat = vecs[:, t].reshape(n, n)
        asym = float(np.max(np.abs(v_mat - v_mat.T)))
        if asym > 1e-6:
            raise SymmetryError(
                f"eigen-matrix {t} asymmetric by {asym:.3e}; "
                "two-electron tensor is not 8-fold symmetric")
        v_mat = 0.5 * (v_mat + v_mat.T)
        lam, u = deterministic_eigh(v_mat, order="descending")
        u = make_special_orthogonal(lam, u)
        z = float(g[t]) * np.outer(lam, lam)
        leaves.append(DFLeaf(u=u, z=z, g=float(g[t]), v=v_mat))

    return DFRepresentation(n=n, one_body=one_body, leaves=leaves,
                            offset=scalar_offset(integral_set))


def truncate(rep: DFRepresentation, n_t: int) -> DFRepresentation:
    """Keep the first ``n_t`` leaves; one-body factor and offset are unchanged."""
    if n_t < 0 or n_t > len(rep.leaves):
        raise ValueError(f"n_t = {n_t} outside [0, {len(rep.leaves)}]")
    return DFRepresentation(n=rep.n, one_body=rep.one_body,
                            leaves=list(rep.leaves[:n_t]), offset=rep.offset)


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------

def rep_to_json_dict(rep: DFRepresentation) -> dict:
    return {
        "schema_version": 1,
        "n": rep.n,
        "n_t": rep.n_t,
        "offset": rep.offset,
        "one_body": {
            "u0": rep.one_body.u0.tolist(),
            "f_eigs": rep.one_body.f_eigs.tolist(),
        },
        "leaves": [
            {"u": leaf.u.tolist(), "z": leaf.z.tolist(), "g": leaf.g}
            for leaf in rep.leaves
        ],
    }


def rep_to_json(rep: DFRepresentation) -> str:
    return json.dumps(rep_to_json_dict(rep), indent=1)


def rep_from_json(text: str) -> DFRepresentation:
    doc = json.loads(text)
    n = int(doc["n"])
    u0 = np.asarray(doc["one_body"]["u0"], dtype=float)
    f_eigs = np.asarray(doc["one_body"]["f_eigs"], dtype=float)
    f_matrix = u0 @ np.diag(f_eigs) @ u0.T
    one_body = OneBodyFactor(f_matrix=f_matrix, u0=u0, f_eigs=f_eigs)
    leaves = [
        DFLeaf(u=np.asarray(entry["u"], dtype=float),
               z=np.asarray(entry["z"], dtype=float),
               g=entry.get("g"))
        for entry in doc["leaves"]
    ]
    return DFRepresentation(n=n, one_body=one_body, leaves=leaves,
                            offset=float(doc["offset"]))


def reconstruction_error(rep: DFRepresentation, integral_set: IntegralSet) -> float:
    """Frobenius distance between the leaf model and the exact two-body tensor."""
    model = _kernels.reconstruct_two_body(rep.u_stack(), rep.z_stack())
    return frobenius_norm(model - integral_set.eri)
