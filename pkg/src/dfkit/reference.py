"""Exact classical reference: dense Jordan-Wigner, sector CI, rotations, moments.

Conventions (fixed across the package):
  * fermionic mode ``2k`` is the spin-up half of spatial orbital ``k``,
    mode ``2k+1`` the spin-down half;
  * a full statevector over ``2n`` modes is indexed by bitstrings, bit ``j``
    of the integer index being the occupation of mode ``j``;
  * measured Z value of mode ``j`` is ``1 - 2*bit_j``;
  * ``a_j |b> = (-1)^{popcount(b & (2^j - 1))} bit_j |b XOR 2^j>``.

Sector-restricted work uses a block-ordered determinant basis (all spin-up
creation operators before all spin-down ones); the diagonal +-1 reordering
sign against the interleaved basis is tracked explicitly.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .errors import DfkitError
from .integrals import IntegralSet


@dataclass
class SectorSpec:
    """Electron counts per spin."""

    n_alpha: int
    n_beta: int


@dataclass
class FockState:
    """Statevector over 2n Jordan-Wigner modes (length 4^n)."""

    n: int
    amplitudes: np.ndarray

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


# ---------------------------------------------------------------------------
# combinatorial tables (cached per size)
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _combos(n: int, k: int) -> np.ndarray:
    """Bitmasks of all k-subsets of n orbitals, ascending."""
    masks = []
    for orbs in itertools.combinations(range(n), k):
        m = 0
        for o in orbs:
            m |= 1 << o
        masks.append(m)
    return np.array(sorted(masks), dtype=np.int64)


@lru_cache(maxsize=None)
def _combo_index(n: int, k: int) -> dict:
    return {int(m): i for i, m in enumerate(_combos(n, k))}


@lru_cache(maxsize=None)
def _spread_table(n: int) -> np.ndarray:
    """spread[m] places bit i of m at position 2i."""
    out = np.zeros(1 << n, dtype=np.int64)
    for m in range(1 << n):
        v = 0
        for i in range(n):
            if m >> i & 1:
                v |= 1 << (2 * i)
        out[m] = v
    return out


@lru_cache(maxsize=None)
def _occupation_table(n: int) -> np.ndarray:
    """(4^n, 2n) occupation bits of every full-space index."""
    dim = 1 << (2 * n)
    idx = np.arange(dim, dtype=np.int64)
    return ((idx[:, None] >> np.arange(2 * n)[None, :]) & 1).astype(np.int8)


@lru_cache(maxsize=None)
def _sector_layout(n: int, a: int, b: int):
    """Full-space indices and reordering signs of sector (a, b).

    Returns ``(full_idx, sigma)`` of shape (C(n,a), C(n,b)): the interleaved
    statevector index of each block-basis determinant pair, and the sign
    relating block ordering (alpha string then beta string) to the canonical
    interleaved mode ordering.
    """
    ca = _combos(n, a)
    cb = _combos(n, b)
    spread = _spread_table(n)
    full_idx = spread[ca][:, None] | (spread[cb][None, :] << 1)
    sigma = np.empty((len(ca), len(cb)))
    for i, ma in enumerate(ca):
        for j, mb in enumerate(cb):
            inv = 0
            for orb in range(n):
                if ma >> orb & 1:
                    inv += bin(mb & ((1 << orb) - 1)).count("1")
            sigma[i, j] = -1.0 if inv & 1 else 1.0
    return full_idx, sigma


@lru_cache(maxsize=None)
def _excitation_matrices(n: int, k: int):
    """Sector-restricted single excitations E[p][q] = a+_p a_q (one spin)."""
    combos = _combos(n, k)
    index = _combo_index(n, k)
    d = len(combos)
    mats = [[None] * n for _ in range(n)]
    for p in range(n):
        for q in range(n):
            rows, cols, vals = [], [], []
            for i, mask in enumerate(combos):
                mask = int(mask)
                if not mask >> q & 1:
                    continue
                sign_q = -1.0 if bin(mask & ((1 << q) - 1)).count("1") & 1 else 1.0
                m1 = mask ^ (1 << q)
                if m1 >> p & 1:
                    continue
                sign_p = -1.0 if bin(m1 & ((1 << p) - 1)).count("1") & 1 else 1.0
                rows.append(index[m1 | (1 << p)])
                cols.append(i)
                vals.append(sign_q * sign_p)
            mats[p][q] = sp.csr_matrix((vals, (rows, cols)), shape=(d, d))
    return mats


def _nonzero_sectors(state: FockState):
    """Sectors (a, b) carrying any amplitude, with gathered block matrices."""
    n = state.n
    out = []
    for a in range(n + 1):
        for b in range(n + 1):
            full_idx, sigma = _sector_layout(n, a, b)
            block = sigma * state.amplitudes[full_idx]
            if np.any(block != 0):
                out.append((a, b, block))
    return out


# ---------------------------------------------------------------------------
# dense Jordan-Wigner oracle
# ---------------------------------------------------------------------------

def _ladder_matrices(n_modes: int):
    dim = 1 << n_modes
    idx = np.arange(dim, dtype=np.int64)
    lowering = []
    for j in range(n_modes):
        occupied = (idx >> j & 1).astype(bool)
        src = idx[occupied]
        parity = np.array([bin(int(b) & ((1 << j) - 1)).count("1") & 1 for b in src])
        sign = np.where(parity, -1.0, 1.0)
        mat = np.zeros((dim, dim))
        mat[src ^ (1 << j), src] = sign
        lowering.append(mat)
    return lowering


def dense_hamiltonian(integral_set: IntegralSet) -> np.ndarray:
    """Brute-force 4^n x 4^n matrix of the second-quantized Hamiltonian (n <= 4)."""
    n = integral_set.n
    if n > 4:
        raise ValueError(f"dense Hamiltonian guarded to n <= 4, got {n}")
    dim = 1 << (2 * n)
    lower = _ladder_matrices(2 * n)
    e_ops = np.zeros((n, n, dim, dim))
    for p in range(n):
        for q in range(n):
            e_ops[p, q] = (lower[2 * p].T @ lower[2 * q]
                           + lower[2 * p + 1].T @ lower[2 * q + 1])
    h = integral_set.e_core * np.eye(dim)
    h += np.tensordot(integral_set.h_one, e_ops, axes=([0, 1], [0, 1]))
    eri = integral_set.eri
    for p in range(n):
        for q in range(n):
            g_pq = np.tensordot(eri[p, q], e_ops, axes=([0, 1], [0, 1]))
            h += 0.5 * e_ops[p, q] @ g_pq
    j_mat = np.einsum("pqqs->ps", eri)
    h -= 0.5 * np.tensordot(j_mat, e_ops, axes=([0, 1], [0, 1]))
    return h


# ---------------------------------------------------------------------------
# sector Hamiltonian and FCI
# ---------------------------------------------------------------------------

_SECTOR_H_CACHE: dict = {}


def _sector_hamiltonian(integral_set: IntegralSet, a: int, b: int):
    key = (integral_set.fingerprint(), a, b)
    if key in _SECTOR_H_CACHE:
        return _SECTOR_H_CACHE[key]
    n = integral_set.n
    h1 = integral_set.h_one
    eri = integral_set.eri
    j_mat = np.einsum("pqqs->ps", eri)

    def spin_piece(k):
        e = _excitation_matrices(n, k)
        d = len(_combos(n, k))
        acc = sp.csr_matrix((d, d))
        for p in range(n):
            for q in range(n):
                coef = h1[p, q] - 0.5 * j_mat[p, q]
                if coef != 0.0:
                    acc = acc + coef * e[p][q]
                b_pq = sp.csr_matrix((d, d))
                for r in range(n):
                    for s in range(n):
                        if eri[p, q, r, s] != 0.0:
                            b_pq = b_pq + eri[p, q, r, s] * e[r][s]
                acc = acc + 0.5 * (e[p][q] @ b_pq)
        return acc, e

    h_aa, e_alpha = spin_piece(a)
    h_bb, e_beta = spin_piece(b)
    da = h_aa.shape[0]
    db = h_bb.shape[0]
    ham = sp.kron(h_aa, sp.identity(db)) + sp.kron(sp.identity(da), h_bb)
    for p in range(n):
        for q in range(n):
            b_pq = sp.csr_matrix((db, db))
            for r in range(n):
                for s in range(n):
                    if eri[p, q, r, s] != 0.0:
                        b_pq = b_pq + eri[p, q, r, s] * e_beta[r][s]
            ham = ham + sp.kron(e_alpha[p][q], b_pq)
    ham = ham + integral_set.e_core * sp.identity(da * db)
    ham = ham.tocsr()
    if len(_SECTOR_H_CACHE) > 16:
        _SECTOR_H_CACHE.clear()
    _SECTOR_H_CACHE[key] = ham
    return ham


def _embed_block(n: int, a: int, b: int, block: np.ndarray) -> FockState:
    full_idx, sigma = _sector_layout(n, a, b)
    amps = np.zeros(1 << (2 * n), dtype=complex)
    amps[full_idx] = sigma * block
    return FockState(n=n, amplitudes=amps)


def _apply_s_plus(n: int, a: int, b: int, block: np.ndarray) -> np.ndarray:
    """S+ = sum_p a+_{p,up} a_{p,down} : sector (a,b) -> (a+1, b-1)."""
    if b == 0 or a == n:
        return np.zeros((len(_combos(n, a + 1)) if a < n else 1, 1))
    ca, cb = _combos(n, a), _combos(n, b)
    ia1 = _combo_index(n, a + 1)
    ib1 = _combo_index(n, b - 1)
    out = np.zeros((len(_combos(n, a + 1)), len(_combos(n, b - 1))), dtype=block.dtype)
    global_sign = -1.0 if a & 1 else 1.0
    for i, ma in enumerate(ca):
        ma = int(ma)
        for j, mb in enumerate(cb):
            mb = int(mb)
            amp = block[i, j]
            if amp == 0:
                continue
            for p in range(n):
                if not mb >> p & 1 or ma >> p & 1:
                    continue
                s_b = -1.0 if bin(mb & ((1 << p) - 1)).count("1") & 1 else 1.0
                s_a = -1.0 if bin(ma & ((1 << p) - 1)).count("1") & 1 else 1.0
                out[ia1[ma | (1 << p)], ib1[mb ^ (1 << p)]] += (
                    global_sign * s_a * s_b * amp)
    return out


def _s_squared_expectation(n: int, a: int, b: int, block: np.ndarray) -> float:
    m = 0.5 * (a - b)
    splus = _apply_s_plus(n, a, b, block)
    return float(np.sum(np.abs(splus) ** 2) + m * (m + 1))


class SpinNotFoundError(DfkitError, LookupError):
    """Requested spin state absent among the lowest sector eigenstates."""


def fci_ground_state(integral_set: IntegralSet, sector: SectorSpec,
                     which: str = "lowest"):
    """Exact lowest eigenpair in an (n_alpha, n_beta) sector.

    ``which`` selects ``"lowest"``, ``"lowest-singlet"`` (S^2 = 0) or
    ``"lowest-triplet"`` (S^2 = 2), filtered by S^2 expectation at tolerance
    1e-6 among the lowest 10 sector eigenstates. Degenerate energy clusters
    are rotated to sharp S^2 before filtering. The returned state carries a
    deterministic phase (largest-magnitude amplitude real positive).
    """
    n = integral_set.n
    if n > 8:
        raise ValueError(f"FCI guarded to n <= 8, got {n}")
    a, b = sector.n_alpha, sector.n_beta
    if not (0 <= a <= n and 0 <= b <= n):
        raise ValueError(f"sector ({a}, {b}) invalid for n = {n}")
    ham = _sector_hamiltonian(integral_set, a, b)
    d = ham.shape[0]
    k_want = min(10, d)
    if d <= 3000:
        w, v = np.linalg.eigh(ham.toarray())
        w, v = w[:k_want], v[:, :k_want]
    else:
        w, v = sp.linalg.eigsh(ham, k=min(k_want, d - 2), which="SA")
        order = np.argsort(w)
        w, v = w[order], v[:, order]

    da = len(_combos(n, a))
    db = len(_combos(n, b))

    # rotate degenerate clusters to sharp S^2
    scale = max(1.0, float(np.max(np.abs(w))))
    i = 0
    while i < len(w):
        j = i + 1
        while j < len(w) and abs(w[j] - w[i]) <= 1e-9 * scale:
            j += 1
        if j - i > 1:
            vecs = [v[:, t].reshape(da, db) for t in range(i, j)]
            splus = [_apply_s_plus(n, a, b, blk) for blk in vecs]
            m = 0.5 * (a - b)
            gram = np.empty((j - i, j - i))
            for x in range(j - i):
                for y in range(j - i):
                    gram[x, y] = float(np.real(np.sum(np.conj(splus[x]) * splus[y])))
            gram += m * (m + 1) * np.eye(j - i)
            _, rot = np.linalg.eigh(gram)
            v[:, i:j] = v[:, i:j] @ rot
        i = j

    target = {"lowest": None, "lowest-singlet": 0.0, "lowest-triplet": 2.0}[which]
    chosen = None
    for t in range(len(w)):
        block = v[:, t].reshape(da, db)
        if target is None:
            chosen = t
            break
        if abs(_s_squared_expectation(n, a, b, block) - target) <= 1e-6:
            chosen = t
            break
    if chosen is None:
        raise SpinNotFoundError(
            f"no state with S^2 = {target} among the lowest {len(w)} "
            f"eigenstates of sector ({a}, {b})")

    state = _embed_block(n, a, b, v[:, chosen].reshape(da, db))
    amps = state.amplitudes
    peak = int(np.argmax(np.abs(amps)))
    phase = amps[peak] / abs(amps[peak])
    amps = amps / phase
    return float(w[chosen]), FockState(n=n, amplitudes=amps)


def expectation_energy(integral_set: IntegralSet, state: FockState) -> float:
    """<psi|H|psi> with H from the exact integrals (sector-sparse contraction)."""
    total = 0.0
    for a, b, block in _nonzero_sectors(state):
        ham = _sector_hamiltonian(integral_set, a, b)
        vec = block.reshape(-1)
        total += float(np.real(np.vdot(vec, ham @ vec)))
    return total


# ---------------------------------------------------------------------------
# orbital rotations
# ---------------------------------------------------------------------------

def _lift_rotation(u: np.ndarray, k: int) -> np.ndarray:
    """Many-body matrix of a one-body rotation on k-electron determinants.

    Entries are minors: <A'|rotation|A> = det(u[rows A', cols A]).
    """
    n = u.shape[0]
    combos = _combos(n, k)
    if k == 0:
        return np.ones((1, 1))
    orb_lists = np.array([[o for o in range(n) if m >> o & 1] for m in combos])
    blocks = u[orb_lists[:, None, :, None], orb_lists[None, :, None, :]]
    # blocks[i', i] = submatrix with rows A'_{i'} and columns A_i
    return np.linalg.det(blocks)


def rotate_orbitals(state: FockState, u: np.ndarray) -> FockState:
    """Apply the Fock-space image of an orbital rotation to a statevector.

    Implements exp(sum_pq log(u)_pq E_pq) exactly: a single-particle state in
    orbital k maps to amplitudes u[:, k]. Particle numbers per spin and norms
    are preserved.
    """
    n = state.n
    if u.shape != (n, n):
        raise ValueError("rotation has wrong shape")
    if np.max(np.abs(u.T @ u - np.eye(n))) > 1e-10:
        raise ValueError("rotation is not orthogonal")
    out = np.zeros_like(state.amplitudes)
    lifts: dict = {}
    for a, b, block in _nonzero_sectors(state):
        if a not in lifts:
            lifts[a] = _lift_rotation(u, a)
        if b not in lifts:
            lifts[b] = _lift_rotation(u, b)
        rotated = lifts[a] @ block @ lifts[b].T
        full_idx, sigma = _sector_layout(n, a, b)
        out[full_idx] = sigma * rotated
    return FockState(n=n, amplitudes=out)


def rotation_matrix_full(n: int, u: np.ndarray) -> np.ndarray:
    """Dense 4^n x 4^n matrix of the lifted rotation (test-scale oracle)."""
    dim = 1 << (2 * n)
    out = np.zeros((dim, dim))
    for a in range(n + 1):
        for b in range(n + 1):
            ra = _lift_rotation(u, a)
            rb = _lift_rotation(u, b)
            full_idx, sigma = _sector_layout(n, a, b)
            flat = full_idx.reshape(-1)
            block = np.kron(ra, rb) * np.outer(sigma.reshape(-1), sigma.reshape(-1))
            out[np.ix_(flat, flat)] = block
    return out


# ---------------------------------------------------------------------------
# diagonal observables: moments and sampling
# ---------------------------------------------------------------------------

def diagonal_moments(state: FockState, block) -> tuple:
    """Mean and variance of a rotated-basis diagonal observable.

    The state must already be rotated into the block's measurement basis;
    only the linear and quadratic coefficients are read here. Enumeration
    skips zero amplitudes.
    """
    amps = state.amplitudes
    support = np.flatnonzero(amps)
    if support.size == 0:
        return 0.0, 0.0
    occ = _occupation_table(state.n)[support]
    signs = 1.0 - 2.0 * occ.astype(np.float64)
    f = _kernels.f_values(signs, block.linear, block.quadratic)
    probs = np.abs(amps[support]) ** 2
    mean = float(probs @ f)
    var = float(probs @ (f * f) - mean ** 2)
    return mean, max(var, 0.0)


def sample_basis(state: FockState, block, shots: int, seed) -> tuple:
    """Empirical mean/variance of ``shots`` measurement outcomes (population variance)."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    amps = state.amplitudes
    support = np.flatnonzero(amps)
    occ = _occupation_table(state.n)[support]
    signs = 1.0 - 2.0 * occ.astype(np.float64)
    f = _kernels.f_values(signs, block.linear, block.quadratic)
    probs = np.abs(amps[support]) ** 2
    probs = probs / probs.sum()
    rng = np.random.default_rng(seed)
    draws = rng.choice(len(support), size=shots, p=probs)
    outcomes = f[draws]
    mean = float(np.mean(outcomes))
    var = float(np.mean(outcomes ** 2) - mean ** 2)
    return mean, max(var, 0.0)


def dense_pauli_hamiltonian(h) -> np.ndarray:
    """Dense matrix of a PauliHamiltonian's blocks (test-scale oracle)."""
    n = h.n
    dim = 1 << (2 * n)
    occ = _occupation_table(n)
    signs = 1.0 - 2.0 * occ.astype(np.float64)
    out = h.constant * np.eye(dim)
    for block in h.bases:
        f = _kernels.f_values(signs, block.linear, block.quadratic)
        rot = rotation_matrix_full(n, block.rotation)
        out += rot @ np.diag(f) @ rot.T
    return out


def apply_one_body(coeff: np.ndarray, state: FockState) -> FockState:
    """Apply sum_pq coeff[p, q] E_pq to a statevector (sector-sparse)."""
    n = state.n
    out = np.zeros_like(state.amplitudes)
    for a, b, block in _nonzero_sectors(state):
        ea = _excitation_matrices(n, a)
        eb = _excitation_matrices(n, b)
        da = len(_combos(n, a))
        db = len(_combos(n, b))
        op_a = sp.csr_matrix((da, da))
        op_b = sp.csr_matrix((db, db))
        for p in range(n):
            for q in range(n):
                if coeff[p, q] != 0.0:
                    op_a = op_a + coeff[p, q] * ea[p][q]
                    op_b = op_b + coeff[p, q] * eb[p][q]
        rotated = op_a @ block + (op_b @ block.T).T
        full_idx, sigma = _sector_layout(n, a, b)
        out[full_idx] += sigma * rotated
    return FockState(n=n, amplitudes=out)


# ---------------------------------------------------------------------------
# binary sidecar dumps
# ---------------------------------------------------------------------------

def dump_state(state: FockState, path) -> None:
    """Length-prefixed little-endian doubles, interleaved re/im."""
    amps = np.asarray(state.amplitudes, dtype=complex)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<q", len(amps)))
        inter = np.empty(2 * len(amps))
        inter[0::2] = amps.real
        inter[1::2] = amps.imag
        fh.write(inter.astype("<f8").tobytes())


def load_state(n: int, path) -> FockState:
    with open(path, "rb") as fh:
        (length,) = struct.unpack("<q", fh.read(8))
        inter = np.frombuffer(fh.read(16 * length), dtype="<f8")
    return FockState(n=n, amplitudes=inter[0::2] + 1j * inter[1::2])
