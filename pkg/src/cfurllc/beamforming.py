"""Beamformer construction from channel estimates.

Three families, all unit-norm per serving link:
  * "pzf"  — partial zero-forcing at each AP: project the served user's
             estimate onto the orthogonal complement of its strongest
             interferers' estimates at that AP;
  * "mrt"/"mrc" — matched beamforming: the normalized estimate (transmit
             and receive sides of the same construction);
  * "zf"   — per-BS zero-forcing across all users the BS serves
             (colocated large arrays).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, qr as scipy_qr

from .channel import ChannelState
from .scenario import Scenario

_BASIS_REL_TOL = 1e-10
_PZF_FALLBACK_REL = 1e-12
_ZF_REG_REL = 1e-10


@dataclass
class BeamformerSet:
    """Per-serving-link beamformers plus construction diagnostics.

    vectors[u, a] is the unit-norm beamformer of user u at AP a when a
    serves u, and zero otherwise.  The same vector is used on transmit
    and receive.
    """

    kind: str
    vectors: np.ndarray  # (n_users, n_aps, m) complex
    diagnostics: dict = field(default_factory=dict)


def mrt_vector(h_hat_ua: np.ndarray) -> np.ndarray:
    """Matched beamformer: the estimate normalized to unit norm."""
    h = np.asarray(h_hat_ua)
    norm = np.linalg.norm(h)
    if norm <= 0:
        raise ValueError("cannot normalize a zero channel estimate")
    return h / norm


def rank_interferers(
    u: int, a: int, large_scale_db: np.ndarray, h_hat: np.ndarray, n_top: int
) -> np.ndarray:
    """Stack the estimates of the n_top strongest interferers of user u at AP a.

    Strength is the large-scale gain at AP a; ties break toward the lower
    user index.  Returns an (m, n_top) matrix (empty when n_top == 0).
    """
    n_users = h_hat.shape[0]
    if not (0 <= n_top <= n_users - 1):
        raise ValueError(f"n_top={n_top} must be in [0, n_users-1={n_users - 1}]")
    others = np.array([i for i in range(n_users) if i != u])
    if n_top == 0:
        return np.zeros((h_hat.shape[2], 0), dtype=h_hat.dtype)
    gains = large_scale_db[others, a]
    order = np.lexsort((others, -gains))
    chosen = others[order[:n_top]]
    return h_hat[chosen, a, :].T.copy()


def orthonormal_basis(columns: np.ndarray, rel_tol: float = _BASIS_REL_TOL) -> np.ndarray:
    """Orthonormal basis of the column span via pivoted QR.

    Columns whose pivoted diagonal falls below rel_tol times the largest
    are treated as linearly dependent and dropped.
    """
    m, k = columns.shape
    if k == 0:
        return np.zeros((m, 0), dtype=complex)
    q, r, _ = scipy_qr(columns, mode="economic", pivoting=True)
    diag = np.abs(np.diagonal(r))
    if diag[0] == 0:
        return np.zeros((m, 0), dtype=complex)
    keep = diag >= rel_tol * diag[0]
    return q[:, keep]


def pzf_vector(h_hat_ua: np.ndarray, interferers: np.ndarray):
    """Project the own estimate out of the interferers' span and normalize.

    Returns (vector, fell_back): when the projection residual is tiny
    (the own estimate lies in the interference span), the matched
    beamformer is used instead and fell_back is True.
    """
    h = np.asarray(h_hat_ua)
    own_norm = np.linalg.norm(h)
    if own_norm <= 0:
        raise ValueError("cannot beamform from a zero channel estimate")
    basis = orthonormal_basis(interferers)
    p = h - basis @ (basis.conj().T @ h)
    norm = np.linalg.norm(p)
    if norm < _PZF_FALLBACK_REL * own_norm:
        return h / own_norm, True
    return p / norm, False


def zf_colocated(h_hat_stack: np.ndarray):
    """Zero-forcing columns for one BS serving the stacked users.

    h_hat_stack: (m, k) estimates of the k served users.  Returns
    (vectors (m, k) with unit-norm columns, regularized flag).  A
    rank-deficient Gram matrix is regularized by a small multiple of its
    trace.
    """
    m, k = h_hat_stack.shape
    if k < 1:
        raise ValueError("need at least one served user")
    if m <= k:
        raise ValueError(f"zero-forcing needs more antennas ({m}) than served users ({k})")
    gram = h_hat_stack.conj().T @ h_hat_stack
    gram = 0.5 * (gram + gram.conj().T)
    regularized = False
    try:
        c = cho_factor(gram, lower=True, check_finite=False)
        sol = cho_solve(c, np.eye(k, dtype=complex), check_finite=False)
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError("non-finite inverse")
    except np.linalg.LinAlgError:
        gram = gram + _ZF_REG_REL * np.trace(gram).real * np.eye(k)
        c = cho_factor(gram, lower=True, check_finite=False)
        sol = cho_solve(c, np.eye(k, dtype=complex), check_finite=False)
        regularized = True
    w = h_hat_stack @ sol
    norms = np.linalg.norm(w, axis=0)
    if np.any(norms <= 0):
        raise ValueError("zero-forcing produced a zero column")
    return w / norms, regularized


def build_beamformers(
    kind: str,
    state: ChannelState,
    scenario: Scenario,
    n_interferers: int = 0,
) -> BeamformerSet:
    """Construct beamformers for every serving link of the scenario."""
    if state.h_hat is None:
        raise ValueError("channel estimates missing; run estimation first")
    if scenario.serving is None:
        raise ValueError("scenario has no association; call associate() first")
    kind = kind.lower()
    n_users, n_aps, m = state.h_hat.shape
    vectors = np.zeros((n_users, n_aps, m), dtype=np.complex128)
    diagnostics = {"pzf_fallbacks": 0, "zf_regularized": 0}

    if kind == "pzf":
        if not (0 <= n_interferers < m):
            raise ValueError(
                f"n_interferers={n_interferers} must be below the antenna count {m}"
            )
        if n_interferers > n_users - 1:
            raise ValueError("cannot null more interferers than there are other users")
        for u in range(n_users):
            for a in scenario.serving[u]:
                a = int(a)
                inter = rank_interferers(
                    u, a, state.large_scale_db, state.h_hat, n_interferers
                )
                vec, fell_back = pzf_vector(state.h_hat[u, a], inter)
                diagnostics["pzf_fallbacks"] += int(fell_back)
                vectors[u, a] = vec
    elif kind in ("mrt", "mrc"):
        for u in range(n_users):
            for a in scenario.serving[u]:
                a = int(a)
                vectors[u, a] = mrt_vector(state.h_hat[u, a])
    elif kind == "zf":
        for a in range(n_aps):
            users = scenario.served[a]
            if len(users) == 0:
                continue
            stack = state.h_hat[users, a, :].T
            w, regularized = zf_colocated(stack)
            diagnostics["zf_regularized"] += int(regularized)
            for j, u in enumerate(users):
                vectors[int(u), a] = w[:, j]
    else:
        raise ValueError(f"unknown beamformer kind {kind!r}")

    return BeamformerSet(kind=kind, vectors=vectors, diagnostics=diagnostics)
