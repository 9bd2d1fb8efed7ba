"""Pilot-based linear MMSE channel estimation with pilot reuse.

Every user sends a unit-norm pilot sequence drawn from the rows of a
unitary matrix; when there are more users than sequences, rows are reused
round-robin, which creates pilot contamination between users sharing a
row.  Each AP correlates its pilot observation with each user's sequence
and applies the per-link LMMSE filter built from link statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .channel import ChannelState, steering_vector

_STREAM_PILOT_NOISE = 5


@dataclass
class PilotBook:
    """Pilot assignment for one scenario.

    pilots[u] is the length-`length` unit-norm sequence of user u;
    assignment[u] is the index of the unitary row it was drawn from
    (users sharing a row contaminate each other);
    power_w[u] is the pilot transmit power of user u in watts.
    """

    length: int
    pilots: np.ndarray  # (n_users, length) complex
    assignment: np.ndarray  # (n_users,) int
    power_w: np.ndarray  # (n_users,) float

    @property
    def n_users(self) -> int:
        return self.pilots.shape[0]


def assign_pilots(n_users: int, length: int, power_w, seed=None) -> PilotBook:
    """Build the pilot book: rows of a random unitary, reused round-robin.

    User u gets row (u mod length).  power_w may be a scalar or a length
    n_users array of per-user pilot powers in watts.
    """
    if n_users < 1:
        raise ValueError("n_users must be >= 1")
    if length < 1:
        raise ValueError("pilot length must be >= 1")
    power = np.broadcast_to(np.asarray(power_w, dtype=float), (n_users,)).copy()
    if np.any(power <= 0):
        raise ValueError("pilot powers must be positive")

    rng = np.random.default_rng(seed)
    z = (rng.standard_normal((length, length)) + 1j * rng.standard_normal((length, length))) / math.sqrt(2.0)
    q, r = np.linalg.qr(z)
    # Fix the phase convention so the unitary is a deterministic function of the draw.
    d = np.diagonal(r)
    q = q * (d / np.abs(d))
    assignment = np.arange(n_users) % length
    pilots = q[assignment].copy()
    return PilotBook(length=length, pilots=pilots, assignment=assignment, power_w=power)


def estimate_channels(
    state: ChannelState,
    book: PilotBook,
    noise_var: float,
    seed: int,
    keep_observations: bool = False,
):
    """LMMSE-estimate every user-AP link from one pilot block per AP.

    Observation at AP a:  Y_a = sum_u sqrt(p_u) h_{u,a} pilot_u^H + W_a,
    W_a i.i.d. CN(0, noise_var).  The per-user statistic is
    y_{u,a} = Y_a pilot_u, and the estimate is
        hhat_{u,a} = sqrt(p_u) C_{u,a} B_{u,a}^{-1} y_{u,a},
    with C_{u,a} the link correlation beta/(K+1) (K a a^H + I) and
        B_{u,a} = sum_i p_i |pilot_i^H pilot_u|^2 C_{i,a} + noise_var I.

    B is assembled per (pilot row, AP) — users sharing a row share B and
    y — checked Hermitian, and solved through a Cholesky factorization;
    C is then applied as a rank-1-plus-diagonal operator, which keeps the
    colocated large-array case tractable.

    Returns a new ChannelState with h_hat set (and, when keep_observations,
    a `pilot_obs` attribute holding the (n_aps, m, length) observations).
    """
    if noise_var < 0:
        raise ValueError("noise_var must be >= 0")
    n_users, n_aps, m = state.h.shape
    if book.n_users != n_users:
        raise ValueError("pilot book does not match the number of users")
    if book.pilots.shape[1] != book.length:
        raise ValueError("pilot book is inconsistent")

    amp = np.sqrt(book.power_w)  # (n_users,)
    pilots = book.pilots  # (n_users, length)
    beta = state.large_scale_lin  # (n_users, n_aps)
    kfac = state.rician_k  # (n_users, n_aps)

    # Steering vectors for every user at every AP (rank-1 part of C).
    steer = np.exp(
        1j * math.pi * np.arange(m)[None, None, :] * np.sin(state.aoa)[:, :, None]
    )  # (n_users, n_aps, m)

    # Cross-pilot power gains against each unitary row actually in use.
    # Representative sequence of each row: first user assigned to it.
    rows, row_of_user = np.unique(book.assignment, return_inverse=True)
    first_user = np.array([np.argmax(book.assignment == r) for r in rows])
    row_seqs = pilots[first_user]  # (n_rows, length)
    # gain[i, r] = |pilot_i^H row_r|^2
    gain = np.abs(pilots.conj() @ row_seqs.T) ** 2  # (n_users, n_rows)

    scale = beta / (kfac + 1.0)  # (n_users, n_aps)
    weight = (book.power_w[:, None] * gain).T  # (n_rows, n_users)

    h_hat = np.empty_like(state.h)
    obs = np.empty((n_aps, m, book.length), dtype=np.complex128) if keep_observations else None

    eye = np.eye(m)
    for a in range(n_aps):
        rng = np.random.default_rng(
            np.random.SeedSequence((int(seed), _STREAM_PILOT_NOISE, a))
        )
        w = (
            rng.standard_normal((m, book.length))
            + 1j * rng.standard_normal((m, book.length))
        ) * math.sqrt(noise_var / 2.0)
        y_all = np.einsum("u,um,ut->mt", amp, state.h[:, a, :], pilots.conj()) + w
        if keep_observations:
            obs[a] = y_all

        # Per-link correlation pieces at this AP.
        sc = scale[:, a]  # (n_users,)
        diag_w = weight @ sc  # (n_rows,) isotropic part of B
        rank_w = weight * (sc * kfac[:, a])[None, :]  # (n_rows, n_users)
        va = steer[:, a, :]  # (n_users, m)

        # B_r = diag_w[r] I + noise I + sum_i rank_w[r, i] v_i v_i^H
        b = (diag_w[:, None, None] + noise_var) * eye[None, :, :]
        b = b + np.einsum("ri,im,in->rmn", rank_w, va, va.conj())
        herm_err = np.max(np.abs(b - b.conj().transpose(0, 2, 1)))
        if herm_err > 1e-10 * max(np.max(np.abs(b)), 1e-300):
            raise ValueError("estimation normal matrix lost Hermitian symmetry")
        b = 0.5 * (b + b.conj().transpose(0, 2, 1))

        # y_r = Y_a row_r ; shared by all users on row r.
        y_rows = y_all @ row_seqs.T  # (m, n_rows)
        x_rows = np.empty((len(rows), m), dtype=np.complex128)
        for r in range(len(rows)):
            c, low = cho_factor(b[r], lower=True, check_finite=False)
            x_rows[r] = cho_solve((c, low), y_rows[:, r], check_finite=False)

        x_user = x_rows[row_of_user]  # (n_users, m)
        dot = np.einsum("im,im->i", va.conj(), x_user)
        h_hat[:, a, :] = (amp * sc)[:, None] * (
            (kfac[:, a] * dot)[:, None] * va + x_user
        )

    new_state = replace(state, h_hat=h_hat)
    if keep_observations:
        new_state.pilot_obs = obs
    return new_state


def estimator_matrices(state: ChannelState, book: PilotBook, noise_var: float, u: int, a: int):
    """Dense LMMSE pieces for one link: (C, B, D) with D = sqrt(p_u) C B^{-1}.

    Intended for small instances and tests; the production path in
    estimate_channels applies the same algebra without materializing
    per-link matrices.
    """
    n_users, _, m = state.h.shape
    c_mats = []
    for i in range(n_users):
        v = steering_vector(float(state.aoa[i, a]), m)
        k = float(state.rician_k[i, a])
        beta = 10.0 ** (float(state.large_scale_db[i, a]) / 10.0)
        c_mats.append(beta / (k + 1.0) * (k * np.outer(v, v.conj()) + np.eye(m)))
    gain = np.abs(book.pilots.conj() @ book.pilots[u]) ** 2  # (n_users,)
    b = noise_var * np.eye(m, dtype=np.complex128)
    for i in range(n_users):
        b = b + book.power_w[i] * gain[i] * c_mats[i]
    d = math.sqrt(book.power_w[u]) * c_mats[u] @ np.linalg.inv(b)
    return c_mats[u], b, d
