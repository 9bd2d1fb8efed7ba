"""Finite-blocklength achievable rate and the link coefficients feeding it.

The per-user rate is the Shannon term minus a channel-dispersion penalty:

    R(g) = c1*log2(1+g) - c2*sqrt(1 - (1+g)^-2)

with c1 the bandwidth-normalized data fraction of the coherence block,
c1 = B*(block_len - pilot_len) / (2*block_len)   [half the data symbols
serve each link direction], and
c2 = c1 * Qinv(error_prob) * log2(e) / sqrt(duration*bandwidth).

Rates can be negative at low SINR; optimization keeps them unclamped and
reporting clamps at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .beamforming import BeamformerSet
from .channel import ChannelState
from .scenario import Scenario

LOG2E = math.log2(math.e)


def gaussian_tail(x: float) -> float:
    """Complementary standard-normal CDF Q(x)."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def q_inverse(eps: float, tol: float = 1e-12) -> float:
    """Inverse of the Gaussian tail by bisection to absolute tolerance tol."""
    if not (0.0 < eps < 0.5):
        raise ValueError("error probability must lie in (0, 0.5)")
    lo, hi = 0.0, 45.0
    if gaussian_tail(hi) > eps:
        raise ValueError("error probability too small for the bisection bracket")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if gaussian_tail(mid) > eps:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class UrllcParams:
    """Finite-blocklength rate constants.

    bandwidth_hz: system bandwidth B.
    block_len: symbols per coherence block; pilot_len of them are pilots,
    and the data symbols are split evenly between the two link directions.
    duration_s: transmission duration of one short packet.
    error_prob: target block-error probability.
    """

    bandwidth_hz: float
    block_len: int
    pilot_len: int
    duration_s: float
    error_prob: float
    prelog: float = field(init=False)
    dispersion_coeff: float = field(init=False)
    qinv: float = field(init=False)

    def __post_init__(self):
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth must be positive")
        if not (0 < self.pilot_len < self.block_len):
            raise ValueError("need 0 < pilot_len < block_len")
        if self.duration_s <= 0:
            raise ValueError("duration must be positive")
        self.qinv = q_inverse(self.error_prob)
        self.prelog = self.bandwidth_hz * (self.block_len - self.pilot_len) / (2.0 * self.block_len)
        self.dispersion_coeff = (
            self.prelog * self.qinv * LOG2E / math.sqrt(self.duration_s * self.bandwidth_hz)
        )


def dispersion_penalty(sinr, params: UrllcParams):
    """Dispersion term c2*sqrt(1 - (1+g)^-2); 0 at g = 0, -> c2 as g -> inf.

    The radical is evaluated as g*(2+g)/(1+g)^2, which is exact at g = 0
    and keeps precision for g far below 1e-16 where the naive form
    underflows to 0.
    """
    g = np.asarray(sinr, dtype=float)
    if np.any(g < 0):
        raise ValueError("SINR must be >= 0")
    val = params.dispersion_coeff * np.sqrt(g * (2.0 + g)) / (1.0 + g)
    return val if val.ndim else float(val)


def shannon_rate(sinr, params: UrllcParams):
    g = np.asarray(sinr, dtype=float)
    if np.any(g < 0):
        raise ValueError("SINR must be >= 0")
    val = params.prelog * np.log1p(g) / math.log(2.0)
    return val if val.ndim else float(val)


def urllc_rate(sinr, params: UrllcParams):
    """Finite-blocklength rate in bits/s (may be negative at low SINR)."""
    g = np.asarray(sinr, dtype=float)
    if np.any(g < 0):
        raise ValueError("SINR must be >= 0")
    val = params.prelog * np.log1p(g) / math.log(2.0) - params.dispersion_coeff * np.sqrt(
        g * (2.0 + g)
    ) / (1.0 + g)
    return val if val.ndim else float(val)


@dataclass
class LinkCoefficients:
    """Power-independent SINR building blocks for one direction.

    SINR_u(alpha) = alpha_u*gain[u] / (sum_{i != u} cross[u, i]*alpha_i + noise[u]).
    cross has an exactly-zero diagonal.
    """

    direction: str  # "ul" | "dl"
    gain: np.ndarray  # (n_users,)
    cross: np.ndarray  # (n_users, n_users)
    noise: np.ndarray  # (n_users,)

    def __post_init__(self):
        self.gain = np.asarray(self.gain, dtype=float)
        self.cross = np.asarray(self.cross, dtype=float)
        self.noise = np.asarray(self.noise, dtype=float)
        n = self.gain.shape[0]
        if self.direction not in ("ul", "dl"):
            raise ValueError("direction must be 'ul' or 'dl'")
        if self.cross.shape != (n, n) or self.noise.shape != (n,):
            raise ValueError("inconsistent coefficient shapes")
        if np.any(self.gain < 0) or np.any(self.cross < 0) or np.any(self.noise <= 0):
            raise ValueError("gains/cross terms must be >= 0 and noise > 0")
        if np.any(np.diagonal(self.cross) != 0):
            raise ValueError("cross-gain diagonal must be zero")

    @property
    def n_users(self) -> int:
        return self.gain.shape[0]


def sinr_vector(alpha, coefs: LinkCoefficients) -> np.ndarray:
    """Per-user SINR at power allocation alpha (watts)."""
    a = np.asarray(alpha, dtype=float)
    if a.shape != (coefs.n_users,):
        raise ValueError("alpha has wrong shape")
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise ValueError("alpha must be finite and >= 0")
    denom = coefs.cross @ a + coefs.noise
    return a * coefs.gain / denom


def link_coefficients(
    direction: str,
    state: ChannelState,
    beams: BeamformerSet,
    noise_var: float,
) -> LinkCoefficients:
    """Reduce true channels + beamformers to SINR coefficients.

    With g[x, y] = sum_{a serving y} h[x, a]^H f[y, a]:
      downlink: gain_u = |g[u,u]|^2, cross[u,i] = |g[u,i]|^2, noise = receiver noise;
      uplink:   gain_u = |g[u,u]|^2, cross[u,i] = |g[i,u]|^2,
                noise_u = noise_var * sum_{a serving u} ||f[u,a]||^2.

    Beamformer vectors are zero outside serving links, so the plain sum
    over APs realizes the serving-set restriction.
    """
    if direction not in ("ul", "dl"):
        raise ValueError("direction must be 'ul' or 'dl'")
    if noise_var <= 0:
        raise ValueError("noise_var must be positive")
    g = np.einsum("xam,yam->xy", state.h.conj(), beams.vectors)
    mag = np.abs(g) ** 2
    gain = np.diagonal(mag).copy()
    n = mag.shape[0]
    if direction == "dl":
        cross = mag.copy()
        noise = np.full(n, noise_var)
    else:
        cross = mag.T.copy()
        noise = noise_var * np.sum(np.abs(beams.vectors) ** 2, axis=(1, 2))
    np.fill_diagonal(cross, 0.0)
    return LinkCoefficients(direction=direction, gain=gain, cross=cross, noise=noise)
