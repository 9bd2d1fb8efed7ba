"""Channel models: large-scale fading, correlated shadowing, small-scale draws.

Ground users follow an urban log-distance model with spatially correlated
lognormal shadowing and Rayleigh small-scale fading.  Aerial users follow
a two-branch line-of-sight / non-line-of-sight model with Rician fading on
LOS links.  Small-scale channels for a uniform linear array use a
half-wavelength steering vector.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace, field

import numpy as np

from .scenario import (
    Scenario,
    wrap_distance,
    wrap_distance_matrix,
    wrap_horizontal_matrix,
)

# Stream tags for per-purpose child seeds (kept distinct and stable so that
# draws are independent of loop order and safe under process parallelism).
_STREAM_GU_SHADOW = 2
_STREAM_UAV_LINK = 3
_STREAM_FADING = 4


@dataclass(frozen=True)
class GuChannelConfig:
    """Ground-user model constants (urban log-distance with shadowing)."""

    shadow_sigma_db: float = 4.0
    shadow_corr_dist_m: float = 9.0  # distance at which correlation halves


@dataclass(frozen=True)
class UavChannelConfig:
    """Aerial-user model constants.

    Links are LOS with probability `uav_los_probability`; LOS links use
    path-loss exponent pl_exp_los and Rician factor k_los_db, NLOS links
    use pl_exp_nlos and Rayleigh fading.  Above los_height_m the link is
    always LOS.  Valid heights are [height_min_m, height_max_m].
    """

    los_height_m: float = 100.0
    los_d1_a: float = 294.05
    los_d1_b: float = -432.94
    los_d1_min_m: float = 18.0
    los_p1_a: float = 233.98
    los_p1_b: float = -0.95
    pl_exp_los: float = 2.2
    pl_exp_nlos: float = 3.5
    k_los_db: float = 10.0
    shadow_sigma_db: float = 4.0
    height_min_m: float = 22.5
    height_max_m: float = 300.0


@dataclass(frozen=True)
class LinkParams:
    """Large-scale description of one user-AP link."""

    large_scale_db: float
    rician_k: float  # linear power ratio of LOS to scattered component
    los_phase: float  # radians
    aoa: float  # radians, angle used by the array steering vector
    is_los: bool

    def __post_init__(self):
        if self.rician_k < 0:
            raise ValueError("rician_k must be >= 0")
        if not (-math.pi <= self.aoa <= math.pi):
            raise ValueError("aoa must lie in [-pi, pi]")


def gu_large_scale_db(distance_m, freq_ghz: float, shadow_db=0.0):
    """Urban ground-user channel gain in dB at 3-D distance `distance_m`.

    gain = -36.7 log10(d) - 22.7 log10(f_GHz) + shadowing.
    """
    d = np.asarray(distance_m, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    if freq_ghz <= 0:
        raise ValueError("carrier frequency must be positive")
    return -36.7 * np.log10(d) - 22.7 * np.log10(freq_ghz) + np.asarray(shadow_db)


def correlated_shadowing(
    gu_positions,
    n_aps: int,
    sigma_db: float = 4.0,
    corr_dist_m: float = 9.0,
    side_m: float | None = None,
    seed=None,
) -> np.ndarray:
    """Spatially correlated shadowing for ground users, (n_gu, n_aps) dB.

    Covariance between users g and i at the same AP is
    sigma^2 * 2^(-r_{g,i}/corr_dist_m); links at different APs are
    independent.  The covariance is realized through its symmetric
    eigendecomposition square root; negative eigenvalues (numerical) are
    clipped to zero with a warning.
    """
    pos = np.asarray(gu_positions, dtype=float)
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise ValueError("gu_positions must have shape (n_gu, 3)")
    if sigma_db < 0 or corr_dist_m <= 0:
        raise ValueError("sigma_db must be >= 0 and corr_dist_m > 0")
    if n_aps < 1:
        raise ValueError("n_aps must be >= 1")
    n_gu = pos.shape[0]
    if n_gu == 0:
        return np.zeros((0, n_aps))

    if side_m is not None:
        r = wrap_distance_matrix(pos, pos, side_m)
    else:
        diff = pos[:, None, :] - pos[None, :, :]
        r = np.sqrt(np.sum(diff**2, axis=-1))
    cov = (sigma_db**2) * np.power(2.0, -r / corr_dist_m)

    vals, vecs = np.linalg.eigh(cov)
    if np.any(vals < -1e-10 * max(vals.max(), 1.0)):
        warnings.warn(
            "shadowing covariance has negative eigenvalues; clipping to zero",
            RuntimeWarning,
        )
    vals = np.clip(vals, 0.0, None)
    root = (vecs * np.sqrt(vals)) @ vecs.T  # symmetric square root

    rng = _as_generator(seed)
    z = rng.standard_normal((n_gu, n_aps))
    return root @ z


def uav_los_probability(d2d_m: float, height_m: float, cfg: UavChannelConfig) -> float:
    """Probability that an aerial link is line-of-sight.

    1 above cfg.los_height_m; below, a distance/height form with the
    close-in radius d1 and decay length p1 growing with height:
      d1 = max(los_d1_a*log10(h) + los_d1_b, los_d1_min_m)
      p1 = los_p1_a*log10(h) + los_p1_b
      p  = 1 for d2d <= d1, else d1/d2d + exp(-d2d/p1)*(1 - d1/d2d)
    """
    if height_m >= cfg.los_height_m:
        return 1.0
    d1 = max(cfg.los_d1_a * math.log10(height_m) + cfg.los_d1_b, cfg.los_d1_min_m)
    p1 = cfg.los_p1_a * math.log10(height_m) + cfg.los_p1_b
    if p1 <= 0:
        raise ValueError("LOS decay length p1 must be positive; check config")
    if d2d_m <= d1:
        return 1.0
    frac = d1 / d2d_m
    return frac + math.exp(-d2d_m / p1) * (1.0 - frac)


def uav_link_params(
    uav_pos,
    ap_pos,
    freq_ghz: float,
    side_m: float,
    cfg: UavChannelConfig,
    seed=None,
) -> LinkParams:
    """Draw the large-scale description of one aerial-user link.

    gain = -10*exp*log10(d3d) - 22.7*log10(f_GHz) + N(0, shadow_sigma^2),
    with the exponent/Rician factor selected by the LOS draw.
    """
    uav_pos = np.asarray(uav_pos, dtype=float)
    ap_pos = np.asarray(ap_pos, dtype=float)
    height = float(uav_pos[2])
    if not (cfg.height_min_m <= height <= cfg.height_max_m):
        raise ValueError(
            f"aerial-user height {height} m outside "
            f"[{cfg.height_min_m}, {cfg.height_max_m}] m"
        )
    rng = _as_generator(seed)

    d3d = float(wrap_distance(uav_pos, ap_pos, side_m))
    dxy = np.abs(uav_pos[:2] - ap_pos[:2])
    dxy = np.minimum(dxy, side_m - dxy)
    d2d = float(np.hypot(dxy[0], dxy[1]))

    p_los = uav_los_probability(d2d, height, cfg)
    is_los = bool(rng.uniform() < p_los)
    shadow = float(rng.normal(0.0, cfg.shadow_sigma_db))
    phase = float(rng.uniform(0.0, 2.0 * math.pi))

    exponent = cfg.pl_exp_los if is_los else cfg.pl_exp_nlos
    gain_db = -10.0 * exponent * math.log10(d3d) - 22.7 * math.log10(freq_ghz) + shadow
    k = 10.0 ** (cfg.k_los_db / 10.0) if is_los else 0.0
    aoa = math.atan2(height - float(ap_pos[2]), d2d)
    return LinkParams(
        large_scale_db=gain_db, rician_k=k, los_phase=phase, aoa=aoa, is_los=is_los
    )


def steering_vector(theta: float, m: int) -> np.ndarray:
    """Half-wavelength uniform linear array response, element n = exp(j*pi*n*sin(theta))."""
    if m < 1:
        raise ValueError("array size must be >= 1")
    n = np.arange(m)
    return np.exp(1j * math.pi * n * np.sin(theta))


def draw_channel(lp: LinkParams, m: int, seed=None) -> np.ndarray:
    """One small-scale realization of an m-antenna link.

    h = sqrt(beta/(K+1)) * (sqrt(K) e^{j phase} a(aoa) + g), g ~ CN(0, I),
    so E||h||^2 = beta * m.
    """
    rng = _as_generator(seed)
    beta = 10.0 ** (lp.large_scale_db / 10.0)
    k = lp.rician_k
    g = (rng.standard_normal(m) + 1j * rng.standard_normal(m)) / math.sqrt(2.0)
    los = math.sqrt(k) * np.exp(1j * lp.los_phase) * steering_vector(lp.aoa, m)
    return math.sqrt(beta / (k + 1.0)) * (los + g)


@dataclass
class ChannelState:
    """All per-link channel quantities for one scenario.

    Arrays are indexed [user, ap]; h and h_hat additionally carry the
    antenna axis.  h_hat is filled by the estimation stage.
    """

    scenario: Scenario
    freq_ghz: float
    antennas: int
    h: np.ndarray  # (n_users, n_aps, m) complex128
    large_scale_db: np.ndarray  # (n_users, n_aps)
    rician_k: np.ndarray  # (n_users, n_aps)
    los_phase: np.ndarray  # (n_users, n_aps)
    aoa: np.ndarray  # (n_users, n_aps)
    is_los: np.ndarray  # (n_users, n_aps) bool
    h_hat: np.ndarray | None = None

    def link_params(self, u: int, a: int) -> LinkParams:
        return LinkParams(
            large_scale_db=float(self.large_scale_db[u, a]),
            rician_k=float(self.rician_k[u, a]),
            los_phase=float(self.los_phase[u, a]),
            aoa=float(self.aoa[u, a]),
            is_los=bool(self.is_los[u, a]),
        )

    @property
    def large_scale_lin(self) -> np.ndarray:
        return 10.0 ** (self.large_scale_db / 10.0)


def build_channel_state(
    scenario: Scenario,
    freq_ghz: float,
    gu_cfg: GuChannelConfig,
    uav_cfg: UavChannelConfig,
    seed: int,
) -> ChannelState:
    """Draw every user-AP link of a scenario.

    Ground users: log-distance gain plus correlated shadowing, Rayleigh
    fading.  Aerial users: independent per-link LOS/NLOS branches.  Every
    random quantity uses a child stream keyed by (seed, purpose, indices),
    so results do not depend on evaluation order.
    """
    n_gu = len(scenario.gu_positions)
    n_uav = len(scenario.uav_positions)
    n_users = n_gu + n_uav
    n_aps = scenario.n_aps
    m = scenario.cfg.antennas_per_ap
    side = scenario.cfg.side_m

    large_scale_db = np.zeros((n_users, n_aps))
    rician_k = np.zeros((n_users, n_aps))
    los_phase = np.zeros((n_users, n_aps))
    aoa = np.zeros((n_users, n_aps))
    is_los = np.zeros((n_users, n_aps), dtype=bool)

    positions = scenario.user_positions
    d3d = wrap_distance_matrix(positions, scenario.ap_positions, side)
    d2d = wrap_horizontal_matrix(positions, scenario.ap_positions, side)
    dz = positions[:, 2:3] - scenario.ap_positions[None, :, 2]
    aoa[:] = np.arctan2(dz, d2d)

    if n_gu:
        shadow = correlated_shadowing(
            scenario.gu_positions,
            n_aps,
            sigma_db=gu_cfg.shadow_sigma_db,
            corr_dist_m=gu_cfg.shadow_corr_dist_m,
            side_m=side,
            seed=np.random.SeedSequence((int(seed), _STREAM_GU_SHADOW)),
        )
        large_scale_db[:n_gu] = gu_large_scale_db(d3d[:n_gu], freq_ghz, shadow)

    for v in range(n_uav):
        u = n_gu + v
        for a in range(n_aps):
            lp = uav_link_params(
                scenario.uav_positions[v],
                scenario.ap_positions[a],
                freq_ghz,
                side,
                uav_cfg,
                seed=np.random.SeedSequence((int(seed), _STREAM_UAV_LINK, u, a)),
            )
            large_scale_db[u, a] = lp.large_scale_db
            rician_k[u, a] = lp.rician_k
            los_phase[u, a] = lp.los_phase
            aoa[u, a] = lp.aoa
            is_los[u, a] = lp.is_los

    h = np.zeros((n_users, n_aps, m), dtype=np.complex128)
    for u in range(n_users):
        for a in range(n_aps):
            lp = LinkParams(
                large_scale_db=float(large_scale_db[u, a]),
                rician_k=float(rician_k[u, a]),
                los_phase=float(los_phase[u, a]),
                aoa=float(aoa[u, a]),
                is_los=bool(is_los[u, a]),
            )
            h[u, a] = draw_channel(
                lp, m, seed=np.random.SeedSequence((int(seed), _STREAM_FADING, u, a))
            )

    return ChannelState(
        scenario=scenario,
        freq_ghz=freq_ghz,
        antennas=m,
        h=h,
        large_scale_db=large_scale_db,
        rician_k=rician_k,
        los_phase=los_phase,
        aoa=aoa,
        is_los=is_los,
    )


def dump_channel_matrix(h: np.ndarray, path) -> None:
    """Write channel realizations as little-endian complex64 (re, im float32
    pairs) in row-major order.  Shape is not stored; keep it alongside."""
    np.ascontiguousarray(h).astype("<c8").tofile(path)


def load_channel_matrix(path, shape) -> np.ndarray:
    """Read a file written by dump_channel_matrix back into `shape`."""
    flat = np.fromfile(path, dtype="<c8")
    expected = int(np.prod(shape))
    if flat.size != expected:
        raise ValueError(f"file holds {flat.size} entries, expected {expected}")
    return flat.reshape(shape).astype(np.complex128)


def _as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
