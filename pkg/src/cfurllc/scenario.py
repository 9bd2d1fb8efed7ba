"""Service-area geometry: wrap-around placement of access points and users.

The square service area wraps around at its edges (toroidal topology) so
that border users do not see an artificial cell edge.  Positions are 3-D
(x, y, z) with x, y in [0, side) and z a fixed height per node class.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict, replace

import numpy as np


@dataclass(frozen=True)
class AreaConfig:
    """Geometry and population of one service area.

    network_kind selects distributed access points ("cellfree") or a small
    regular grid of large colocated arrays ("colocated").
    """

    side_m: float = 1000.0
    ap_count: int = 100
    ap_antennas: int = 8
    ap_height_m: float = 10.0
    gu_count: int = 48
    gu_height_m: float = 1.65
    uav_count: int = 12
    uav_height_min_m: float = 22.5
    uav_height_max_m: float = 300.0
    serving_ap_count: int = 5
    network_kind: str = "cellfree"
    colocated_bs_count: int = 4
    colocated_antennas_per_bs: int = 200

    def __post_init__(self):
        if self.side_m <= 0:
            raise ValueError("side_m must be positive")
        if self.ap_count < 1 or self.ap_antennas < 1:
            raise ValueError("ap_count and ap_antennas must be >= 1")
        if self.gu_count < 0 or self.uav_count < 0:
            raise ValueError("user counts must be >= 0")
        if self.gu_count + self.uav_count < 1:
            raise ValueError("need at least one user")
        if not (0 < self.uav_height_min_m <= self.uav_height_max_m):
            raise ValueError("invalid aerial-user height range")
        if self.network_kind not in ("cellfree", "colocated"):
            raise ValueError(f"unknown network_kind {self.network_kind!r}")
        if self.network_kind == "cellfree":
            if not (1 <= self.serving_ap_count <= self.ap_count):
                raise ValueError("serving_ap_count must be in [1, ap_count]")
        else:
            grid = math.isqrt(self.colocated_bs_count)
            if grid * grid != self.colocated_bs_count:
                raise ValueError(
                    "colocated_bs_count must be a perfect square (regular grid)"
                )
            if self.colocated_antennas_per_bs < 1:
                raise ValueError("colocated_antennas_per_bs must be >= 1")

    @property
    def n_users(self) -> int:
        return self.gu_count + self.uav_count

    @property
    def n_aps(self) -> int:
        """Number of serving sites (APs in cellfree mode, BSs in colocated)."""
        if self.network_kind == "colocated":
            return self.colocated_bs_count
        return self.ap_count

    @property
    def antennas_per_ap(self) -> int:
        if self.network_kind == "colocated":
            return self.colocated_antennas_per_bs
        return self.ap_antennas


def wrap_distance(p, q, side: float):
    """Toroidal distance: horizontal axes wrap at `side`, height does not.

    p, q: arrays of shape (..., 3).  Returns the elementwise Euclidean
    distance with each horizontal delta replaced by min(|d|, side - |d|).
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if side <= 0:
        raise ValueError("side must be positive")
    d = np.abs(p - q)
    dxy = np.minimum(d[..., :2], side - d[..., :2])
    dz = d[..., 2]
    return np.sqrt(np.sum(dxy**2, axis=-1) + dz**2)


def wrap_distance_matrix(P, Q, side: float) -> np.ndarray:
    """Pairwise toroidal distances between row sets P (n,3) and Q (m,3)."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    return wrap_distance(P[:, None, :], Q[None, :, :], side)


def wrap_horizontal_matrix(P, Q, side: float) -> np.ndarray:
    """Pairwise toroidal distances ignoring height (ground-projected)."""
    P = np.asarray(P, dtype=float)[:, :2]
    Q = np.asarray(Q, dtype=float)[:, :2]
    d = np.abs(P[:, None, :] - Q[None, :, :])
    dxy = np.minimum(d, side - d)
    return np.sqrt(np.sum(dxy**2, axis=-1))


@dataclass
class Scenario:
    """One placement of access points and users.

    gu_positions come first in user indexing, aerial users after them.
    serving[u] lists the APs that serve user u (strongest first);
    served[a] lists the users AP a serves (ascending user index).
    Instances are treated as immutable after association is attached.
    """

    cfg: AreaConfig
    seed: int
    ap_positions: np.ndarray
    gu_positions: np.ndarray
    uav_positions: np.ndarray
    serving: list | None = None
    served: list | None = None

    @property
    def user_positions(self) -> np.ndarray:
        parts = [p for p in (self.gu_positions, self.uav_positions) if len(p)]
        return np.vstack(parts) if parts else np.zeros((0, 3))

    @property
    def user_kinds(self) -> tuple:
        return ("gu",) * len(self.gu_positions) + ("uav",) * len(self.uav_positions)

    @property
    def n_users(self) -> int:
        return len(self.gu_positions) + len(self.uav_positions)

    @property
    def n_aps(self) -> int:
        return len(self.ap_positions)

    def with_association(self, serving, served) -> "Scenario":
        return replace(self, serving=serving, served=served)

    def to_json(self) -> str:
        payload = {
            "cfg": asdict(self.cfg),
            "seed": int(self.seed),
            "ap_positions": self.ap_positions.tolist(),
            "gu_positions": self.gu_positions.tolist(),
            "uav_positions": self.uav_positions.tolist(),
            "serving": None
            if self.serving is None
            else [[int(a) for a in row] for row in self.serving],
            "served": None
            if self.served is None
            else [[int(u) for u in row] for row in self.served],
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        payload = json.loads(text)
        cfg = AreaConfig(**payload["cfg"])
        serving = payload["serving"]
        served = payload["served"]
        return cls(
            cfg=cfg,
            seed=int(payload["seed"]),
            ap_positions=np.asarray(payload["ap_positions"], dtype=float).reshape(-1, 3),
            gu_positions=np.asarray(payload["gu_positions"], dtype=float).reshape(-1, 3),
            uav_positions=np.asarray(payload["uav_positions"], dtype=float).reshape(-1, 3),
            serving=None if serving is None else [np.asarray(r, dtype=int) for r in serving],
            served=None if served is None else [np.asarray(r, dtype=int) for r in served],
        )


def _colocated_grid(cfg: AreaConfig) -> np.ndarray:
    grid = math.isqrt(cfg.colocated_bs_count)
    pitch = cfg.side_m / grid
    centers = [
        ((i + 0.5) * pitch, (j + 0.5) * pitch, cfg.ap_height_m)
        for i in range(grid)
        for j in range(grid)
    ]
    return np.asarray(centers, dtype=float)


def generate_scenario(cfg: AreaConfig, seed: int) -> Scenario:
    """Draw one scenario: AP layout plus user drop.  Association is attached
    later, once large-scale gains are known.

    AP placement and user placement use independent substreams of `seed`,
    so the cellfree and colocated variants of the same seed share one user
    drop and can be compared pairwise.
    """
    rng_users = np.random.default_rng(np.random.SeedSequence((int(seed), 1)))

    if cfg.network_kind == "colocated":
        ap_positions = _colocated_grid(cfg)
    else:
        rng_aps = np.random.default_rng(np.random.SeedSequence((int(seed), 0)))
        xy = rng_aps.uniform(0.0, cfg.side_m, size=(cfg.ap_count, 2))
        ap_positions = np.column_stack([xy, np.full(cfg.ap_count, cfg.ap_height_m)])

    gu_xy = rng_users.uniform(0.0, cfg.side_m, size=(cfg.gu_count, 2))
    gu_positions = np.column_stack([gu_xy, np.full(cfg.gu_count, cfg.gu_height_m)])
    uav_xy = rng_users.uniform(0.0, cfg.side_m, size=(cfg.uav_count, 2))
    uav_z = rng_users.uniform(cfg.uav_height_min_m, cfg.uav_height_max_m, size=cfg.uav_count)
    uav_positions = np.column_stack([uav_xy, uav_z])

    return Scenario(
        cfg=cfg,
        seed=int(seed),
        ap_positions=ap_positions,
        gu_positions=gu_positions.reshape(-1, 3),
        uav_positions=uav_positions.reshape(-1, 3),
    )


def associate(large_scale_db: np.ndarray, k: int):
    """User-centric association: each user picks its k strongest APs.

    large_scale_db: (n_users, n_aps) channel gains in dB.
    Returns (serving, served): serving[u] is a length-k int array sorted by
    descending gain (ties broken toward the lower AP index); served[a] is
    the ascending-sorted array of users that picked AP a (may be empty).
    """
    gains = np.asarray(large_scale_db, dtype=float)
    if gains.ndim != 2:
        raise ValueError("large_scale_db must be 2-D (users x APs)")
    n_users, n_aps = gains.shape
    if not (1 <= k <= n_aps):
        raise ValueError(f"k={k} must be in [1, n_aps={n_aps}]")

    ap_idx = np.arange(n_aps)
    serving = []
    for u in range(n_users):
        # lexsort: primary key last -> sort by descending gain, ties by index.
        order = np.lexsort((ap_idx, -gains[u]))
        serving.append(order[:k].copy())

    served = [[] for _ in range(n_aps)]
    for u, aps in enumerate(serving):
        for a in aps:
            served[int(a)].append(u)
    served = [np.asarray(sorted(users), dtype=int) for users in served]
    return serving, served
