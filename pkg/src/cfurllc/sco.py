"""Successive convex power control for the finite-blocklength rate objective.

Two surrogate schemes around an expansion point (the previous iterate):

  * "icba" — the Shannon term is lower-bounded through a log-fraction
    inequality that keeps the interference coupling, and the dispersion
    penalty is linearized in the SINR and evaluated at a convex
    quadratic-over-previous upper bound of the SINR.  The combined
    surrogate is concave, tight at the expansion point, and lies below
    the true rate everywhere on the feasible set.
  * "iia" — interference is frozen at the expansion point, making the
    Shannon term concave in the user's own power alone; the dispersion
    penalty is linearized in the own power.  Tight at the expansion
    point; not a global bound.

Each outer iteration maximizes the surrogate objective (sum or minimum of
per-user rates) over the power constraints: a per-user box in uplink, and
per-AP sum caps in downlink.  The inner solver is projected gradient
ascent with a backtracking line search for the sum objective, and a
projected supergradient method with Polyak-style steps and best-iterate
tracking for the max-min objective.  The outer loop stops when the
squared relative step  ||a_k - a_{k-1}||^2 / ||a_k||^2  falls below
`step_tol`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .rate import LinkCoefficients, UrllcParams, sinr_vector, urllc_rate

LN2 = math.log(2.0)

_INTERIOR_FRAC = 1e-12  # iterate floor, as a fraction of the per-user cap
_ROUND_FRAC = 10.0  # outputs below _ROUND_FRAC * floor are reported as 0
_ARMIJO = 1e-4
_PROJ_TOL = 1e-13


def _dispersion_shape(g):
    """sqrt(1 - (1+g)^-2) computed stably as sqrt(g*(2+g))/(1+g)."""
    g = np.asarray(g, dtype=float)
    return np.sqrt(g * (2.0 + g)) / (1.0 + g)


def _dispersion_slope(g):
    """d/dg of the dispersion shape: (1+g)^-3 / shape; inf-safe at g=0."""
    g = np.asarray(g, dtype=float)
    shape = _dispersion_shape(g)
    out = np.zeros_like(g)
    pos = shape > 0
    out[pos] = 1.0 / ((1.0 + g[pos]) ** 3 * shape[pos])
    return out


# ---------------------------------------------------------------------------
# Feasible sets and projections
# ---------------------------------------------------------------------------


def dykstra_project(y, floor, cap_sets, caps, max_passes=5000, tol=_PROJ_TOL):
    """Cyclic Dykstra projection onto {x >= floor} and per-set sum caps.

    cap_sets: list of int index arrays; caps: matching upper bounds on
    sum(x[idx]).  Reference implementation: exact in the limit, used
    directly on small problems and as the validation/fallback route for
    the dual fast path.
    """
    y = np.asarray(y, dtype=float)
    x = y.copy()
    inc_box = np.zeros_like(x)
    inc = [np.zeros(len(idx)) for idx in cap_sets]
    # The tolerance must scale with the feasible set, not with the (possibly
    # far-away) input point, or far inputs stop the passes too early.
    scale = max(float(np.max(caps, initial=0.0)), float(np.max(floor, initial=0.0)), 1e-12)
    for _ in range(max_passes):
        change = 0.0
        z = x + inc_box
        xn = np.maximum(z, floor)
        inc_box = z - xn
        change = max(change, float(np.max(np.abs(xn - x))) if xn.size else 0.0)
        x = xn
        for j, idx in enumerate(cap_sets):
            z = x[idx] + inc[j]
            tot = z.sum()
            if tot > caps[j]:
                zn = z - (tot - caps[j]) / len(idx)
            else:
                zn = z
            inc[j] = z - zn
            d = np.max(np.abs(zn - x[idx])) if len(idx) else 0.0
            change = max(change, float(d))
            x[idx] = zn
        if change <= tol * scale:
            break
    # Exact on the box; leaves cap residuals no larger than the pass change.
    return np.maximum(x, floor)


@dataclass
class FeasibleSet:
    """Power constraints of one problem instance.

    Uplink: 0 <= alpha_u <= user_caps[u].
    Downlink: alpha >= 0 and sum_{u served by a} alpha_u <= ap_caps[a].
    All solver iterates are clamped to a strict-interior floor
    (interior_frac times the per-user cap) so surrogate terms that involve
    sqrt(alpha) or alpha^2/alpha_prev stay differentiable.
    """

    direction: str
    n_users: int
    user_caps: np.ndarray | None = None
    ap_caps: np.ndarray | None = None
    served: list | None = None
    interior_frac: float = _INTERIOR_FRAC

    def __post_init__(self):
        if self.direction not in ("ul", "dl"):
            raise ValueError("direction must be 'ul' or 'dl'")
        if self.direction == "ul":
            if self.user_caps is None:
                raise ValueError("uplink needs user_caps")
            self.user_caps = np.asarray(self.user_caps, dtype=float)
            if self.user_caps.shape != (self.n_users,) or np.any(self.user_caps <= 0):
                raise ValueError("user_caps must be positive, one per user")
        else:
            if self.ap_caps is None or self.served is None:
                raise ValueError("downlink needs ap_caps and served lists")
            self.ap_caps = np.asarray(self.ap_caps, dtype=float)
            if np.any(self.ap_caps <= 0):
                raise ValueError("ap_caps must be positive")
            if len(self.served) != len(self.ap_caps):
                raise ValueError("served and ap_caps must align")
            self.served = [np.asarray(s, dtype=int) for s in self.served]
            covered = np.zeros(self.n_users, dtype=bool)
            for s in self.served:
                covered[s] = True
            if not covered.all():
                raise ValueError("every user needs at least one serving AP")
        self._setup()

    def _setup(self):
        self._full = self._full_power()
        self._floor = self.interior_frac * self._full
        if self.direction == "dl":
            keep = [j for j, s in enumerate(self.served) if len(s)]
            self._sets = [self.served[j] for j in keep]
            self._caps = np.array([float(self.ap_caps[j]) for j in keep])
            k = len(self._sets)
            a = np.zeros((k, self.n_users))
            for j, idx in enumerate(self._sets):
                a[j, idx] = 1.0
            self._a = a
            self._lam = np.zeros(k)
            m = a @ a.T
            self._pg_step = 1.0 / max(float(np.max(m.sum(axis=1))), 1.0)

    def _full_power(self) -> np.ndarray:
        if self.direction == "ul":
            return self.user_caps.copy()
        full = np.full(self.n_users, np.inf)
        for j, idx in enumerate(self.served):
            if len(idx):
                share = float(self.ap_caps[j]) / len(idx)
                np.minimum.at(full, idx, share)
        return full

    def full_power(self) -> np.ndarray:
        """Feasible full-power start: the cap in uplink; in downlink the
        largest equal share min_a cap_a/|served(a)| over each user's APs."""
        return self._full.copy()

    @property
    def floor(self) -> np.ndarray:
        return self._floor

    def clamp_interior(self, x) -> np.ndarray:
        return np.maximum(np.asarray(x, dtype=float), self._floor)

    def round_small(self, x) -> np.ndarray:
        """Zero out entries at (or near) the interior floor for reporting."""
        x = np.asarray(x, dtype=float).copy()
        x[x < _ROUND_FRAC * self._floor] = 0.0
        return x

    def violation(self, x) -> float:
        """Largest constraint violation in watts (0 when feasible)."""
        x = np.asarray(x, dtype=float)
        worst = float(np.max(-x, initial=0.0))
        if self.direction == "ul":
            worst = max(worst, float(np.max(x - self.user_caps, initial=0.0)))
        else:
            sums = self._a @ x
            worst = max(worst, float(np.max(sums - self._caps, initial=0.0)))
        return worst

    def project(self, x) -> np.ndarray:
        """Euclidean projection onto the interior-floored feasible set."""
        x = np.asarray(x, dtype=float)
        if self.direction == "ul":
            return np.clip(x, self._floor, self.user_caps)
        return self._project_dl(x)

    # -- downlink projection: dual semismooth Newton with Dykstra fallback --

    def _project_dl(self, y: np.ndarray) -> np.ndarray:
        if not len(self._sets):
            return np.maximum(y, self._floor)
        if len(self._sets) <= 4:
            return dykstra_project(y, self._floor, self._sets, self._caps)
        x, ok = self._project_dual(y)
        if not ok:
            x = dykstra_project(y, self._floor, self._sets, self._caps)
        return x

    def _project_dual(self, y: np.ndarray):
        """Solve the projection QP through its dual.

        maximize D(lam) over lam >= 0 with x(lam) = max(y - A^T lam, floor)
        and grad D = A x(lam) - caps.  Newton steps on the active piece,
        safeguarded by projected-gradient steps; exactness is checked via
        the complementarity residual.
        """
        a = self._a
        caps = self._caps
        lo = self._floor
        lam = self._lam.copy()
        scale = max(float(np.max(caps)), float(np.max(lo, initial=0.0)), 1e-12)
        best_res = np.inf
        for it in range(80):
            x = np.maximum(y - a.T @ lam, lo)
            r = a @ x - caps  # ascent gradient of the dual
            res = float(np.max(np.abs(np.minimum(lam, -r)), initial=0.0))
            res = max(res, float(np.max(r, initial=0.0)))
            if res <= _PROJ_TOL * scale:
                self._lam = lam
                return x, True
            take_newton = res <= 0.99 * best_res or it == 0
            best_res = min(best_res, res)
            stepped = False
            if take_newton:
                free = (y - a.T @ lam) > lo
                work = (lam > 0) | (r > 0)
                if np.any(work):
                    aw = a[np.ix_(work, free)]
                    m = aw @ aw.T
                    m[np.diag_indices_from(m)] += 1e-12 * max(np.trace(m).real, 1.0)
                    try:
                        d = np.linalg.solve(m, r[work])
                        lam_new = lam.copy()
                        lam_new[work] = np.maximum(lam_new[work] + d, 0.0)
                        lam = lam_new
                        stepped = True
                    except np.linalg.LinAlgError:
                        stepped = False
            if not stepped:
                lam = np.maximum(lam + self._pg_step * r, 0.0)
        return np.maximum(y - a.T @ lam, lo), False


def uplink_feasible_set(user_caps) -> FeasibleSet:
    caps = np.asarray(user_caps, dtype=float)
    return FeasibleSet(direction="ul", n_users=caps.shape[0], user_caps=caps)


def downlink_feasible_set(n_users: int, ap_caps, served) -> FeasibleSet:
    return FeasibleSet(
        direction="dl", n_users=n_users, ap_caps=ap_caps, served=served
    )


# ---------------------------------------------------------------------------
# Surrogates
# ---------------------------------------------------------------------------


class IiaSurrogate:
    """Interference frozen at the expansion point; dispersion linearized
    in the own power.  Each user's surrogate depends on its own power
    alone, so the Jacobian is diagonal."""

    def __init__(
        self,
        coefs: LinkCoefficients,
        params: UrllcParams,
        alpha_prev,
        shannon_only: bool = False,
    ):
        prev = np.asarray(alpha_prev, dtype=float)
        if prev.shape != (coefs.n_users,):
            raise ValueError("alpha_prev has wrong shape")
        if np.any(prev < 0):
            raise ValueError("alpha_prev must be >= 0")
        self.coefs = coefs
        self.params = params
        self.prev = prev.copy()
        self.cs = params.prelog / LN2
        denom = coefs.cross @ prev + coefs.noise
        self.ratio = coefs.gain / denom  # SINR per watt of own power
        gbar = prev * self.ratio
        if shannon_only:
            self.base = np.zeros_like(gbar)
            self.slope = np.zeros_like(gbar)
        else:
            c2 = params.dispersion_coeff
            self.base = c2 * _dispersion_shape(gbar)
            self.slope = np.where(
                self.ratio > 0, c2 * _dispersion_slope(gbar) * self.ratio, 0.0
            )

    @property
    def expansion(self) -> np.ndarray:
        return self.prev

    def values(self, alpha) -> np.ndarray:
        a = np.asarray(alpha, dtype=float)
        sh = self.params.prelog * np.log1p(a * self.ratio) / LN2
        return sh - self.base - self.slope * (a - self.prev)

    def sum_value(self, alpha) -> float:
        return float(np.sum(self.values(alpha)))

    def sum_value_grad(self, alpha):
        a = np.asarray(alpha, dtype=float)
        vals = self.values(a)
        grad = self.cs * self.ratio / (1.0 + a * self.ratio) - self.slope
        return float(np.sum(vals)), grad

    def grad_rows(self, alpha, rows) -> np.ndarray:
        a = np.asarray(alpha, dtype=float)
        rows = np.asarray(rows, dtype=int)
        out = np.zeros((len(rows), len(a)))
        diag = self.cs * self.ratio[rows] / (1.0 + a[rows] * self.ratio[rows]) - self.slope[rows]
        out[np.arange(len(rows)), rows] = diag
        return out

    def coordinate_argmax(self, lo, hi) -> np.ndarray:
        """Exact per-user maximizer over the box [lo, hi].

        Each user's surrogate is concave in its own power alone, so the
        coordinate-wise argmax maximizes the sum exactly.  Derivative
        cs*r/(1+a*r) - slope has the closed-form root a* = cs/slope - 1/r;
        slope == 0 means the value is nondecreasing (cap), and a dead link
        (r == 0) gets the floor rather than burning power on a flat value."""
        lo = np.broadcast_to(np.asarray(lo, dtype=float), self.ratio.shape)
        hi = np.broadcast_to(np.asarray(hi, dtype=float), self.ratio.shape)
        r = self.ratio
        s = self.slope
        a_star = np.where(r > 0, hi, lo).astype(float)
        pos = (r > 0) & (s > 0)
        if np.any(pos):
            a_star[pos] = self.cs / s[pos] - 1.0 / r[pos]
        return np.clip(a_star, lo, hi)

    def least_power_maxmin(self, lo, hi) -> np.ndarray:
        """Least-power exact max-min point over the box [lo, hi].

        The max-min value over a box is t* = min_u max f_u, and the optimal
        set is a product of intervals: any point where every user clears t*.
        Which optimum is returned matters for the outer iteration — taking
        each user's own argmax maximizes interference at the next expansion
        and collapses the loop, while the least-power point that still
        reaches t* lowers interference, so the attainable t* rises from one
        expansion to the next (the classic rate-balancing update).  Each
        user's value is concave, hence increasing on [lo, argmax], so the
        smallest power with f_u >= t* is found by bisection."""
        lo = np.broadcast_to(np.asarray(lo, dtype=float), self.ratio.shape).astype(float)
        a_star = self.coordinate_argmax(lo, hi)
        t_star = float(np.min(self.values(a_star)))
        a_lo = lo.copy()
        a_hi = a_star.copy()
        at_floor = self.values(a_lo) >= t_star
        a_hi[at_floor] = a_lo[at_floor]
        for _ in range(60):
            mid = 0.5 * (a_lo + a_hi)
            up = self.values(mid) >= t_star
            a_hi[up] = mid[up]
            a_lo[~up] = mid[~up]
        return a_hi


class IcbaSurrogate:
    """Log-fraction lower bound on the Shannon term plus a linearized
    dispersion evaluated at a convex SINR upper bound.  Concave, tight at
    the expansion point, and a global lower bound of the true rate on the
    nonnegative orthant.  Requires a strictly positive expansion point.
    shannon_only drops the dispersion part (used for warm starts)."""

    def __init__(
        self,
        coefs: LinkCoefficients,
        params: UrllcParams,
        alpha_prev,
        shannon_only: bool = False,
    ):
        prev = np.asarray(alpha_prev, dtype=float)
        if prev.shape != (coefs.n_users,):
            raise ValueError("alpha_prev has wrong shape")
        if np.any(prev <= 0):
            raise ValueError("this scheme needs a strictly positive previous iterate")
        self.coefs = coefs
        self.params = params
        self.prev = prev.copy()
        self.cs = params.prelog / LN2
        q = coefs.gain
        ibar = coefs.cross @ prev + coefs.noise
        self.gbar = prev * q / ibar
        self.sbar = prev * q + ibar
        self.log_base = np.log1p(self.gbar)
        if shannon_only:
            self.delta_base = np.zeros_like(self.gbar)
            self.delta_slope = np.zeros_like(self.gbar)
        else:
            c2 = params.dispersion_coeff
            self.delta_base = c2 * _dispersion_shape(self.gbar)
            self.delta_slope = np.where(q > 0, c2 * _dispersion_slope(self.gbar), 0.0)

    @property
    def expansion(self) -> np.ndarray:
        return self.prev

    def _pieces(self, alpha):
        a = np.asarray(alpha, dtype=float)
        q = self.coefs.gain
        icur = self.coefs.cross @ a + self.coefs.noise
        root = 2.0 * np.sqrt(np.maximum(a, 0.0) / self.prev)
        sh = self.cs * (
            self.log_base + self.gbar * (root - (a * q + icur) / self.sbar - 1.0)
        )
        quad = 0.5 * (a * a / self.prev + self.prev) * q  # SINR upper-bound numerator
        g_up = quad / icur
        delta = self.delta_base + self.delta_slope * (g_up - self.gbar)
        return a, icur, quad, sh, delta

    def values(self, alpha) -> np.ndarray:
        _, _, _, sh, delta = self._pieces(alpha)
        return sh - delta

    def sinr_upper(self, alpha) -> np.ndarray:
        """The convex SINR upper bound the dispersion is evaluated at."""
        a = np.asarray(alpha, dtype=float)
        icur = self.coefs.cross @ a + self.coefs.noise
        return 0.5 * (a * a / self.prev + self.prev) * self.coefs.gain / icur

    def shannon_lower(self, alpha) -> np.ndarray:
        """The concave lower bound of the Shannon term alone (bits/s)."""
        _, _, _, sh, _ = self._pieces(alpha)
        return sh

    def sum_value(self, alpha) -> float:
        return float(np.sum(self.values(alpha)))

    def _grad_common(self, a, icur, quad):
        q = self.coefs.gain
        own = self.cs * self.gbar * (
            1.0 / np.sqrt(np.maximum(a, 1e-300) * self.prev) - q / self.sbar
        ) - self.delta_slope * (a / self.prev) * q / icur
        wcross = -self.cs * self.gbar / self.sbar + self.delta_slope * quad / icur**2
        return own, wcross

    def sum_value_grad(self, alpha):
        a, icur, quad, sh, delta = self._pieces(alpha)
        own, wcross = self._grad_common(a, icur, quad)
        grad = own + self.coefs.cross.T @ wcross
        return float(np.sum(sh - delta)), grad

    def grad_rows(self, alpha, rows) -> np.ndarray:
        a, icur, quad, _, _ = self._pieces(alpha)
        own, wcross = self._grad_common(a, icur, quad)
        rows = np.asarray(rows, dtype=int)
        out = wcross[rows, None] * self.coefs.cross[rows, :]
        out[np.arange(len(rows)), rows] += own[rows]
        return out


def make_surrogate(scheme: str, coefs, params, alpha_prev, shannon_only=False):
    scheme = scheme.lower()
    if scheme == "iia":
        return IiaSurrogate(coefs, params, alpha_prev, shannon_only=shannon_only)
    if scheme == "icba":
        return IcbaSurrogate(coefs, params, alpha_prev, shannon_only=shannon_only)
    raise ValueError(f"unknown scheme {scheme!r}")


# ---------------------------------------------------------------------------
# Inner solvers
# ---------------------------------------------------------------------------


def _pga_max_sum(surr, feas: FeasibleSet, start, budget: int, value_tol: float = 1e-9):
    """Projected gradient ascent with spectral (Barzilai-Borwein) steps and
    a non-monotone Armijo line search along the feasible arc.

    One projection per iteration; the best feasible iterate (the start
    included) is returned, so the result never falls below the start."""
    x = feas.project(np.asarray(start, dtype=float))
    f, g = surr.sum_value_grad(x)
    x_best, f_best = x, f
    hist = [f]  # recent values; line-search reference allows temporary dips
    t = None
    iters = 0
    x_prev = g_prev = None
    check_every = 10
    best_at_check = f_best
    for iters in range(1, budget + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm == 0.0:
            break
        if x_prev is not None:
            dx = x - x_prev
            den = -float(dx @ (g - g_prev))
            if den > 0.0:
                t = float(dx @ dx) / den
        if t is None:
            t = max(float(np.linalg.norm(x)), float(np.max(feas.floor)), 1e-12) / gnorm
        t = min(max(t, 1e-18), 1e18)
        y = feas.project(x + t * g)
        d = y - x
        gd = float(g @ d)
        fscale = max(1.0, abs(f))
        if gd <= 1e-12 * fscale:
            break
        fref = min(hist[-8:])
        s = 1.0
        accepted = False
        for _ in range(45):
            xc = y if s == 1.0 else x + s * d
            fc = surr.sum_value(xc)
            if fc >= fref + _ARMIJO * s * gd:
                accepted = True
                break
            s *= 0.5
        if not accepted:
            t *= 0.25
            x_prev = g_prev = None
            if t * gnorm <= 1e-18 * max(1.0, float(np.linalg.norm(x))):
                break
            continue
        x_prev, g_prev = x, g
        x = xc
        f, g = surr.sum_value_grad(x)
        hist.append(f)
        if f > f_best:
            f_best, x_best = f, x
        if iters % check_every == 0:
            if f_best - best_at_check <= value_tol * max(1.0, abs(f_best)):
                break
            best_at_check = f_best
    return x_best, {"inner_iterations": iters, "inner_value": f_best}


def _polyak_max_min(surr, feas: FeasibleSet, start, budget: int, gap_start=None):
    """Projected supergradient on min_u surrogate_u with Polyak-style steps.

    The supergradient averages the gradients of every user within a small
    relative tolerance of the minimum; the step targets the running best
    value plus a gap.  Progress is reviewed in fixed windows: a window that
    gains less than a quarter of the gap halves it, and the run stops once
    the gap falls below a small fraction of the objective scale.  gap_start
    (absolute) seeds the gap — successive outer iterations pass a value
    matched to the gain still available, which keeps warm-started
    subproblems from burning steps on halving an oversized gap."""
    x = feas.project(np.asarray(start, dtype=float))
    vals = surr.values(x)
    f = float(np.min(vals))
    x_best, f_best = x, f
    f_start = f_best
    # Scale from the largest per-user value, not the current min: at a
    # sum-oriented start the worst user can sit near zero while the
    # achievable min lies orders of magnitude higher, and a gap keyed to
    # the near-zero min would make every step infinitesimal.
    fscale = max(1.0, abs(f_best), float(np.max(np.abs(vals))))
    gap_floor = 1e-8 * fscale
    gap_max = 0.03 * fscale
    gap = gap_max
    if gap_start is not None:
        gap = min(gap, max(float(gap_start), 64.0 * gap_floor))
    window = 15
    best_at_window = f_best
    steps_in_window = 0
    iters = 0
    for iters in range(1, budget + 1):
        active = np.flatnonzero(vals <= f + 1e-9 * max(1.0, abs(f)))
        g = surr.grad_rows(x, active).mean(axis=0)
        gn2 = float(g @ g)
        if gn2 == 0.0:
            break
        target_rise = f_best + gap - f
        move = target_rise / math.sqrt(gn2)
        if move <= 1e-10 * (float(np.linalg.norm(x)) + float(np.max(feas.floor))):
            break
        x = feas.project(x + (target_rise / gn2) * g)
        vals = surr.values(x)
        f = float(np.min(vals))
        if f > f_best:
            f_best, x_best = f, x
        steps_in_window += 1
        if steps_in_window >= window:
            if f_best - best_at_window < 0.25 * gap:
                gap *= 0.5
                if gap < gap_floor:
                    break
            else:
                # A productive window means the target is well inside the
                # achievable range; growing it lets the ladder cross a value
                # scale far below fscale in logarithmically many windows.
                gap = min(2.0 * gap, gap_max)
            best_at_window = f_best
            steps_in_window = 0
    info = {
        "inner_iterations": iters,
        "inner_value": f_best,
        "gain": f_best - f_start,
        "gap_floor": gap_floor,
    }
    return x_best, info


def solve_subproblem(
    surr, feas: FeasibleSet, objective: str, start, budget: int = 10000, gap_start=None
):
    """Maximize the surrogate objective over the feasible set from `start`.

    Returns (alpha, info).  The start point is always a candidate, so the
    result never falls below it in surrogate objective; exceeding the
    iteration budget returns the best feasible iterate with a diagnostic.
    gap_start only affects the 'min' objective (see _polyak_max_min).
    """
    if objective not in ("sum", "min"):
        raise ValueError("objective must be 'sum' or 'min'")
    if isinstance(surr, IiaSurrogate) and feas.direction == "ul":
        # Separable surrogate on a box: exact optima in closed form.  For
        # the min objective the optimal set is wide and the least-power
        # element is the one that keeps the outer iteration improving.
        if objective == "sum":
            x = feas.project(surr.coordinate_argmax(feas.floor, feas.user_caps))
        else:
            x = feas.project(surr.least_power_maxmin(feas.floor, feas.user_caps))
        vals = surr.values(x)
        agg = float(np.sum(vals)) if objective == "sum" else float(np.min(vals))
        info = {"inner_iterations": 1, "inner_value": agg, "exact": True}
    elif objective == "sum":
        x, info = _pga_max_sum(surr, feas, start, budget)
    else:
        x, info = _polyak_max_min(surr, feas, start, budget, gap_start=gap_start)
    info["budget_exhausted"] = info["inner_iterations"] >= budget
    return x, info


# ---------------------------------------------------------------------------
# Outer loop
# ---------------------------------------------------------------------------


@dataclass
class ProblemSpec:
    """One power-control problem: coefficients, rate constants, constraints,
    objective ('sum' or 'min'), and scheme ('iia' or 'icba')."""

    coefs: LinkCoefficients
    params: UrllcParams
    feasible: FeasibleSet
    objective: str = "sum"
    scheme: str = "iia"
    step_tol: float = 1e-5
    max_iters: int = 100
    inner_budget: int = 10000
    alpha_init: np.ndarray | None = None


@dataclass
class SolveReport:
    """Outcome of one power-control solve."""

    scheme: str
    objective: str
    direction: str
    alpha: np.ndarray
    converged: bool
    iterations: int
    objective_trace: list
    per_user_rates: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "scheme": self.scheme,
            "objective": self.objective,
            "direction": self.direction,
            "alpha": [float(v) for v in self.alpha],
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "objective_trace": [float(v) for v in self.objective_trace],
            "per_user_rates": [float(v) for v in self.per_user_rates],
            "diagnostics": self.diagnostics,
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SolveReport":
        p = json.loads(text)
        return cls(
            scheme=p["scheme"],
            objective=p["objective"],
            direction=p["direction"],
            alpha=np.asarray(p["alpha"], dtype=float),
            converged=bool(p["converged"]),
            iterations=int(p["iterations"]),
            objective_trace=list(p["objective_trace"]),
            per_user_rates=np.asarray(p["per_user_rates"], dtype=float),
            diagnostics=dict(p["diagnostics"]),
        )


def _true_objective(alpha, coefs, params, objective):
    rates = urllc_rate(sinr_vector(alpha, coefs), params)
    return float(np.sum(rates)) if objective == "sum" else float(np.min(rates))


def _outer_loop(
    surr_factory,
    true_obj,
    start,
    feas,
    objective,
    step_tol,
    max_iters,
    budget,
    carry_min_gap=False,
):
    alpha_prev = np.asarray(start, dtype=float)
    trace = [true_obj(alpha_prev)]
    converged = False
    iterations = 0
    inner_total = 0
    budget_hits = 0
    gap_start = None
    for k in range(1, max_iters + 1):
        abar = feas.clamp_interior(alpha_prev)
        surr = surr_factory(abar)
        alpha_k, info = solve_subproblem(
            surr, feas, objective, abar, budget, gap_start=gap_start
        )
        inner_total += info["inner_iterations"]
        budget_hits += int(info["budget_exhausted"])
        if carry_min_gap and "gain" in info:
            # Seed the next subproblem's Polyak gap from the gain this one
            # achieved: when the surrogate is stationary between outer
            # iterations (interference frozen at a nearly converged iterate)
            # there is little left to climb, and a matched gap skips the
            # halving ladder.  Surrogates that re-expand around each new
            # iterate reopen gains unpredictably, so they keep the default.
            gap_start = 4.0 * max(info["gain"], 0.0) + 64.0 * info["gap_floor"]
        trace.append(true_obj(alpha_k))
        iterations = k
        num = float(np.sum((alpha_k - alpha_prev) ** 2))
        den = float(np.sum(alpha_k**2))
        alpha_prev = alpha_k
        if den == 0.0:
            if num == 0.0:
                converged = True
                break
        elif num <= step_tol * den:
            converged = True
            break
    diags = {
        "inner_iterations_total": int(inner_total),
        "inner_budget_hits": int(budget_hits),
    }
    return alpha_prev, trace, converged, iterations, diags


def initialize_alpha(
    coefs: LinkCoefficients,
    params: UrllcParams,
    feas: FeasibleSet,
    step_tol: float = 1e-5,
    max_iters: int = 100,
    inner_budget: int = 10000,
):
    """Shared starting point for both schemes: iterate the frozen-interference
    scheme on the Shannon-only sum rate from full transmit power to the same
    step tolerance.  Returns (alpha0, info)."""

    def factory(prev):
        return IiaSurrogate(coefs, params, prev, shannon_only=True)

    def true_obj(alpha):
        from .rate import shannon_rate

        return float(np.sum(shannon_rate(sinr_vector(alpha, coefs), params)))

    alpha0, trace, converged, iterations, diags = _outer_loop(
        factory, true_obj, feas.full_power(), feas, "sum", step_tol, max_iters, inner_budget
    )
    info = {"converged": converged, "iterations": iterations, **diags}
    return alpha0, info


def shannon_maxmin_alpha(
    coefs: LinkCoefficients,
    feas: FeasibleSet,
    rel_tol: float = 1e-6,
    max_bisect: int = 60,
):
    """Classical max-min SINR power control via bisection + LP feasibility.

    For a fixed SINR target t the set {alpha feasible : SINR_u(alpha) >= t
    for all u} is described by linear inequalities, so the largest common
    target is found globally by bisecting t and testing feasibility with a
    linear program that maximizes the smallest absolute margin.  Users with
    zero link gain cannot reach any positive target and are left out of the
    target constraints (the margin objective then drives their power to
    zero).  Returns (alpha, info).
    """
    q = coefs.gain
    cross = coefs.cross
    noise = coefs.noise
    n = coefs.n_users
    live = np.flatnonzero(q > 0)
    if feas.direction == "ul":
        solo = feas.user_caps.astype(float)
        ap_rows = None
        ap_caps = None
    else:
        solo = np.full(n, np.inf)
        for j, idx in enumerate(feas._sets):
            np.minimum.at(solo, idx, feas._caps[j])
        ap_rows = feas._a
        ap_caps = feas._caps
    if live.size == 0:
        return feas.project(np.zeros(n)), {
            "kind": "maxmin-sinr",
            "target_sinr": 0.0,
            "bisections": 0,
        }

    m = live.size
    n_ap = 0 if ap_rows is None else ap_rows.shape[0]
    cost = np.zeros(n + 1)
    cost[n] = -1.0  # maximize the smallest relative margin
    bounds = [(0.0, 1.0)] * n + [(0.0, None)]
    # Variables are alpha/solo in [0, 1] and every SINR row is divided by
    # the user's own-signal scale q*solo: raw link gains and noise powers
    # sit many orders of magnitude below unity and would otherwise fall
    # under the LP solver's absolute feasibility tolerances.
    own = q[live] * solo[live]
    cross_scaled = (cross[live, :] * solo[None, :]) / own[:, None]
    noise_scaled = noise[live] / own

    def try_target(t: float):
        a_ub = np.zeros((m + n_ap, n + 1))
        b_ub = np.zeros(m + n_ap)
        rows = t * cross_scaled
        rows[np.arange(m), live] -= 1.0
        a_ub[:m, :n] = rows
        a_ub[:m, n] = 1.0
        b_ub[:m] = -t * noise_scaled
        if n_ap:
            a_ub[m:, :n] = ap_rows * (solo[None, :] / ap_caps[:, None])
            b_ub[m:] = 1.0
        res = linprog(cost, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
        if res.status != 0 or res.x is None:
            return None
        alpha = np.asarray(res.x[:n], dtype=float) * solo
        # Verify with the exact SINR expression rather than trusting solver
        # status near its tolerance.
        g = alpha * q / (cross @ alpha + noise)
        if float(np.min(g[live])) < t * (1.0 - 1e-3):
            return None
        return alpha

    t_hi = float(np.min(q[live] * solo[live] / noise[live]))
    best = try_target(t_hi)
    if best is not None:
        return feas.project(best), {
            "kind": "maxmin-sinr",
            "target_sinr": t_hi,
            "bisections": 1,
        }
    lo, hi = 0.0, t_hi
    best = np.zeros(n)
    best_t = 0.0
    steps = 1
    for steps in range(2, max_bisect + 1):
        if hi - lo <= rel_tol * hi:
            break
        mid = 0.5 * (lo + hi)
        x = try_target(mid)
        if x is None:
            hi = mid
        else:
            lo = mid
            best = x
            best_t = mid
    return feas.project(best), {
        "kind": "maxmin-sinr",
        "target_sinr": best_t,
        "bisections": steps,
    }


def run_sco(spec: ProblemSpec) -> SolveReport:
    """Run one successive-convex power-control solve end to end."""
    coefs, params, feas = spec.coefs, spec.params, spec.feasible
    if spec.objective not in ("sum", "min"):
        raise ValueError("objective must be 'sum' or 'min'")
    if spec.scheme not in ("iia", "icba"):
        raise ValueError("scheme must be 'iia' or 'icba'")
    if spec.alpha_init is not None:
        alpha0 = np.asarray(spec.alpha_init, dtype=float)
        init_info = {"provided": True}
    else:
        alpha0, init_info = initialize_alpha(
            coefs, params, feas, spec.step_tol, spec.max_iters, spec.inner_budget
        )

    def factory(prev):
        return make_surrogate(spec.scheme, coefs, params, prev)

    def true_obj(alpha):
        return _true_objective(alpha, coefs, params, spec.objective)

    warm_info = None
    if spec.objective == "min":
        # The shared initializer is sum-oriented and can park weak users at
        # near-zero power, where the dispersion penalty's tangent slope
        # diverges and pins them there for every later expansion.  The
        # min-rate loop therefore starts from the classical max-min SINR
        # allocation instead, which lifts every salvageable user to a
        # common healthy operating point before the finite-blocklength
        # phase begins.
        alpha0, warm_info = shannon_maxmin_alpha(coefs, feas)

    alpha, trace, converged, iterations, diags = _outer_loop(
        factory,
        true_obj,
        alpha0,
        feas,
        spec.objective,
        spec.step_tol,
        spec.max_iters,
        spec.inner_budget,
        carry_min_gap=spec.scheme == "iia",
    )

    ascent_viol = 0
    for a, b in zip(trace[:-1], trace[1:]):
        if b < a - 1e-9 * max(1.0, abs(a)):
            ascent_viol += 1

    alpha_final = feas.round_small(alpha)
    rates = urllc_rate(sinr_vector(alpha_final, coefs), params)
    diagnostics = {
        "initialization": init_info,
        "ascent_violations": int(ascent_viol),
        **diags,
    }
    if warm_info is not None:
        diagnostics["warm_phase"] = warm_info
    return SolveReport(
        scheme=spec.scheme,
        objective=spec.objective,
        direction=feas.direction,
        alpha=alpha_final,
        converged=converged,
        iterations=iterations,
        objective_trace=[float(v) for v in trace],
        per_user_rates=np.asarray(rates, dtype=float),
        diagnostics=diagnostics,
    )
