"""Monte-Carlo experiment driver: sweep configuration, scenario pipeline,
percentile post-processing, and deterministic file outputs.

A sweep point is a (network, beamformer, scheme, objective, direction)
tuple.  Every scenario is an independent work item: drop nodes, draw
channels, estimate, beamform, assemble link coefficients, and run the
power-control solve for each sweep tuple.  Records are canonically
ordered by (tuple, scenario, user) so serial and parallel runs write
byte-identical files:

  * results.csv   — one row per (tuple, scenario, user) with the final
                    rate (bits/s, may be negative) and consumed power (W)
  * summary.json  — configuration echo plus per-tuple statistics
  * ecdf_<tuple>.csv — two-column ECDF of reported (clamped) rates
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .beamforming import build_beamformers
from .channel import GuChannelConfig, UavChannelConfig, build_channel_state, dump_channel_matrix
from .estimation import assign_pilots, estimate_channels
from .rate import LinkCoefficients, UrllcParams, link_coefficients, sinr_vector, urllc_rate
from .scenario import AreaConfig, associate, generate_scenario
from .sco import (
    ProblemSpec,
    downlink_feasible_set,
    initialize_alpha,
    run_sco,
    uplink_feasible_set,
)

_NETWORKS = ("cf", "co")
_SCHEMES = ("iia", "icba")
_OBJECTIVES = ("sum", "min")
_DIRECTIONS = ("ul", "dl")
_BEAMFORMERS = ("pzf", "mrt", "mrc", "zf")


@dataclass(frozen=True)
class SweepTuple:
    """One sweep point.  Validation enforces the supported combinations:
    'pzf' runs on the distributed ('cf') network, 'zf' on the colocated
    ('co') one; 'mrt' is transmit-side (downlink), 'mrc' receive-side
    (uplink)."""

    network: str
    beamformer: str
    scheme: str
    objective: str
    direction: str

    def __post_init__(self):
        if self.network not in _NETWORKS:
            raise ValueError(f"unknown network {self.network!r}")
        if self.beamformer not in _BEAMFORMERS:
            raise ValueError(f"unknown beamformer {self.beamformer!r}")
        if self.scheme not in _SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.objective not in _OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.direction not in _DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")
        if self.beamformer == "pzf" and self.network != "cf":
            raise ValueError("'pzf' runs on the 'cf' network only")
        if self.beamformer == "zf" and self.network != "co":
            raise ValueError("'zf' runs on the 'co' network only")
        if self.beamformer == "mrt" and self.direction != "dl":
            raise ValueError("'mrt' is a transmit beamformer; use it with 'dl'")
        if self.beamformer == "mrc" and self.direction != "ul":
            raise ValueError("'mrc' is a receive beamformer; use it with 'ul'")

    @property
    def label(self) -> str:
        return "-".join(
            (self.network, self.beamformer, self.scheme, self.objective, self.direction)
        )

    @classmethod
    def from_label(cls, text: str) -> "SweepTuple":
        parts = text.strip().split("-")
        if len(parts) != 5:
            raise ValueError(
                f"bad sweep label {text!r}: expected "
                "network-beamformer-scheme-objective-direction"
            )
        return cls(*parts)


def default_sweep() -> list:
    """All 32 supported sweep points, sorted by label."""
    out = []
    for network in _NETWORKS:
        for direction in _DIRECTIONS:
            spatial = "pzf" if network == "cf" else "zf"
            match = "mrt" if direction == "dl" else "mrc"
            for beamformer in (spatial, match):
                for scheme in _SCHEMES:
                    for objective in _OBJECTIVES:
                        out.append(
                            SweepTuple(network, beamformer, scheme, objective, direction)
                        )
    return sorted(out, key=lambda t: t.label)


def noise_power_w(psd_dbm_per_hz: float, figure_db: float, bandwidth_hz: float) -> float:
    """Receiver noise power in watts for the given PSD, figure, and bandwidth."""
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth must be positive")
    dbm = psd_dbm_per_hz + figure_db + 10.0 * math.log10(bandwidth_hz)
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass
class RunConfig:
    """Everything one experiment needs; defaults reproduce the reference
    evaluation setup (values in the README's configuration table)."""

    seed: int = 1
    scenarios: int = 1
    workers: int = 1
    sweep: tuple = ()

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
    colocated_bs_count: int = 4
    colocated_antennas_per_bs: int = 200

    freq_ghz: float = 1.9
    gu_shadow_sigma_db: float = 4.0
    gu_shadow_corr_dist_m: float = 9.0
    uav_k_los_db: float = 10.0
    uav_pl_exp_los: float = 2.2
    uav_pl_exp_nlos: float = 3.5
    uav_shadow_sigma_db: float = 4.0
    uav_los_height_m: float = 100.0

    bandwidth_hz: float = 20e6
    block_len: int = 200
    pilot_len: int = 32
    duration_s: float = 5e-5
    error_prob: float = 1e-5

    noise_psd_dbm: float = -174.0
    noise_figure_db: float = 9.0
    ul_power_w: float = 0.1
    dl_ap_power_w: float = 0.2
    dl_bs_power_w: float = 5.0
    pilot_power_w: float = 0.1
    pzf_interferers: int = 5

    step_tol: float = 1e-5
    max_outer_iters: int = 100
    inner_budget: int = 10000
    channel_dump_dir: str = ""

    def __post_init__(self):
        if self.scenarios < 1:
            raise ValueError("scenarios must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        self.sweep = tuple(
            t if isinstance(t, SweepTuple) else SweepTuple.from_label(t)
            for t in self.sweep
        )

    def sweep_tuples(self) -> list:
        return list(self.sweep) if self.sweep else default_sweep()

    def urllc_params(self) -> UrllcParams:
        return UrllcParams(
            bandwidth_hz=self.bandwidth_hz,
            block_len=self.block_len,
            pilot_len=self.pilot_len,
            duration_s=self.duration_s,
            error_prob=self.error_prob,
        )

    def noise_power_w(self) -> float:
        return noise_power_w(self.noise_psd_dbm, self.noise_figure_db, self.bandwidth_hz)

    def gu_channel_config(self) -> GuChannelConfig:
        return GuChannelConfig(
            shadow_sigma_db=self.gu_shadow_sigma_db,
            shadow_corr_dist_m=self.gu_shadow_corr_dist_m,
        )

    def uav_channel_config(self) -> UavChannelConfig:
        return UavChannelConfig(
            k_los_db=self.uav_k_los_db,
            pl_exp_los=self.uav_pl_exp_los,
            pl_exp_nlos=self.uav_pl_exp_nlos,
            shadow_sigma_db=self.uav_shadow_sigma_db,
            los_height_m=self.uav_los_height_m,
        )

    def area(self, network: str) -> AreaConfig:
        common = dict(
            side_m=self.side_m,
            ap_height_m=self.ap_height_m,
            gu_count=self.gu_count,
            gu_height_m=self.gu_height_m,
            uav_count=self.uav_count,
            uav_height_min_m=self.uav_height_min_m,
            uav_height_max_m=self.uav_height_max_m,
        )
        if network == "cf":
            return AreaConfig(
                ap_count=self.ap_count,
                ap_antennas=self.ap_antennas,
                serving_ap_count=self.serving_ap_count,
                network_kind="cellfree",
                **common,
            )
        if network == "co":
            return AreaConfig(
                serving_ap_count=1,
                network_kind="colocated",
                colocated_bs_count=self.colocated_bs_count,
                colocated_antennas_per_bs=self.colocated_antennas_per_bs,
                **common,
            )
        raise ValueError(f"unknown network {network!r}")


# --- flat key-value configuration -----------------------------------------

_KEY_MAP = {
    "area.side_m": ("side_m", float),
    "ap.count": ("ap_count", int),
    "ap.antennas": ("ap_antennas", int),
    "ap.height_m": ("ap_height_m", float),
    "gu.count": ("gu_count", int),
    "gu.height_m": ("gu_height_m", float),
    "gu.shadow_sigma_db": ("gu_shadow_sigma_db", float),
    "gu.shadow_corr_dist_m": ("gu_shadow_corr_dist_m", float),
    "uav.count": ("uav_count", int),
    "uav.height_min_m": ("uav_height_min_m", float),
    "uav.height_max_m": ("uav_height_max_m", float),
    "uav.k_los_db": ("uav_k_los_db", float),
    "uav.pl_exp_los": ("uav_pl_exp_los", float),
    "uav.pl_exp_nlos": ("uav_pl_exp_nlos", float),
    "uav.shadow_sigma_db": ("uav_shadow_sigma_db", float),
    "uav.los_height_m": ("uav_los_height_m", float),
    "assoc.serving_ap_count": ("serving_ap_count", int),
    "co.bs_count": ("colocated_bs_count", int),
    "co.antennas_per_bs": ("colocated_antennas_per_bs", int),
    "channel.freq_ghz": ("freq_ghz", float),
    "urllc.bandwidth_hz": ("bandwidth_hz", float),
    "urllc.tau_c": ("block_len", int),
    "urllc.tau_p": ("pilot_len", int),
    "urllc.T_s": ("duration_s", float),
    "urllc.eps": ("error_prob", float),
    "noise.psd_dbm": ("noise_psd_dbm", float),
    "noise.figure_db": ("noise_figure_db", float),
    "power.ul_w": ("ul_power_w", float),
    "power.dl_ap_w": ("dl_ap_power_w", float),
    "power.dl_bs_w": ("dl_bs_power_w", float),
    "power.pilot_w": ("pilot_power_w", float),
    "pzf.n_interferers": ("pzf_interferers", int),
    "sco.delta": ("step_tol", float),
    "sco.max_iters": ("max_outer_iters", int),
    "sco.inner_budget": ("inner_budget", int),
    "run.scenarios": ("scenarios", int),
    "run.seed": ("seed", int),
    "run.workers": ("workers", int),
    "run.channel_dump_dir": ("channel_dump_dir", str),
}


def config_from_mapping(mapping: dict) -> RunConfig:
    """Build a RunConfig from flat dotted keys (see _KEY_MAP and 'run.sweep')."""
    kwargs = {}
    for key, raw in mapping.items():
        if key == "run.sweep":
            if isinstance(raw, str):
                labels = [p.strip() for p in raw.split(",") if p.strip()]
            else:
                labels = list(raw)
            kwargs["sweep"] = tuple(labels)
            continue
        if key not in _KEY_MAP:
            raise ValueError(f"unknown configuration key {key!r}")
        attr, cast = _KEY_MAP[key]
        kwargs[attr] = cast(raw)
    return RunConfig(**kwargs)


def config_to_mapping(cfg: RunConfig) -> dict:
    """Flat dotted-key view of a RunConfig (inverse of config_from_mapping);
    'run.sweep' echoes the effective sweep labels."""
    out = {}
    for key, (attr, cast) in _KEY_MAP.items():
        value = getattr(cfg, attr)
        out[key] = cast(value)
    out["run.sweep"] = ",".join(t.label for t in cfg.sweep_tuples())
    return out


def parse_config_text(text: str) -> RunConfig:
    """Parse 'key = value' lines; '#' starts a comment; blank lines ignored."""
    mapping = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = body.split("=", 1)
        mapping[key.strip()] = value.strip()
    return config_from_mapping(mapping)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


# --- percentile / ECDF helpers ---------------------------------------------


def ecdf(values):
    """Empirical CDF points: sorted values paired with step heights k/n."""
    vals = np.asarray(list(values), dtype=float)
    if vals.size == 0:
        raise ValueError("ecdf needs at least one value")
    xs = np.sort(vals)
    n = xs.size
    return [(float(x), (i + 1) / n) for i, x in enumerate(xs)]


def likely_rate_95(values) -> float:
    """The rate achieved by 95% of users: 5th percentile by lower
    interpolation, with negative rates clamped to 0 first (reporting
    convention)."""
    vals = np.asarray(list(values), dtype=float)
    if vals.size == 0:
        raise ValueError("likely_rate_95 needs at least one value")
    vals = np.maximum(vals, 0.0)
    vals.sort()
    idx = int(math.floor(0.05 * (vals.size - 1)))
    return float(vals[idx])


# --- scenario pipeline ------------------------------------------------------


def _scenario_seed(run_seed: int, scenario_index: int) -> int:
    """Collision-resistant per-scenario seed, order-independent."""
    ss = np.random.SeedSequence((int(run_seed), int(scenario_index)))
    return int(ss.generate_state(1, np.uint64)[0])


def _prepare_network(cfg: RunConfig, network: str, scen_seed: int, scenario_index: int):
    """Scenario + channels + association + pilots + estimates for one network."""
    area = cfg.area(network)
    scen = generate_scenario(area, scen_seed)
    state = build_channel_state(
        scen, cfg.freq_ghz, cfg.gu_channel_config(), cfg.uav_channel_config(), scen_seed
    )
    serving, served = associate(state.large_scale_db, area.serving_ap_count)
    scen = scen.with_association(serving, served)
    state = replace(state, scenario=scen)
    book = assign_pilots(
        scen.n_users,
        cfg.pilot_len,
        cfg.pilot_power_w,
        seed=np.random.SeedSequence((scen_seed, 6)),
    )
    state = estimate_channels(state, book, cfg.noise_power_w(), scen_seed)
    if cfg.channel_dump_dir:
        os.makedirs(cfg.channel_dump_dir, exist_ok=True)
        path = os.path.join(
            cfg.channel_dump_dir, f"channels_s{scenario_index:04d}_{network}.bin"
        )
        dump_channel_matrix(state.h, path)
    return state


def _feasible_for(cfg: RunConfig, tup: SweepTuple, scenario):
    if tup.direction == "ul":
        caps = np.full(scenario.n_users, cfg.ul_power_w)
        return uplink_feasible_set(caps)
    per_site = cfg.dl_ap_power_w if tup.network == "cf" else cfg.dl_bs_power_w
    ap_caps = np.full(scenario.n_aps, per_site)
    return downlink_feasible_set(scenario.n_users, ap_caps, scenario.served)


def _scenario_results(cfg: RunConfig, scenario_index: int):
    """All records and solve metadata for one scenario (pure function of
    (cfg, scenario_index); safe to run in a worker process)."""
    tuples = cfg.sweep_tuples()
    scen_seed = _scenario_seed(cfg.seed, scenario_index)
    noise = cfg.noise_power_w()
    params = cfg.urllc_params()

    states = {}
    for network in sorted({t.network for t in tuples}):
        states[network] = _prepare_network(cfg, network, scen_seed, scenario_index)

    beams_cache = {}
    coefs_cache = {}
    init_cache = {}
    records = []
    solves = []
    for tup in tuples:
        state = states[tup.network]
        scen = state.scenario
        bkey = (tup.network, tup.beamformer)
        if bkey not in beams_cache:
            n_int = cfg.pzf_interferers if tup.beamformer == "pzf" else 0
            beams_cache[bkey] = build_beamformers(
                tup.beamformer, state, scen, n_interferers=n_int
            )
        ckey = (tup.network, tup.beamformer, tup.direction)
        if ckey not in coefs_cache:
            coefs_cache[ckey] = link_coefficients(
                tup.direction, state, beams_cache[bkey], noise
            )
        coefs = coefs_cache[ckey]
        feas = _feasible_for(cfg, tup, scen)
        if ckey not in init_cache:
            # The starting point depends only on (coefficients, constraints),
            # so the four scheme/objective variants of one link share it.
            init_cache[ckey] = initialize_alpha(
                coefs,
                params,
                _feasible_for(cfg, tup, scen),
                cfg.step_tol,
                cfg.max_outer_iters,
                cfg.inner_budget,
            )[0]
        spec = ProblemSpec(
            coefs=coefs,
            params=params,
            feasible=feas,
            objective=tup.objective,
            scheme=tup.scheme,
            step_tol=cfg.step_tol,
            max_iters=cfg.max_outer_iters,
            inner_budget=cfg.inner_budget,
            alpha_init=init_cache[ckey],
        )
        try:
            report = run_sco(spec)
        except Exception as exc:  # record the failure, keep sweeping
            solves.append(
                {
                    "tuple": tup.label,
                    "scenario": scenario_index,
                    "error": f"{type(exc).__name__}: {exc}",
                }
            )
            continue
        serving_counts = np.array([len(s) for s in scen.serving], dtype=float)
        if tup.direction == "dl":
            consumed = serving_counts * report.alpha
        else:
            consumed = report.alpha.copy()
        kinds = scen.user_kinds
        for u in range(scen.n_users):
            records.append(
                {
                    "tuple": tup.label,
                    "scenario": scenario_index,
                    "user": u,
                    "kind": kinds[u],
                    "rate_bps": float(report.per_user_rates[u]),
                    "power_w": float(consumed[u]),
                }
            )
        solves.append(
            {
                "tuple": tup.label,
                "scenario": scenario_index,
                "converged": bool(report.converged),
                "iterations": int(report.iterations),
                "ascent_violations": int(report.diagnostics["ascent_violations"]),
                "inner_budget_hits": int(report.diagnostics["inner_budget_hits"]),
                "objective_first": float(report.objective_trace[0]),
                "objective_final": float(report.objective_trace[-1]),
                "objective_trace": [float(v) for v in report.objective_trace],
            }
        )
    return records, solves


def solve_one(cfg: RunConfig, tup, scenario_index: int = 0):
    """Run the full pipeline for one sweep tuple on one scenario and return
    the solve report.  Matches what run_experiment computes for the same
    (tuple, scenario) because both derive the scenario seed and the
    initializer the same way."""
    if not isinstance(tup, SweepTuple):
        tup = SweepTuple.from_label(str(tup))
    scen_seed = _scenario_seed(cfg.seed, scenario_index)
    state = _prepare_network(cfg, tup.network, scen_seed, scenario_index)
    scen = state.scenario
    n_int = cfg.pzf_interferers if tup.beamformer == "pzf" else 0
    beams = build_beamformers(tup.beamformer, state, scen, n_interferers=n_int)
    coefs = link_coefficients(tup.direction, state, beams, cfg.noise_power_w())
    params = cfg.urllc_params()
    init = initialize_alpha(
        coefs,
        params,
        _feasible_for(cfg, tup, scen),
        cfg.step_tol,
        cfg.max_outer_iters,
        cfg.inner_budget,
    )[0]
    spec = ProblemSpec(
        coefs=coefs,
        params=params,
        feasible=_feasible_for(cfg, tup, scen),
        objective=tup.objective,
        scheme=tup.scheme,
        step_tol=cfg.step_tol,
        max_iters=cfg.max_outer_iters,
        inner_budget=cfg.inner_budget,
        alpha_init=init,
    )
    return run_sco(spec)


@dataclass
class ResultSet:
    """Everything one experiment produced, in canonical order."""

    config: RunConfig
    records: list = field(default_factory=list)
    solves: list = field(default_factory=list)

    def tuple_labels(self) -> list:
        return [t.label for t in self.config.sweep_tuples()]

    def records_for(self, label: str) -> list:
        return [r for r in self.records if r["tuple"] == label]


def run_experiment(cfg: RunConfig) -> ResultSet:
    """Run the full sweep over cfg.scenarios scenarios.

    Deterministic given cfg: scenario seeds derive from (cfg.seed, index)
    alone, each scenario is evaluated independently (in-process when
    workers == 1, in a process pool otherwise), and the merged records are
    canonically ordered before any output is written.
    """
    indices = list(range(cfg.scenarios))
    if cfg.workers <= 1:
        chunks = [_scenario_results(cfg, s) for s in indices]
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(_scenario_results, [cfg] * len(indices), indices))
    records = [r for recs, _ in chunks for r in recs]
    solves = [s for _, sols in chunks for s in sols]
    records.sort(key=lambda r: (r["tuple"], r["scenario"], r["user"]))
    solves.sort(key=lambda s: (s["tuple"], s["scenario"]))
    return ResultSet(config=cfg, records=records, solves=solves)


# --- summaries and files ----------------------------------------------------


def _group_stats(records) -> dict:
    rates = np.array([r["rate_bps"] for r in records], dtype=float)
    powers = np.array([r["power_w"] for r in records], dtype=float)
    if rates.size == 0:
        return {"likely_rate_95_bps": None, "mean_rate_bps": None, "median_power_w": None}
    reported = np.maximum(rates, 0.0)
    return {
        "likely_rate_95_bps": likely_rate_95(rates),
        "mean_rate_bps": float(np.mean(reported)),
        "median_power_w": float(np.median(powers)),
    }


def build_summary(result: ResultSet) -> dict:
    per_tuple = {}
    for label in result.tuple_labels():
        recs = result.records_for(label)
        sols = [s for s in result.solves if s["tuple"] == label]
        ok = [s for s in sols if "error" not in s]
        entry = {
            "records": len(recs),
            "scenarios": len(sols),
            "solve_errors": len(sols) - len(ok),
            "converged_fraction": (
                float(np.mean([s["converged"] for s in ok])) if ok else None
            ),
            "mean_iterations": (
                float(np.mean([s["iterations"] for s in ok])) if ok else None
            ),
            "ascent_violations": int(sum(s["ascent_violations"] for s in ok)),
            "all": _group_stats(recs),
            "gu": _group_stats([r for r in recs if r["kind"] == "gu"]),
            "uav": _group_stats([r for r in recs if r["kind"] == "uav"]),
        }
        per_tuple[label] = entry
    cfg_map = config_to_mapping(result.config)
    # Worker count is an execution detail that never changes the results,
    # so it stays out of the summary: serial and parallel runs of the same
    # experiment must produce identical files.
    cfg_map.pop("run.workers", None)
    return {
        "config": cfg_map,
        "n_records": len(result.records),
        "per_tuple": per_tuple,
    }


def write_outputs(result: ResultSet, out_dir) -> dict:
    """Write results.csv, summary.json, and one ecdf_<tuple>.csv per sweep
    tuple.  Floats are rendered with repr (shortest round-trip), so a given
    ResultSet always produces identical bytes.  Returns {filename: path}.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = {}

    lines = ["tuple,scenario,user,kind,rate_bps,power_w"]
    for r in result.records:
        lines.append(
            f"{r['tuple']},{r['scenario']},{r['user']},{r['kind']},"
            f"{repr(float(r['rate_bps']))},{repr(float(r['power_w']))}"
        )
    path = os.path.join(out_dir, "results.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    written["results.csv"] = path

    summary = build_summary(result)
    path = os.path.join(out_dir, "summary.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    written["summary.json"] = path

    for label in result.tuple_labels():
        recs = result.records_for(label)
        if not recs:
            continue
        reported = np.maximum([r["rate_bps"] for r in recs], 0.0)
        rows = ["rate_bps,cdf"]
        for value, prob in ecdf(reported):
            rows.append(f"{repr(float(value))},{repr(float(prob))}")
        name = f"ecdf_{label}.csv"
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(rows) + "\n")
        written[name] = path
    return written
