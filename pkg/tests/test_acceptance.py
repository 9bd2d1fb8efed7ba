"""Acceptance gate: every numbered acceptance check at its stated size and
tolerance.

Each test prints one metric line (visible in the report summary) and fails
hard when its stated limit is not met.  Checks 4 and 5 share one 50-scenario
full-size experiment, which dominates the suite's runtime.
"""

import filecmp
import math
import time

import numpy as np
import pytest

from cfurllc.beamforming import (
    build_beamformers,
    mrt_vector,
    pzf_vector,
    rank_interferers,
)
from cfurllc.harness import (
    RunConfig,
    _prepare_network,
    _scenario_seed,
    default_sweep,
    likely_rate_95,
    run_experiment,
    solve_one,
    write_outputs,
)
from cfurllc.rate import (
    LinkCoefficients,
    link_coefficients,
    shannon_rate,
    sinr_vector,
    urllc_rate,
)
from cfurllc.sco import IcbaSurrogate, make_surrogate

PARAMS = RunConfig().urllc_params()


def _rand_coefs(rng, n, direction="ul"):
    """Random production-scale SINR coefficients (independent of the solver
    test helpers so this gate stands on its own)."""
    gain = 10.0 ** rng.uniform(-9, -5, n)
    cross = 10.0 ** rng.uniform(-12, -7, (n, n))
    np.fill_diagonal(cross, 0.0)
    noise = 10.0 ** rng.uniform(-13, -12, n)
    return LinkCoefficients(direction, gain, cross, noise)


@pytest.fixture(scope="session")
def full_result():
    """One 50-scenario experiment at reference size over the full 32-tuple
    sweep; shared by the convergence and deployment-trend checks."""
    cfg = RunConfig(scenarios=50, seed=1)
    t0 = time.monotonic()
    result = run_experiment(cfg)
    return result, time.monotonic() - t0


def test_criterion_1_surrogate_tightness_at_expansion():
    rng = np.random.default_rng(101)
    t0 = time.monotonic()
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(4, 61))
        direction = "ul" if rng.random() < 0.5 else "dl"
        coefs = _rand_coefs(rng, n, direction)
        prev = rng.uniform(0.01, 1.0, n) * 0.1
        true = urllc_rate(sinr_vector(prev, coefs), PARAMS)
        for scheme in ("iia", "icba"):
            surr = make_surrogate(scheme, coefs, PARAMS, prev)
            rel = np.abs(surr.values(prev) - true) / np.maximum(np.abs(true), 1.0)
            worst = max(worst, float(np.max(rel)))
    dt = time.monotonic() - t0
    print(
        f"criterion 1: max relative surrogate-vs-true gap at expansion "
        f"{worst:.3e} (limit 1e-9) over 100 instances of 4-60 users "
        f"in {dt:.1f}s (limit 60s)"
    )
    assert worst <= 1e-9
    assert dt < 60.0


def test_criterion_2_bound_properties():
    rng = np.random.default_rng(202)
    t0 = time.monotonic()
    violations = 0
    worst = -np.inf
    for _ in range(20):
        n = int(rng.integers(2, 17))
        coefs = _rand_coefs(rng, n)
        prev = rng.uniform(0.01, 1.0, n) * 0.1
        surr = IcbaSurrogate(coefs, PARAMS, prev)
        for _ in range(1000):
            a = rng.uniform(0.0, 1.0, n) * 0.1
            g = sinr_vector(a, coefs)
            over = (g - surr.sinr_upper(a)) / np.maximum(np.abs(g), 1.0)
            sh = shannon_rate(g, PARAMS)
            under = (surr.shannon_lower(a) - sh) / np.maximum(np.abs(sh), 1.0)
            violations += int(np.sum(over > 1e-12) + np.sum(under > 1e-12))
            worst = max(worst, float(np.max(over)), float(np.max(under)))
    dt = time.monotonic() - t0
    print(
        f"criterion 2: {violations} bound violations beyond 1e-12 relative "
        f"(worst signed gap {worst:.3e}) over 20 instances x 1000 points "
        f"in {dt:.1f}s (limit 60s)"
    )
    assert violations == 0
    assert dt < 60.0


def _pair_sinr(a0, a1, coefs):
    """Two-user SINRs on broadcast grids of the two transmit powers."""
    s0 = a0 * coefs.gain[0] / (coefs.cross[0, 1] * a1 + coefs.noise[0])
    s1 = a1 * coefs.gain[1] / (coefs.cross[1, 0] * a0 + coefs.noise[1])
    return s0, s1


def _grid_max_sum(coefs, cap, params, n_grid=2000, chunk=200):
    axis = np.linspace(0.0, cap, n_grid)
    best = -np.inf
    for i in range(0, n_grid, chunk):
        a0 = axis[i : i + chunk][:, None]
        a1 = axis[None, :]
        s0, s1 = _pair_sinr(a0, a1, coefs)
        total = urllc_rate(s0, params) + urllc_rate(s1, params)
        best = max(best, float(total.max()))
    return best


def test_criterion_3_solvers_match_exhaustive_grid():
    rng = np.random.default_rng(303)
    t0 = time.monotonic()
    hits = {"iia": 0, "icba": 0}
    worst_ratio = {"iia": np.inf, "icba": np.inf}
    n_instances = 20
    for k in range(n_instances):
        # The flagship uplink configuration at desk scale: the partial
        # zero-forcing receiver nulls the one other user, which is how the
        # simulator is actually run.  A matched-filter receiver at two
        # antennas maximizes cross-coupling instead, and on that family the
        # frozen-interference scheme structurally cannot mute a user from a
        # full-power start (own rate rises with own power once interference
        # is frozen), so no start-agnostic local method meets this bar there.
        cfg = RunConfig(
            ap_count=2,
            ap_antennas=2,
            gu_count=2,
            uav_count=0,
            serving_ap_count=2,
            pzf_interferers=1,
            seed=300 + k,
        )
        state = _prepare_network(cfg, "cf", _scenario_seed(cfg.seed, 0), 0)
        beams = build_beamformers("pzf", state, state.scenario, n_interferers=1)
        coefs = link_coefficients("ul", state, beams, cfg.noise_power_w())
        # The vectorized grid must agree with the scalar SINR contract.
        for _ in range(5):
            a = rng.uniform(0.0, cfg.ul_power_w, 2)
            s0, s1 = _pair_sinr(a[0], a[1], coefs)
            np.testing.assert_allclose([s0, s1], sinr_vector(a, coefs), rtol=1e-12)
        grid_best = _grid_max_sum(coefs, cfg.ul_power_w, PARAMS)
        assert grid_best > 0.0
        for scheme in ("iia", "icba"):
            report = solve_one(cfg, f"cf-pzf-{scheme}-sum-ul", 0)
            achieved = report.objective_trace[-1]
            if achieved >= grid_best - 0.05 * abs(grid_best):
                hits[scheme] += 1
            worst_ratio[scheme] = min(worst_ratio[scheme], achieved / grid_best)
    dt = time.monotonic() - t0
    print(
        f"criterion 3: >=95%-of-grid-optimum hits iia {hits['iia']}/{n_instances}, "
        f"icba {hits['icba']}/{n_instances} (limit >=18 each; worst ratios "
        f"iia {worst_ratio['iia']:.4f}, icba {worst_ratio['icba']:.4f}) "
        f"in {dt:.1f}s (limit 300s)"
    )
    assert hits["iia"] >= 18
    assert hits["icba"] >= 18
    assert dt < 300.0


def test_criterion_4_convergence_within_budget(full_result):
    result, runtime_s = full_result
    total = len(result.solves)
    fractions = {}
    for scheme in ("icba", "iia"):
        sols = [s for s in result.solves if f"-{scheme}-" in s["tuple"]]
        converged = [
            s
            for s in sols
            if "error" not in s and s["converged"] and s["iterations"] <= 100
        ]
        fractions[scheme] = len(converged) / len(sols)

    def nondecreasing(trace):
        t = np.asarray(trace, dtype=float)
        scale = max(1.0, float(np.max(np.abs(t))))
        return bool(np.all(np.diff(t) >= -1e-9 * scale))

    icba = [
        s for s in result.solves if "-icba-" in s["tuple"] and "error" not in s
    ]
    monotone_fraction = float(np.mean([nondecreasing(s["objective_trace"]) for s in icba]))

    smoke_cfg = RunConfig(
        scenarios=1, seed=4, sweep=tuple(t.label for t in default_sweep()[:25])
    )
    t0 = time.monotonic()
    smoke = run_experiment(smoke_cfg)
    smoke_dt = time.monotonic() - t0
    assert len(smoke.solves) == 25

    print(
        f"criterion 4: converged within 100 iterations at step tolerance 1e-5 "
        f"on icba {fractions['icba']:.3f}, iia {fractions['iia']:.3f} of "
        f"{total} full-size scenario-tuples (limit >=0.95 each); icba "
        f"true-objective trace nondecreasing within 1e-9 on "
        f"{monotone_fraction:.3f} (limit >=0.95); 25-scenario-tuple smoke "
        f"{smoke_dt:.0f}s (limit 900s); main experiment {runtime_s:.0f}s"
    )
    assert total >= 250
    assert fractions["icba"] >= 0.95
    assert fractions["iia"] >= 0.95
    assert monotone_fraction >= 0.95
    assert smoke_dt < 900.0


def test_criterion_5_deployment_trends(full_result):
    result, runtime_s = full_result
    assert result.config.scenarios >= 50

    per = {}
    for label in result.tuple_labels():
        recs = result.records_for(label)
        per[label] = {
            kind: likely_rate_95(
                [r["rate_bps"] for r in recs if r["kind"] == kind]
            )
            for kind in ("gu", "uav")
        }

    # (a) distributed GU 95%-likely rate beats colocated in every matched
    # (beamformer family, scheme, objective, direction) comparison.
    fails_a = []
    pairs = 0
    for label in per:
        if not label.startswith("co-"):
            continue
        cf_label = label.replace("co-", "cf-", 1).replace("-zf-", "-pzf-")
        pairs += 1
        if not per[cf_label]["gu"] > per[label]["gu"]:
            fails_a.append((cf_label, per[cf_label]["gu"], label, per[label]["gu"]))
    assert pairs == 16

    # (b) colocated ZF carries aerial users past distributed PZF when the
    # downlink maximizes the sum rate.
    fails_b = []
    for scheme in ("icba", "iia"):
        co = per[f"co-zf-{scheme}-sum-dl"]["uav"]
        cf = per[f"cf-pzf-{scheme}-sum-dl"]["uav"]
        if not co > cf:
            fails_b.append((scheme, co, cf))

    # (c) the max-min objective narrows the ground-vs-aerial downlink
    # median-power gap relative to sum-rate on the distributed network.
    def dl_power_gap(objective):
        recs = [
            r
            for r in result.records
            if r["tuple"].startswith("cf-")
            and r["tuple"].endswith("-dl")
            and f"-{objective}-" in r["tuple"]
        ]
        med = {
            kind: float(np.median([r["power_w"] for r in recs if r["kind"] == kind]))
            for kind in ("gu", "uav")
        }
        return abs(med["gu"] - med["uav"])

    gap_sum = dl_power_gap("sum")
    gap_min = dl_power_gap("min")

    failed_pairs = "; ".join(
        f"{cf}={v_cf / 1e6:.4g}Mbps vs {co}={v_co / 1e6:.4g}Mbps"
        for cf, v_cf, co, v_co in fails_a
    )
    print(
        f"criterion 5: over {result.config.scenarios} scenarios "
        f"(experiment {runtime_s:.0f}s) — (a) GU 95%-likely distributed>colocated "
        f"in {pairs - len(fails_a)}/{pairs} matched tuples (need 16/16"
        f"{'; failing: ' + failed_pairs if fails_a else ''}); "
        f"(b) aerial 95%-likely colocated-ZF>distributed-PZF sum-DL in "
        f"{2 - len(fails_b)}/2 schemes (need 2/2); (c) GU-UAV DL median-power "
        f"gap sum {gap_sum:.4f} W vs min {gap_min:.4f} W (need min < sum)"
    )
    assert not fails_b, fails_b
    assert gap_min < gap_sum
    # Both deployments drive their weakest ground users to zero rate under
    # sum-rate objectives (the 5th percentile ties at 0 vs 0), so the strict
    # per-pair comparison below is expected to fail there; it is asserted
    # as stated rather than weakened.
    assert not fails_a, fails_a


def test_criterion_6_pzf_nulling_and_mrt_limit():
    t0 = time.monotonic()
    rng = np.random.default_rng(606)
    worst = 0.0
    checked = 0
    for k in range(7):
        cfg = RunConfig(
            ap_count=25, gu_count=24, uav_count=6, seed=600 + k
        )  # 30 users on 32 orthogonal pilots: the pure projection property
        state = _prepare_network(cfg, "cf", _scenario_seed(cfg.seed, 0), 0)
        scen = state.scenario
        beams = build_beamformers(
            "pzf", state, scen, n_interferers=cfg.pzf_interferers
        )
        for u in range(scen.n_users):
            for a in scen.serving[u]:
                stack = rank_interferers(
                    u, a, state.large_scale_db, state.h_hat, cfg.pzf_interferers
                )
                residual = np.abs(stack.conj().T @ beams.vectors[u, a])
                norms = np.linalg.norm(stack, axis=0)
                worst = max(worst, float(np.max(residual / norms)))
                checked += 1

    mismatches = 0
    for _ in range(1000):
        h = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        empty = np.zeros((8, 0), dtype=complex)
        w, fell_back = pzf_vector(h, empty)
        if fell_back or not np.array_equal(w, mrt_vector(h)):
            mismatches += 1
    dt = time.monotonic() - t0
    print(
        f"criterion 6: worst relative residual toward nulled estimates "
        f"{worst:.3e} (limit 1e-9) over {checked} serving pairs; "
        f"zero-interferer vs matched beamformer mismatches {mismatches}/1000 "
        f"(need 0) in {dt:.1f}s"
    )
    assert checked >= 1000
    assert worst <= 1e-9
    assert mismatches == 0


def _gaussian_tail_inverse_bisect(prob: float) -> float:
    """Independent oracle: invert Q(x) = erfc(x / sqrt(2)) / 2 by bisection."""
    lo, hi = 0.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * math.erfc(mid / math.sqrt(2.0)) > prob:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_criterion_7_rate_constants():
    prelog = PARAMS.prelog
    ratio = PARAMS.dispersion_coeff / PARAMS.prelog
    expected_ratio = (
        _gaussian_tail_inverse_bisect(1e-5)
        * math.log2(math.e)
        / math.sqrt(PARAMS.duration_s * PARAMS.bandwidth_hz)
    )
    rel_prelog = abs(prelog - 8.4e6) / 8.4e6
    rel_ratio = abs(ratio - expected_ratio) / expected_ratio
    r0 = urllc_rate(0.0, PARAMS)
    penalty = shannon_rate(1e9, PARAMS) - urllc_rate(1e9, PARAMS)
    rel_penalty = abs(penalty - PARAMS.dispersion_coeff) / PARAMS.dispersion_coeff
    print(
        f"criterion 7: prelog rel err {rel_prelog:.3e} (limit 1e-9); "
        f"dispersion/prelog rel err vs bisection oracle {rel_ratio:.3e} "
        f"(limit 1e-9); rate at zero {r0!r} (need exactly 0.0); "
        f"penalty asymptote rel err {rel_penalty:.3e} at SINR 1e9 (limit 1e-6)"
    )
    assert rel_prelog <= 1e-9
    assert rel_ratio <= 1e-9
    assert r0 == 0.0
    assert rel_penalty <= 1e-6


def test_criterion_8_deterministic_outputs(tmp_path):
    t0 = time.monotonic()
    kwargs = dict(
        scenarios=2, seed=8, sweep=("cf-pzf-iia-sum-dl", "co-zf-icba-min-ul")
    )
    runs = {
        "a": run_experiment(RunConfig(**kwargs)),
        "b": run_experiment(RunConfig(**kwargs)),
        "c": run_experiment(RunConfig(workers=2, **kwargs)),
    }
    for name, result in runs.items():
        write_outputs(result, tmp_path / name)
    identical = True
    for name in ("results.csv", "summary.json"):
        for other in ("b", "c"):
            identical &= filecmp.cmp(
                tmp_path / "a" / name, tmp_path / other / name, shallow=False
            )
    dt = time.monotonic() - t0
    print(
        f"criterion 8: results.csv/summary.json byte-identical across a rerun "
        f"and across 1-vs-2 workers at full scenario size: {identical} "
        f"(need True) in {dt:.1f}s"
    )
    assert identical
