"""The eight primary acceptance criteria, each at its stated tolerance and time limit.

Every test records one ``criterion N: PASS|FAIL`` line, printed in the
terminal summary and on stdout (``pytest -s``).
"""

import math
import random
import time
from fractions import Fraction

import pytest

from conftest import ACCEPTANCE
from helpers import machine_summary, oracle_summary, random_case, run_machine, run_oracle
from mbrsim.harness.config import (
    CALIBRATED_CRITICAL_APKI,
    CALIBRATED_SERVICE_TIME,
    Setup,
    default_config,
)
from mbrsim.harness.experiments import (
    SENSITIVITY_PROFILES,
    BaselineStore,
    baseline_key,
    ensure_baseline,
    measure_overhead,
    profile_sensitivity,
    run_setup,
    sweep_budget,
    sweep_period,
)
from mbrsim.harness.results import trend_ok
from mbrsim.memsys import calibrate
from mbrsim.regulator import VmSpec, assign_budgets


def report(n, ok, elapsed, limit, detail):
    in_time = elapsed < limit
    verdict = "PASS" if ok and in_time else "FAIL"
    line = f"criterion {n}: {verdict} ({elapsed:.2f}s of {limit:g}s) {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line
    assert in_time, line


def test_criterion_1_algorithm1_exact():
    t0 = time.perf_counter()
    bad = []
    for n in range(1, 9):
        vcpus = tuple(range(n))
        for budget in range(1001):
            q = [x for _, x in assign_budgets(VmSpec(0, vcpus, budget))]
            if sum(q) != budget or any(abs(x - Fraction(budget, n)) >= 1 for x in q):
                bad.append((budget, n))
    rng = random.Random(1)
    for _ in range(200):
        n = rng.randint(1, 8)
        w = [rng.randint(0, 1000) for _ in range(n)]
        w[0] += 1
        # six-decimal fractions; the last one absorbs the rounding
        head = [round(x / sum(w), 6) for x in w[:-1]]
        dist = tuple(head) + (round(1 - sum(Fraction(str(f)) for f in head), 6),)
        budget = rng.randint(0, 1000)
        spec = VmSpec(0, tuple(rng.sample(range(16), n)), budget, custom_dist=dist)
        q = dict(assign_budgets(spec))
        real = {v: budget * Fraction(str(f)) for v, f in zip(spec.vcpus, dist)}
        if sum(q.values()) != budget or any(abs(q[v] - real[v]) >= 1 for v in q):
            bad.append((budget, dist))
    report(1, not bad, time.perf_counter() - t0, 1.0,
           f"8008 equal splits + 200 custom distributions, {len(bad)} violations")


def test_criterion_2_budget_ceiling():
    t0 = time.perf_counter()
    worst = 0
    violations = 0
    max_periods = 0
    for seed in range(100):
        rng = random.Random(10_000 + seed)
        case = random_case(rng)
        case["pmu"] = True
        # at most 50 of the shortest regulated period
        shortest = min((vm.period_ticks for vm in case["vms"] if vm.regulated), default=1000)
        case["stop"] = rng.randint(shortest, 50 * shortest)
        m, res = run_machine(case)
        for s in m.regulator.states.values():
            max_periods = max(max_periods, len(s.period_usage))
            for u in s.period_usage:
                worst = max(worst, u - s.budget_quota)
                violations += u > s.budget_quota + 1
    report(2, violations == 0 and max_periods <= 50, time.perf_counter() - t0, 10.0,
           f"100 configs, max excess over quota {worst}, longest run {max_periods} periods")


def test_criterion_3_overhead_law():
    t0 = time.perf_counter()
    periods = [1, 2, 5, 10, 100, 1000]
    t = measure_overhead(default_config(), periods)
    measured = t.select("overhead_ratio", "overhead")
    model = t.select("extra.overhead_model", "overhead")
    tol = t.select("extra.overhead_tolerance", "overhead")
    within = [abs(a - b) <= e for a, b, e in zip(measured, model, tol)]
    at1 = measured[0]
    ok = all(within) and abs(at1 - 0.143) <= 0.005
    report(3, ok, time.perf_counter() - t0, 5.0,
           f"measured {[round(x, 5) for x in measured]} vs model "
           f"{[round(x, 5) for x in model]}; 1 us point {at1:.4%}")


@pytest.fixture(scope="module")
def store():
    s = BaselineStore()
    ensure_baseline(default_config(), s)
    return s


def test_criterion_4_calibration():
    t0 = time.perf_counter()
    model = calibrate(2.3, 3)
    cfg = default_config(service_time=model.service_time, critical_apki=model.critical_apki)
    s = BaselineStore()
    ensure_baseline(cfg, s)
    r = run_setup(cfg.with_setup(Setup.INTERF), s).relative_execution_time
    ok = abs(r - 2.3) <= 0.23
    frozen = (model.service_time, model.critical_apki) == (CALIBRATED_SERVICE_TIME,
                                                           CALIBRATED_CRITICAL_APKI)
    report(4, ok and frozen, time.perf_counter() - t0, 30.0,
           f"service_time={model.service_time} critical_apki={model.critical_apki} "
           f"interf/solo={r:.4f} (target 2.3 +/- 10%), defaults match: {frozen}")


def test_criterion_5_sweep_trends(store):
    t0 = time.perf_counter()
    cfg = default_config()
    tb = sweep_budget(cfg, 10, [50, 100, 1000, 10_000], store)
    tp = sweep_period(cfg, 100, [1, 10, 25, 100, 1000], store)
    (sb,) = tb.sweeps
    (sp,) = tp.sweeps
    bs, ps = sb.series["critical_slowdown"], sp.series["critical_slowdown"]
    nc = dict(zip(sp.xs, sp.series["nc_throughput"]))
    ratio = nc[25] / nc[1]
    checks = {
        "budget trend": trend_ok(bs, "non-decreasing"),
        "b100@10": abs(bs[1] - 1.45) <= 0.15 * 1.45,
        "period trend": trend_ok(ps, "non-increasing"),
        "1us": abs(ps[0] - 1.78) <= 0.15 * 1.78,
        "1000us": ps[-1] <= 1.05,
        "nc 25/1": abs(ratio - 1 / 2.6) <= 0.20 / 2.6,
    }
    failed = [k for k, v in checks.items() if not v]
    report(5, not failed, time.perf_counter() - t0, 120.0,
           f"budget {[round(x, 3) for x in bs]}, period {[round(x, 3) for x in ps]}, "
           f"NC 25us/1us={ratio:.3f} (1/2.6={1 / 2.6:.3f}); failed: {failed or 'none'}")


def test_criterion_6_critical_non_interference(store):
    t0 = time.perf_counter()
    cfg = default_config()
    solo = store.get(baseline_key(cfg)).vcpus[0].execution_time
    ticks = []
    for budget in (0, 25, 100, 1000, 10_000):
        for period in (1, 10, 100):
            m = run_setup(cfg.with_nc(budget, period), store)
            ticks.append(m.vcpus[0].interrupt_ticks)
    for variant in (dict(pmu_enabled=False), dict(d_pmu=0), dict(d_timer=1000)):
        c = default_config(**variant)
        s = BaselineStore()
        ensure_baseline(c, s)
        ticks.append(run_setup(c, s).vcpus[0].interrupt_ticks)
    m0 = run_setup(cfg.with_nc(0, 10), store)
    dev = m0.vcpus[0].execution_time / solo - 1
    ok = all(t == 0 for t in ticks) and 0 <= dev <= 0.002
    report(6, ok, time.perf_counter() - t0, 30.0,
           f"{len(ticks)} settings, critical interrupt ticks max {max(ticks)}; "
           f"budget 0 deviation from solo {dev:.4%}")


def test_criterion_7_profile_ordering():
    t0 = time.perf_counter()
    listed = SENSITIVITY_PROFILES[:5]
    lines = []
    ok = True
    for budget, period in ((1000, 10), (100, 1)):
        t = profile_sensitivity(default_config(), budget, period, profiles=listed)
        (sw,) = t.sweeps
        ys = sw.series["nc_throughput"]
        ok &= all(a >= b for a, b in zip(ys, ys[1:]))
        lines.append(f"{budget}@{period}us " + " >= ".join(
            f"{n.split('_')[0]}:{y:.3f}" for n, y in zip(listed, ys)))
    report(7, ok, time.perf_counter() - t0, 60.0, "; ".join(lines))


def test_criterion_8_determinism_and_oracle():
    t0 = time.perf_counter()
    mismatched = 0
    nondeterministic = 0
    for seed in range(20):
        case = random_case(random.Random(20_000 + seed))
        m1, r1 = run_machine(case, record_log=True)
        m2, r2 = run_machine(case, record_log=True)
        if r1 != r2 or m1.log != m2.log:
            nondeterministic += 1
        t, cores, _ = run_oracle(case)
        if machine_summary(r1) != oracle_summary(t, cores):
            mismatched += 1
    report(8, mismatched == 0 and nondeterministic == 0, time.perf_counter() - t0, 60.0,
           f"20 random configs: {nondeterministic} non-identical reruns, "
           f"{mismatched} oracle mismatches")


def test_overhead_tolerance_is_one_interrupt_per_run():
    t = measure_overhead(default_config(), [1])
    run = t.select("final_time", "overhead")[0]
    assert t.select("extra.overhead_tolerance", "overhead") == [143 / run]
    assert math.isclose(t.select("extra.overhead_model", "overhead")[0], 0.143)
