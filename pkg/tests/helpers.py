"""Random small machines and their translation into oracle cores."""

import random

from mbrsim.machine import Machine
from mbrsim.regulator import InterruptCosts, VmSpec
from mbrsim.workload import WorkloadKind, WorkloadProfile, intensity_profile, saturating_writer

import oracle

PERIODS_US = (0.2, 0.333, 0.5, 1, 2)


def random_case(rng: random.Random, max_cores=4, max_stop=6000, writers=True):
    n = rng.randint(1, max_cores)
    service = rng.randint(1, 30)
    d_timer = rng.choice([0, 1, 5, 17, 143])
    d_pmu = rng.choice([0, 1, 7, 30, 143])
    pmu = rng.random() < 0.85
    cores = list(range(n))
    rng.shuffle(cores)
    vms = []
    i = 0
    while i < n:
        k = rng.randint(1, n - i)
        vcpus = tuple(sorted(cores[i:i + k]))
        i += k
        vms.append(VmSpec(len(vms), vcpus, rng.randint(0, 12), rng.choice(PERIODS_US),
                          regulated=rng.random() < 0.7))
    wl = {}
    for c in range(n):
        r = rng.random()
        if r < 0.3 and writers:
            wl[c] = saturating_writer()
        elif r < 0.8:
            wl[c] = intensity_profile(f"i{c}", rng.randint(0, 1000), rng.randint(1, 800),
                                      base_cpi=rng.randint(1, 3))
        else:
            tr = tuple((rng.randint(0, 20), rng.randint(0, 4)) for _ in range(rng.randint(1, 30)))
            wl[c] = WorkloadProfile(f"t{c}", WorkloadKind.TRACE,
                                    total_instructions=sum(a + b for a, b in tr), trace=tr)
    # a finite core starved by a zero quota never finishes: bound the run
    stop = rng.choice([None, rng.randint(1, max_stop)])
    starved = any(vm.regulated and vm.budget_vm < len(vm.vcpus) for vm in vms)
    if stop is None and (starved or not any(w.finite for w in wl.values())):
        stop = rng.randint(1, max_stop)
    return dict(n=n, service=service, d_timer=d_timer, d_pmu=d_pmu, pmu=pmu, vms=vms, wl=wl,
                stop=stop)


def run_machine(case, **kw):
    m = Machine(case["vms"], case["wl"], num_cores=case["n"], service_time=case["service"],
                costs=InterruptCosts(case["d_timer"], case["d_pmu"]), pmu_enabled=case["pmu"],
                **kw)
    return m, m.run(case["stop"])


def oracle_cores(case):
    cores = [None] * case["n"]
    for c, w in case["wl"].items():
        if w.kind is WorkloadKind.SATURATING_WRITER:
            o = oracle.OCore("writer")
        elif w.kind is WorkloadKind.INTENSITY:
            o = oracle.OCore("intensity", apki=w.accesses_per_kilo_instructions,
                             total=w.total_instructions, cpi=w.base_cpi)
        else:
            o = oracle.OCore("trace", ops=oracle.expand_trace(w.trace))
        cores[c] = o
    for vm in case["vms"]:
        if not vm.regulated:
            continue
        order = sorted(range(len(vm.vcpus)), key=lambda i: vm.vcpus[i])
        dist = None if vm.custom_dist is None else [vm.custom_dist[i] for i in order]
        quotas = oracle.split_budget(vm.budget_vm, len(vm.vcpus), dist)
        for i, q in zip(order, quotas):
            cores[vm.vcpus[i]].quota = q
            cores[vm.vcpus[i]].period = round(vm.period_vm * 1000)
    return cores


def run_oracle(case):
    cores = oracle_cores(case)
    t, grants = oracle.simulate(cores, case["service"], case["d_timer"], case["d_pmu"],
                                case["pmu"], case["stop"])
    return t, cores, grants


def machine_summary(metrics):
    return (metrics.final_time, [
        (v.execution_time, v.bus_accesses, v.compute_ticks, v.stall_ticks, v.interrupt_ticks,
         v.idle_ticks, v.timer_interrupts, v.pmu_interrupts)
        for _, v in sorted(metrics.vcpus.items())
    ])


def oracle_summary(t, cores):
    return (t, [
        (o.finish_time, o.accesses, o.ticks["compute"], o.ticks["stall"], o.ticks["interrupt"],
         o.ticks["idle"], o.timers, o.pmus)
        for o in cores
    ])
