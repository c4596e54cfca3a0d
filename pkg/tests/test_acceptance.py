"""End-to-end acceptance checks, one test class per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary prints
one PASS/FAIL line per criterion. Criteria 4 and 5 share one desk-scale
pipeline run, which dominates the runtime.
"""
import math
import os
import time
from dataclasses import replace

import numpy as np
import pytest

from spikebalance.cli import main
from spikebalance.config import desk_preset
from spikebalance.environment import (
    DEG, CartPoleState, PhysicsParams, TrialConfig, mechanical_energy, physics_step, run_scripted,
)
from spikebalance.experiment import discover_traces, read_table
from spikebalance.infotheory import entropy, mutual_information
from spikebalance.neuron import IzhikevichParams, NeuronState, neuron_step
from spikebalance.trace import Trace

from oracles import brute_mi, izhikevich_spike_count, table_to_series, tables, textbook_t

PP = PhysicsParams()
WORKERS = os.cpu_count() or 1


# --------------------------------------------------------------------------
# 1. MI estimator
# --------------------------------------------------------------------------

@pytest.mark.criterion(1)
class TestMIEstimator:
    def test_exhaustive_and_sweep_within_a_minute(self, note):
        start = time.perf_counter()
        worst, n = 0.0, 0
        # every table with at most six cells, counts 0..6
        for r in range(1, 6):
            for c in range(1, 6):
                if r * c > 6:
                    continue
                for tab in tables(r, c):
                    a, b = table_to_series(tab)
                    worst = max(worst, abs(mutual_information(a, b) - brute_mi(tab.tolist())))
                    n += 1
        # seeded sweep of every shape up to 5x5, sparse tables included
        for r in range(1, 6):
            for c in range(1, 6):
                rng = np.random.default_rng(7919 * r + c)
                for _ in range(200):
                    tab = rng.integers(0, 7, (r, c))
                    tab[rng.random((r, c)) < rng.random()] = 0
                    if not tab.any():
                        continue
                    a, b = table_to_series(tab)
                    worst = max(worst, abs(mutual_information(a, b) - brute_mi(tab.tolist())))
                    n += 1
        elapsed = time.perf_counter() - start
        note(f"{n} tables, worst |error| {worst:.2e} bits, {elapsed:.1f} s")
        assert worst <= 1e-12
        assert elapsed < 60.0

    @pytest.mark.parametrize("x", [[0, 1, 2, 3] * 4, [5, 5, 5, 1], [0.013, 0.5, 0.5, 0.91, 0.2]])
    def test_self_information_is_entropy(self, x):
        assert mutual_information(x, x) == entropy(x)

    def test_constructed_independence_is_zero(self):
        a, b = table_to_series([[3, 6], [1, 2], [4, 8]])
        assert mutual_information(a, b) == 0.0
        a, b = table_to_series([[2, 2, 2], [2, 2, 2]])
        assert mutual_information(a, b) == 0.0


# --------------------------------------------------------------------------
# 2. Physics
# --------------------------------------------------------------------------

def _energy_drift(dt, steps):
    pp = replace(PP.frictionless(), dt=dt)
    s = CartPoleState(theta=0.1)
    e0 = mechanical_energy(s, pp)
    worst = 0.0
    for _ in range(steps):
        s = physics_step(s, 0.0, pp)
        worst = max(worst, abs(mechanical_energy(s, pp) - e0))
    return worst


@pytest.mark.criterion(2)
class TestPhysicsFidelity:
    def test_equilibrium_invariant(self):
        s = CartPoleState()
        for _ in range(10_000):
            nxt = physics_step(s, 0.0, PP)
            assert max(abs(nxt.x - s.x), abs(nxt.v - s.v), abs(nxt.theta - s.theta),
                       abs(nxt.omega - s.omega)) < 1e-12
            s = nxt

    def test_energy_drift_halves_with_dt(self, note):
        ratio = _energy_drift(0.01, 10_000) / _energy_drift(0.005, 20_000)
        note(f"drift ratio dt/(dt/2) = {ratio:.3f}")
        assert 1.8 < ratio < 2.2

    def test_track_limit_terminates(self):
        def glide(s, force, pp):
            return CartPoleState(x=s.x + 0.0625, v=6.25)
        r = run_scripted(lambda k, s, sen: 0.0, TrialConfig(0.0, 0.0, 100.0), PP, physics=glide)
        assert r.outcome == "track_limit" and r.steps == 361


# --------------------------------------------------------------------------
# 3. Neuron
# --------------------------------------------------------------------------

RS = IzhikevichParams(a=0.02, b=0.2, c=-65.0, d=8.0)


@pytest.mark.criterion(3)
class TestNeuronModel:
    def test_resting_state_is_fixed_point(self):
        s = RS.resting_state()
        assert (s.v, s.u) == pytest.approx((-70.0, -14.0), abs=1e-12)
        out = neuron_step(NeuronState(-70.0, -14.0), RS, 0.0, 0.01)
        assert (out.v, out.u, out.fired) == (-70.0, -14.0, False)

    def test_tonic_spiking_matches_oracle(self, note):
        s, n = RS.resting_state(), 0
        for _ in range(100_000):
            s = neuron_step(s, RS, 10.0, 0.01)
            n += s.fired
        expect = izhikevich_spike_count(0.02, 0.2, -65.0, 8.0, 10.0, 0.01, 100_000)
        note(f"{n} spikes in 1000 time units, oracle {expect}")
        assert abs(n - expect) <= 1


# --------------------------------------------------------------------------
# 4 and 5. Desk-scale evolution and bottleneck analysis
# --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    t0 = time.perf_counter()
    assert main(["evolve", "--preset", "desk", "--workers", str(WORKERS), "--out", str(out)]) == 0
    evolve_s = time.perf_counter() - t0
    assert main(["pipeline", "--preset", "desk", "--workers", str(WORKERS),
                 "--out", str(out)]) == 0
    return out, evolve_s


@pytest.mark.criterion(4)
class TestDeskEvolvability:
    def test_batch_reaches_targets(self, desk_run, note):
        out, evolve_s = desk_run
        cfg = desk_preset()
        fits = [float(r["fitness"]) for r in read_table(out / "top_agents.csv")]
        assert len(fits) == cfg.runs == 10
        n90 = sum(f >= 0.90 for f in fits)
        n95 = sum(f >= 0.95 for f in fits)
        note(f"best fitness per run (sorted): {', '.join(f'{f:.4f}' for f in fits)}")
        note(f"{n90}/10 >= 0.90, {n95}/10 >= 0.95, evolve {evolve_s:.0f} s on {WORKERS} workers")
        assert n90 >= 7
        assert n95 >= 1

    def test_budget(self, desk_run):
        cfg = desk_preset()
        assert cfg.ea.pop_size == 100 and cfg.ea.generations <= 150
        assert cfg.task.duration == 20.0
        for r in range(cfg.runs):
            hist = read_table(desk_run[0] / "runs" / f"run_{r:02d}" / "history.csv")
            assert len(hist) <= 151
        assert desk_run[1] <= 1800.0


def _mi_lookup(out):
    vals = {}
    for r in read_table(out / "analysis" / "mi_long.csv"):
        vals[(r["agent"], r["element"], r["variable"], r["trial"])] = float(r["mi_bits"])
    return vals


def _per_trial(vals, agent, element, var):
    keys = sorted((k for k in vals if k[:3] == (agent, element, var) and k[3] != "pooled"),
                  key=lambda k: int(k[3]))
    return [vals[k] for k in keys]


def _floor_bins(x, width=0.01):
    return np.floor(np.asarray(x) / width).astype(np.int64)


def _table_of(a, b):
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    tab = np.zeros((ia.max() + 1, ib.max() + 1), dtype=int)
    np.add.at(tab, (ia, ib), 1)
    return tab.tolist()


@pytest.mark.criterion(5)
class TestBottleneckPipeline:
    TABLES = ("mi_long.csv", "mi_theta_by_element.csv", "mi_trial_vs_pooled.csv",
              "mi_classes.csv", "stats.csv", "observations.csv")

    def test_tables_emitted(self, desk_run):
        for name in self.TABLES:
            assert read_table(desk_run[0] / "analysis" / name)

    def test_best_agent_mi_matches_brute_force(self, desk_run):
        out = desk_run[0]
        vals = _mi_lookup(out)
        traces = [Trace.from_csv(p) for p in discover_traces(out / "eval")["agent_00"]]
        for t, tr in enumerate(traces):
            th = _floor_bins(tr["theta"])
            for el in ("V1", "V2", "R1", "R2", "M1", "M2"):
                expect = brute_mi(_table_of(_floor_bins(tr[el]), th))
                assert abs(vals[("agent_00", el, "theta", str(t))] - expect) <= 1e-12
        pooled_th = _floor_bins(np.concatenate([tr["theta"] for tr in traces]))
        pooled_v1 = _floor_bins(np.concatenate([tr["V1"] for tr in traces]))
        assert abs(vals[("agent_00", "V1", "theta", "pooled")]
                   - brute_mi(_table_of(pooled_v1, pooled_th))) <= 1e-12

    def test_statistics_match_textbook_oracle(self, desk_run, note):
        out = desk_run[0]
        vals = _mi_lookup(out)
        agents = sorted({k[0] for k in vals})
        checked = 0
        for row in read_table(out / "analysis" / "stats.csv"):
            if row["note"] or row["degenerate"] == "1":
                continue
            comp, level, agent, var = row["comparison"], row["level"], row["agent"], row["variable"]
            if comp.startswith("pooled_vs_trial_"):
                el = comp.rsplit("_", 1)[1]
                x = _per_trial(vals, agent, el, var)
                t, p = textbook_t(x, vals[(agent, el, var, "pooled")])
            else:
                a_cls, b_cls = comp.split("_vs_")
                if level == "trials":
                    xs = _per_trial(vals, agent, a_cls, var)
                    ys = _per_trial(vals, agent, b_cls, var)
                else:
                    xs = [np.mean(_per_trial(vals, g, a_cls, var)) for g in agents]
                    ys = [np.mean(_per_trial(vals, g, b_cls, var)) for g in agents]
                t, p = textbook_t([a - b for a, b in zip(xs, ys)])
            assert abs(float(row["t"]) - t) <= 1e-9 * max(1.0, abs(t))
            assert abs(float(row["p"]) - p) <= 1e-9
            checked += 1
        note(f"{checked} t-test rows match the textbook oracle")
        assert checked > 0

    def test_directional_findings(self, desk_run, note):
        obs = read_table(desk_run[0] / "analysis" / "observations.csv")
        holds = {}
        for r in obs:
            holds.setdefault(r["agent"], {})[r["finding"]] = r["holds"] == "1"
            note(f"{r['agent']}: {r['finding']}: {'yes' if r['holds'] == '1' else 'no'} "
                 f"(diff {float(r['value']):+.4f}, p={float(r['p']):.3g})")
        both = [a for a, f in holds.items()
                if f["MI(V;theta) > MI(R;theta)"]
                and f["pooled MI(V;theta) < trial-wise MI(V;theta)"]]
        note(f"agents with V > R and pooled below trial-wise: {both or 'none'}")
        assert both


# --------------------------------------------------------------------------
# 6. Fitness exactness
# --------------------------------------------------------------------------

def frozen(s, force, pp):
    return s


@pytest.mark.criterion(6)
class TestFitnessExactness:
    def test_perfect_balancer_scores_one(self):
        r = run_scripted(lambda k, s, sen: 0.0, TrialConfig(0.0, 0.0, 500.0), PP)
        assert r.fitness == 1.0

    def test_frozen_twelve_degrees(self):
        r = run_scripted(lambda k, s, sen: 0.0, TrialConfig.from_degrees(12.0, 0.0, 500.0), PP,
                         physics=frozen)
        assert abs(r.fitness - math.cos(12 * DEG)) < 1e-12


# --------------------------------------------------------------------------
# 7. Reproducibility
# --------------------------------------------------------------------------

def _csvs(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*.csv"))}


@pytest.mark.criterion(7)
class TestReproducibility:
    def test_tiny_pipeline_identical_at_one_and_eight_workers(self, tmp_path, note):
        runs = {}
        for name, workers in (("w1", 1), ("w8", 8), ("w1_again", 1)):
            out = tmp_path / name
            assert main(["pipeline", "--preset", "tiny", "--workers", str(workers),
                         "--out", str(out)]) == 0
            runs[name] = _csvs(out)
        assert runs["w1"] and runs["w1"] == runs["w8"] == runs["w1_again"]
        note(f"{len(runs['w1'])} CSV files byte-identical across 3 runs")

    def test_standalone_commands_identical(self, tmp_path):
        src = tmp_path / "src"
        assert main(["evolve", "--preset", "tiny", "--out", str(src)]) == 0
        geno = src / "runs" / "run_00" / "best_genotype.json"
        outs = {}
        for workers in (1, 8):
            base = tmp_path / f"w{workers}"
            w = ["--preset", "tiny", "--workers", str(workers)]
            assert main(["evolve", *w, "--out", str(base / "evolve")]) == 0
            assert main(["evaluate", str(geno), *w, "--record", "--out", str(base / "eval")]) == 0
            assert main(["generalize", str(geno), *w, "--out", str(base / "grid")]) == 0
            assert main(["analyze", str(base / "eval"), *w, "--out", str(base / "analysis")]) == 0
            outs[workers] = _csvs(base)
        assert outs[1] == outs[8]
