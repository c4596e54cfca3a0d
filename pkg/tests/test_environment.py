import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikebalance.environment import (
    DEG, CartPoleState, PhysicsParams, RayConfig, TrialConfig, evaluate_fitness,
    evaluate_trials, generalization_grid, mechanical_energy, physics_step, run_scripted,
    run_trial, sense, training_conditions,
)
from spikebalance.errors import ConfigError
from spikebalance.network import Genotype, decode, layout
from spikebalance.trace import CHANNELS

PP = PhysicsParams()
DATA = Path(__file__).parent / "data"
LAY = layout(2)


def theta_acc_oracle(theta, omega, v, force, mc=1.0, mp=0.1, l=0.5, g=9.8, muc=0.0005,
                     mup=0.000002):
    """Angular acceleration written out directly from the published equations."""
    num = (g * math.sin(theta)
           + math.cos(theta) * ((-force - mp * l * omega ** 2 * math.sin(theta)
                                 + muc * np.sign(v)) / (mc + mp))
           - mup * omega / (mp * l))
    den = l * (4.0 / 3.0 - mp * math.cos(theta) ** 2 / (mc + mp))
    return num / den


def symmetric_params(seed):
    """Left-right mirror-symmetric controller: swapping sides flips the force."""
    rng = np.random.default_rng(seed)
    g = rng.random(40)
    w_s = g[LAY["w_s"]].reshape(7, 2)
    w_s[:, 1] = w_s[::-1, 0]
    g[LAY["w_s"]] = w_s.ravel()
    w_i = g[LAY["w_i"]].reshape(2, 2)
    w_i[1, 1], w_i[1, 0] = w_i[0, 0], w_i[0, 1]
    g[LAY["w_i"]] = w_i.ravel()
    w_m = g[LAY["w_m"]].reshape(2, 2)
    w_m[1, 1], w_m[1, 0] = w_m[0, 0], w_m[0, 1]
    g[LAY["w_m"]] = w_m.ravel()
    for name in ("neuron", "window", "flag"):
        blk = g[LAY[name]].reshape(2, -1)
        blk[1] = blk[0]
        g[LAY[name]] = blk.ravel()
    motor = g[LAY["motor"]]
    motor[3:] = motor[:3]
    g[LAY["motor"]] = motor
    return decode(Genotype(g))


def zero_weight_params():
    g = np.full(40, 0.5)
    return decode(Genotype(g))


class TestPhysics:
    def test_equilibrium_is_fixed(self):
        s = CartPoleState()
        for _ in range(10_000):
            nxt = physics_step(s, 0.0, PP)
            assert max(abs(a - b) for a, b in zip(
                (nxt.x, nxt.v, nxt.theta, nxt.omega), (s.x, s.v, s.theta, s.omega))) < 1e-12
            s = nxt
        assert s == CartPoleState()

    @pytest.mark.parametrize("theta,omega,v,force", [
        (0.1, 0.0, 0.0, 0.0), (-0.3, 0.2, 1.5, 4.0), (0.05, -0.1, -0.7, -10.0),
        (1.2, 2.0, 0.0, 3.0),
    ])
    def test_angular_acceleration_matches_formula(self, theta, omega, v, force):
        s = CartPoleState(theta=theta, omega=omega, v=v)
        nxt = physics_step(s, force, PP)
        acc = (nxt.omega - omega) / PP.dt
        assert acc == pytest.approx(theta_acc_oracle(theta, omega, v, force), rel=1e-10)
        if (theta, omega, v, force) == (0.1, 0.0, 0.0, 0.0):
            assert acc > 0

    def test_positive_force_accelerates_positive(self):
        nxt = physics_step(CartPoleState(), 5.0, PP)
        assert nxt.v > 0 and nxt.omega < 0

    def test_force_limit(self):
        with pytest.raises(ConfigError):
            physics_step(CartPoleState(), 10.5, PP)

    def test_energy_drift_halves_with_dt(self):
        # same horizon: 10^4 steps at dt, 2*10^4 at dt/2
        def drift(dt, n):
            pp = replace(PP.frictionless(), dt=dt)
            s = CartPoleState(theta=0.1)
            e0 = mechanical_energy(s, pp)
            worst = 0.0
            for _ in range(n):
                s = physics_step(s, 0.0, pp)
                worst = max(worst, abs(mechanical_energy(s, pp) - e0))
            return worst
        ratio = drift(0.01, 10_000) / drift(0.005, 20_000)
        assert 1.8 < ratio < 2.2

    def test_energy_conserved_in_continuum_limit(self):
        pp = replace(PP.frictionless(), dt=1e-5)
        s = CartPoleState(theta=0.1)
        e0 = mechanical_energy(s, pp)
        for _ in range(10_000):
            s = physics_step(s, 0.0, pp)
        assert abs(mechanical_energy(s, pp) - e0) < 1e-5


class TestSense:
    def test_center(self):
        assert list(sense(0.0)) == [0, 0, 0, 1, 0, 0, 0]

    def test_midpoint(self):
        a = sense(3 * DEG)
        assert a[3] == pytest.approx(0.5) and a[4] == pytest.approx(0.5)
        assert a[[0, 1, 2, 5, 6]].sum() == 0

    @pytest.mark.parametrize("deg", [25, -25, 45, 90])
    def test_out_of_range(self, deg):
        assert np.all(sense(deg * DEG) == 0)

    @given(st.floats(-0.6, 0.6))
    def test_bounded_and_triangular(self, theta):
        a = sense(theta)
        assert np.all((0 <= a) & (a <= 1))
        rc = RayConfig()
        expect = np.maximum(0, 1 - np.abs(theta - rc.centers) / rc.half_width)
        assert np.allclose(a, expect, atol=1e-15)

    @given(st.floats(-0.5, 0.5), st.floats(-1e-6, 1e-6))
    def test_continuous(self, theta, eps):
        lipschitz = 1 / RayConfig().half_width
        assert np.max(np.abs(sense(theta + eps) - sense(theta))) <= lipschitz * abs(eps) + 1e-12

    def test_peak_exactly_at_centers(self):
        for j, c in enumerate(RayConfig().centers):
            a = sense(c)
            assert a[j] == 1.0 and np.argmax(a) == j


def frozen_physics(s, force, pp):
    return s


class TestFitness:
    def test_perfect_balancer_scores_one(self):
        r = run_scripted(lambda k, s, sen: 0.0, TrialConfig(0.0, 0.0, 20.0), PP)
        assert r.fitness == 1.0 and r.outcome == "completed" and r.steps == 2000

    def test_upright_through_full_duration(self):
        r = run_scripted(lambda k, s, sen: 0.0, TrialConfig(0.0, 0.0, 500.0), PP,
                         physics=frozen_physics)
        assert r.fitness == 1.0

    def test_frozen_12_degrees(self):
        r = run_scripted(lambda k, s, sen: 0.0, TrialConfig.from_degrees(12.0, 0.0, 500.0), PP,
                         physics=frozen_physics)
        assert abs(r.fitness - math.cos(12 * DEG)) < 1e-12

    def test_zero_force_falls_below_baseline(self):
        tc = TrialConfig.from_degrees(6.0, 0.0, 20.0)
        r = run_scripted(lambda k, s, sen: 0.0, tc, PP)
        # oracle: the same fall written inline
        s, acc, n = CartPoleState(theta=6 * DEG), 0.0, 0
        for n in range(1, 2001):
            s = physics_step(s, 0.0, PP)
            acc += math.cos(s.theta)
            if abs(s.theta) >= math.pi / 2:
                break
        assert r.outcome == "fallen" and r.steps == n
        assert r.fitness == pytest.approx(acc / 2000, rel=1e-12)
        assert r.fitness < 1.0

    def test_track_limit_terminates(self):
        def glide(s, force, pp):
            return CartPoleState(x=s.x + 0.0625, v=6.25)
        tc = TrialConfig(0.0, 0.0, 100.0)
        r = run_scripted(lambda k, s, sen: 0.0, tc, PP, physics=glide)
        assert r.outcome == "track_limit"
        assert r.steps == 361  # 0.0625 is exact, so 361 steps first exceed 22.5
        assert r.fitness == pytest.approx(361 / 10_000, rel=1e-12)

    def test_track_limit_in_recorded_network_trial(self):
        p = decode(Genotype.load(DATA / "drifting_balancer.json")[0])
        tc = TrialConfig.from_degrees(-12.0, -0.001, 500.0, record=True)
        for engine in ("fast", "reference"):
            r = run_trial(p, tc, PP, engine=engine)
            assert r.outcome == "track_limit"
            assert r.steps < tc.n_steps(PP.dt)
            assert np.all(np.abs(r.trace["x"]) <= 22.5)
            assert len(r.trace) == r.steps

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**31), st.sampled_from([-12.0, -3.0, 6.0, 12.0]))
    def test_fitness_range(self, seed, th):
        p = decode(Genotype(np.random.default_rng(seed).random(40)))
        r = run_trial(p, TrialConfig.from_degrees(th, 0.001, 5.0))
        assert 0.0 < r.fitness <= 1.0

    def test_zero_weight_network_mirror_pairs(self):
        p = zero_weight_params()
        res = evaluate_trials(p, duration=20.0)
        fits = {(round(tc.theta0 / DEG), tc.omega0): r.fitness
                for tc, r in zip(training_conditions(20.0), res)}
        for (th, om), f in fits.items():
            assert f == fits[(-th, -om)]
            oracle = run_scripted(lambda k, s, sen: 0.0, TrialConfig.from_degrees(th, om, 20.0))
            assert f == pytest.approx(oracle.fitness, abs=1e-15)


class TestTrials:
    @pytest.mark.parametrize("seed", range(4))
    def test_fast_matches_reference(self, seed):
        p = decode(Genotype(np.random.default_rng(seed).random(40)))
        tc = TrialConfig.from_degrees(-6.0, 0.001, 5.0, record=True)
        a = run_trial(p, tc, engine="fast")
        b = run_trial(p, tc, engine="reference")
        assert a.fitness == b.fitness and a.steps == b.steps and a.outcome == b.outcome
        for c in CHANNELS:
            assert np.array_equal(a.trace[c], b.trace[c])

    def test_trace_schema_and_first_row(self):
        p = decode(Genotype(np.random.default_rng(9).random(40)))
        tc = TrialConfig.from_degrees(-6.0, 0.001, 2.0, record=True)
        r = run_trial(p, tc)
        assert set(CHANNELS) <= set(r.trace.columns)
        assert r.trace["theta"][0] == pytest.approx(-6 * DEG)
        assert r.trace["omega"][0] == 0.001
        assert np.array_equal(r.trace["step"], np.arange(r.steps))

    def test_deterministic(self):
        p = decode(Genotype(np.random.default_rng(2).random(40)))
        assert evaluate_fitness(p, duration=5.0) == evaluate_fitness(p, duration=5.0)

    def test_sixteen_conditions(self):
        conds = training_conditions()
        assert len(conds) == 16
        degs = sorted({round(c.theta0 / DEG, 9) for c in conds})
        assert degs == [-12, -9, -6, -3, 3, 6, 9, 12]
        assert sorted({c.omega0 for c in conds}) == [-0.001, 0.001]


class TestGrid:
    def test_three_by_three_row_major(self):
        g = generalization_grid(zero_weight_params(), resolution=(3, 3), duration=1.0)
        rows = g.rows()
        assert len(rows) == 9
        assert [r[:2] for r in rows[:3]] == [(-45.0, -0.01), (-45.0, 0.0), (-45.0, 0.01)]

    def test_default_grid_marks_training_points(self):
        g = generalization_grid(zero_weight_params(), duration=0.05)
        assert g.fitness.shape == (31, 21)
        assert g.thetas_deg[0] == -45 and g.thetas_deg[-1] == 45
        assert g.omegas[0] == -0.01 and g.omegas[-1] == 0.01
        assert g.training.sum() == 16

    def test_degenerate_rejected(self):
        with pytest.raises(ConfigError):
            generalization_grid(zero_weight_params(), resolution=(1, 5))

    @pytest.mark.parametrize("seed", range(3))
    def test_mirror_symmetry(self, seed):
        g = generalization_grid(symmetric_params(seed), resolution=(5, 3), duration=3.0)
        assert np.array_equal(g.fitness, g.fitness[::-1, ::-1])
