"""Cart-pole task: physics, ray sensing, trials, fitness and generalization.

Sign conventions: positive force accelerates the agent towards positive
``x``; ``theta`` is the pole angle from vertical, positive when the tip
leans towards positive ``x``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernel
from .errors import ConfigError, NumericalDivergence
from .network import ControllerState, NetworkParams, controller_step
from .trace import CHANNELS, Trace

DEG = math.pi / 180.0

TRAINING_THETAS_DEG = (-12.0, -9.0, -6.0, -3.0, 3.0, 6.0, 9.0, 12.0)
TRAINING_OMEGAS = (-0.001, 0.001)

_OUTCOMES = {
    _kernel.STATUS_OK: "completed",
    _kernel.STATUS_TRACK: "track_limit",
    _kernel.STATUS_FALLEN: "fallen",
    _kernel.STATUS_DIVERGED: "diverged",
}


@dataclass(frozen=True)
class CartPoleState:
    x: float = 0.0
    v: float = 0.0
    theta: float = 0.0
    omega: float = 0.0

    def is_finite(self):
        return all(math.isfinite(z) for z in (self.x, self.v, self.theta, self.omega))


@dataclass(frozen=True)
class PhysicsParams:
    """Cart-pole constants plus the two integration steps.

    ``dt`` advances the physics; ``network_dt`` is how far the controller's
    neuron and motor dynamics advance per physics step, in their own time
    units.
    """

    cart_mass: float = 1.0
    pole_mass: float = 0.1
    half_length: float = 0.5
    gravity: float = 9.8
    cart_friction: float = 0.0005
    pole_friction: float = 0.000002
    f_max: float = 10.0
    track_length: float = 45.0
    dt: float = 0.01
    network_dt: float = 1.0

    def __post_init__(self):
        for name in ("cart_mass", "pole_mass", "half_length", "track_length", "dt", "network_dt"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"physics.{name} must be > 0, got {getattr(self, name)}")
        for name in ("gravity", "cart_friction", "pole_friction", "f_max"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"physics.{name} must be >= 0, got {getattr(self, name)}")

    @property
    def half_track(self):
        return self.track_length / 2.0

    def frictionless(self):
        return PhysicsParams(**{**asdict(self), "cart_friction": 0.0, "pole_friction": 0.0})

    def as_array(self):
        return np.array([self.cart_mass, self.pole_mass, self.half_length, self.gravity,
                         self.cart_friction, self.pole_friction, self.dt, self.half_track,
                         self.network_dt])


@dataclass(frozen=True)
class RayConfig:
    centers_deg: tuple = (-18.0, -12.0, -6.0, 0.0, 6.0, 12.0, 18.0)
    half_width_deg: float = 6.0

    def __post_init__(self):
        if len(self.centers_deg) != 7:
            raise ConfigError("exactly seven rays are required")
        if not self.half_width_deg > 0:
            raise ConfigError("ray half-width must be > 0")

    @property
    def centers(self):
        return np.array([c * DEG for c in self.centers_deg])

    @property
    def half_width(self):
        return self.half_width_deg * DEG


@dataclass(frozen=True)
class TrialConfig:
    theta0: float
    omega0: float = 0.0
    duration: float = 500.0
    record: bool = False

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigError(f"trial duration must be > 0, got {self.duration}")

    @classmethod
    def from_degrees(cls, theta0_deg, omega0=0.0, duration=500.0, record=False):
        return cls(theta0_deg * DEG, omega0, duration, record)

    def n_steps(self, dt):
        return int(round(self.duration / dt))


@dataclass
class TrialResult:
    fitness: float
    trace: Trace | None
    steps: int
    outcome: str


def physics_step(s, force, p):
    """One explicit Euler step of the cart-pole equations with friction."""
    if abs(force) > p.f_max * (1.0 + 1e-12):
        raise ConfigError(f"|force| = {abs(force)} exceeds f_max = {p.f_max}")
    mc, mp, l, g = p.cart_mass, p.pole_mass, p.half_length, p.gravity
    total_mass = mc + mp
    st = math.sin(s.theta)
    ct = math.cos(s.theta)
    sv = 1.0 if s.v > 0 else (-1.0 if s.v < 0 else 0.0)
    om = s.omega
    tmp = (-force - mp * l * om * om * st + p.cart_friction * sv) / total_mass
    th_acc = (g * st + ct * tmp - p.pole_friction * om / (mp * l)) / (
        l * (4.0 / 3.0 - mp * ct * ct / total_mass))
    x_acc = (force + mp * l * (om * om * st - th_acc * ct) - p.cart_friction * sv) / total_mass
    new = CartPoleState(
        x=s.x + p.dt * s.v,
        v=s.v + p.dt * x_acc,
        theta=s.theta + p.dt * om,
        omega=om + p.dt * th_acc,
    )
    if not new.is_finite():
        raise NumericalDivergence("cart-pole state diverged", asdict(new))
    return new


def mechanical_energy(s, p):
    """Kinetic plus potential energy of cart and uniform rod (pivot at height 0)."""
    mc, mp, l = p.cart_mass, p.pole_mass, p.half_length
    kinetic = (0.5 * (mc + mp) * s.v ** 2 + mp * l * s.v * s.omega * math.cos(s.theta)
               + (2.0 / 3.0) * mp * l * l * s.omega ** 2)
    return kinetic + mp * p.gravity * l * math.cos(s.theta)


def sense(theta, rc=RayConfig()):
    """Triangular receptive-field activations of the seven rays."""
    out = np.empty(7)
    width = rc.half_width
    for j, center in enumerate(rc.centers):
        act = 1.0 - abs(theta - center) / width
        out[j] = act if act > 0.0 else 0.0
    return out


class _Score:
    """Neumaier-compensated running sum of cos(theta)."""

    __slots__ = ("acc", "comp")

    def __init__(self):
        self.acc = 0.0
        self.comp = 0.0

    def add(self, term):
        t = self.acc + term
        if abs(self.acc) >= abs(term):
            self.comp += (self.acc - t) + term
        else:
            self.comp += (term - t) + self.acc
        self.acc = t

    @property
    def total(self):
        return self.acc + self.comp


def _terminated(s, pp):
    if abs(s.x) > pp.half_track:
        return "track_limit"
    if abs(s.theta) >= math.pi / 2:
        return "fallen"
    return None


def run_scripted(policy, tc, pp=PhysicsParams(), rc=RayConfig(), physics=physics_step):
    """Closed loop with an arbitrary ``policy(step, state, sensors) -> force``.

    Uses the same scoring and termination rules as :func:`run_trial`; the
    physics function may be swapped for scripted trajectories.
    """
    n_steps = tc.n_steps(pp.dt)
    s = CartPoleState(theta=tc.theta0, omega=tc.omega0)
    score = _Score()
    outcome = "completed"
    steps = 0
    for k in range(n_steps):
        s = physics(s, policy(k, s, sense(s.theta, rc)), pp)
        steps += 1
        score.add(math.cos(s.theta))
        reason = _terminated(s, pp)
        if reason:
            outcome = reason
            break
    return TrialResult(score.total / n_steps, None, steps, outcome)


def _run_reference(params, tc, pp, rc):
    n_steps = tc.n_steps(pp.dt)
    s = CartPoleState(theta=tc.theta0, omega=tc.omega0)
    cs = ControllerState.initial(params)
    score = _Score()
    buf = Trace.empty_buffers(n_steps) if tc.record else None
    outcome = "completed"
    steps = 0
    for k in range(n_steps):
        sensors = sense(s.theta, rc)
        try:
            cs, force = controller_step(cs, params, sensors, pp.network_dt)
            if buf is not None:
                _record_row(buf, k, s, sensors, cs, force)
            s = physics_step(s, force, pp)
        except NumericalDivergence as err:
            err.context.update(theta0=tc.theta0, omega0=tc.omega0, step=k)
            raise
        steps += 1
        score.add(math.cos(s.theta))
        reason = _terminated(s, pp)
        if reason:
            outcome = reason
            break
    trace = None
    if buf is not None:
        trace = Trace({c: col[:steps] for c, col in buf.items()}, _trace_meta(tc, pp, rc))
    return TrialResult(score.total / n_steps, trace, steps, outcome)


def _record_row(buf, k, s, sensors, cs, force):
    buf["step"][k] = k
    buf["theta"][k] = s.theta
    buf["omega"][k] = s.omega
    buf["x"][k] = s.x
    buf["v"][k] = s.v
    for j in range(7):
        buf[f"S{j + 1}"][k] = sensors[j]
    for i in range(2):
        buf[f"V{i + 1}"][k] = cs.neurons[i].v
        buf[f"spike{i + 1}"][k] = cs.spikes[i]
        buf[f"R{i + 1}"][k] = cs.rates[i]
        buf[f"M{i + 1}"][k] = cs.motors[i]
    buf["force"][k] = force


def _trace_meta(tc, pp, rc):
    return {"trial": asdict(tc), "physics": asdict(pp), "rays": asdict(rc)}


class CompiledNetwork:
    """Network parameters flattened into the arrays the kernel consumes."""

    def __init__(self, params):
        self.params = params
        rest = [p.resting_state() for p in params.neurons]
        self.args = (
            np.ascontiguousarray(params.w_s, dtype=float),
            np.ascontiguousarray(params.w_i, dtype=float),
            np.ascontiguousarray(params.w_m, dtype=float),
            np.array([p.a for p in params.neurons]),
            np.array([p.b for p in params.neurons]),
            np.array([p.c for p in params.neurons]),
            np.array([p.d for p in params.neurons]),
            np.array([r.v for r in rest]),
            np.array([r.u for r in rest]),
            np.array(params.windows, dtype=np.int64),
            np.asarray(params.tau, dtype=float),
            np.asarray(params.bias, dtype=float),
            np.asarray(params.gain, dtype=float),
            float(params.f_max),
        )

    def run(self, tc, pp, rc):
        n_steps = tc.n_steps(pp.dt)
        if tc.record and self.params.n_inter != 2:
            raise ConfigError("trace recording supports exactly two interneurons")
        rec = np.zeros((n_steps if tc.record else 0, _kernel.N_REC))
        total, steps, status = _kernel.simulate_trial(
            *self.args, pp.as_array(), rc.centers, rc.half_width,
            float(tc.theta0), float(tc.omega0), n_steps, rec)
        if status == _kernel.STATUS_DIVERGED:
            raise NumericalDivergence("closed-loop simulation diverged",
                                      {"theta0": tc.theta0, "omega0": tc.omega0, "step": steps})
        trace = None
        if tc.record:
            cols = {c: rec[:steps, i].copy() for i, c in enumerate(CHANNELS)}
            trace = Trace(cols, _trace_meta(tc, pp, rc))
        return TrialResult(total / n_steps, trace, steps, _OUTCOMES[status])


def run_trial(params, tc, pp=PhysicsParams(), rc=RayConfig(), engine="fast"):
    """Run one closed-loop trial of a network controller.

    ``engine="fast"`` uses the compiled kernel; ``"reference"`` steps the
    object-level functions. Both give identical results.
    """
    if engine == "fast":
        net = params if isinstance(params, CompiledNetwork) else CompiledNetwork(params)
        return net.run(tc, pp, rc)
    if engine == "reference":
        if isinstance(params, CompiledNetwork):
            params = params.params
        if not isinstance(params, NetworkParams):
            raise ConfigError("reference engine needs NetworkParams")
        return _run_reference(params, tc, pp, rc)
    raise ConfigError(f"unknown engine {engine!r}")


def training_conditions(duration=500.0, record=False):
    """The 16 canonical initial conditions used for fitness."""
    return [TrialConfig.from_degrees(th, om, duration, record)
            for th in TRAINING_THETAS_DEG for om in TRAINING_OMEGAS]


def evaluate_trials(params, pp=PhysicsParams(), rc=RayConfig(), duration=500.0,
                    record=False, conditions=None, engine="fast"):
    net = CompiledNetwork(params) if engine == "fast" else params
    conditions = conditions if conditions is not None else training_conditions(duration, record)
    return [run_trial(net, tc, pp, rc, engine) for tc in conditions]


def evaluate_fitness(params, pp=PhysicsParams(), rc=RayConfig(), duration=500.0, engine="fast"):
    """Mean fitness over the 16 canonical trials."""
    results = evaluate_trials(params, pp, rc, duration, engine=engine)
    return math.fsum(r.fitness for r in results) / len(results)


@dataclass
class GeneralizationGrid:
    thetas_deg: np.ndarray
    omegas: np.ndarray
    fitness: np.ndarray             # (len(thetas), len(omegas))
    training: np.ndarray = field(default=None)  # bool mask, same shape

    def rows(self):
        """Row-major ``(theta0_deg, omega0, fitness, is_training)`` tuples."""
        return [(float(th), float(om), float(self.fitness[i, j]), bool(self.training[i, j]))
                for i, th in enumerate(self.thetas_deg) for j, om in enumerate(self.omegas)]


def generalization_grid(params, theta_range_deg=(-45.0, 45.0), omega_range=(-0.01, 0.01),
                        resolution=(31, 21), pp=PhysicsParams(), rc=RayConfig(),
                        duration=500.0, engine="fast"):
    """Single-trial fitness over a grid of initial angles and angular velocities."""
    if isinstance(resolution, int):
        resolution = (resolution, resolution)
    n_th, n_om = resolution
    if n_th < 2 or n_om < 2:
        raise ConfigError(f"grid resolution must be >= 2 per axis, got {resolution}")
    thetas = np.linspace(theta_range_deg[0], theta_range_deg[1], n_th)
    omegas = np.linspace(omega_range[0], omega_range[1], n_om)
    net = CompiledNetwork(params) if engine == "fast" else params
    fit = np.empty((n_th, n_om))
    mask = np.zeros((n_th, n_om), dtype=bool)
    for i, th in enumerate(thetas):
        for j, om in enumerate(omegas):
            tc = TrialConfig.from_degrees(float(th), float(om), duration)
            fit[i, j] = run_trial(net, tc, pp, rc, engine).fitness
            mask[i, j] = (any(abs(th - t) < 1e-9 for t in TRAINING_THETAS_DEG)
                          and any(abs(om - o) < 1e-12 for o in TRAINING_OMEGAS))
    return GeneralizationGrid(thetas, omegas, fit, mask)
