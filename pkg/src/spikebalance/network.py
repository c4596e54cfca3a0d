"""Genotype layout, decoding, and the sensor -> interneuron -> motor controller.

A genotype is a flat vector of normalized genes in [0, 1]. With ``N``
interneurons (default 2) the positional layout is::

    w_s      7*N   sensor j -> interneuron i          index j*N + i
    w_i      N*N   interneuron j -> interneuron i      index j*N + i
    w_m      N*2   interneuron j -> motor i            index j*2 + i
    neuron   4*N   (a, b, c, d) genes per interneuron
    window   N     rate-code window per interneuron
    motor    6     (tau, bias, gain) per motor unit
    flag     N     excitatory if >= 0.5, inhibitory otherwise

which for ``N = 2`` gives 40 genes: 38 continuous plus 2 polarity flags.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, EncodingError, SchemaError
from .neuron import H_MAX, IzhikevichParams, NeuronState, SpikeHistory, neuron_step, rate_code

N_SENSORS = 7
N_MOTORS = 2
GENOTYPE_SCHEMA = "spikebalance.genotype/1"

WEIGHT_RANGE = (-50.0, 50.0)
BIAS_RANGE = (-4.0, 4.0)
TAU_RANGE = (1.0, 2.0)
GAIN_RANGE = (1.0, 5.0)
WINDOW_RANGE = (1, H_MAX)
F_MAX = 10.0


def layout(n_inter=2):
    """Gene slices of each block, keyed by block name."""
    sizes = [
        ("w_s", N_SENSORS * n_inter),
        ("w_i", n_inter * n_inter),
        ("w_m", n_inter * N_MOTORS),
        ("neuron", 4 * n_inter),
        ("window", n_inter),
        ("motor", 3 * N_MOTORS),
        ("flag", n_inter),
    ]
    out, start = {}, 0
    for name, size in sizes:
        out[name] = slice(start, start + size)
        start += size
    return out


def genotype_length(n_inter=2):
    return layout(n_inter)["flag"].stop


def layout_tag(n_inter=2):
    return f"7-{n_inter}-2/v1"


@dataclass(frozen=True)
class Genotype:
    genes: np.ndarray
    n_inter: int = 2

    def __post_init__(self):
        genes = np.array(self.genes, dtype=float).ravel()
        expected = genotype_length(self.n_inter)
        if genes.size != expected:
            raise EncodingError(f"genotype needs {expected} genes for N={self.n_inter}, "
                                f"got {genes.size}")
        if not np.all(np.isfinite(genes)) or genes.min() < 0.0 or genes.max() > 1.0:
            raise EncodingError("every gene must lie in [0, 1]")
        genes.setflags(write=False)
        object.__setattr__(self, "genes", genes)

    def __len__(self):
        return self.genes.size

    def __eq__(self, other):
        return (isinstance(other, Genotype) and self.n_inter == other.n_inter
                and np.array_equal(self.genes, other.genes))

    def __hash__(self):
        return hash((self.n_inter, self.genes.tobytes()))

    # -- persistence -------------------------------------------------------

    def to_dict(self, **metadata):
        return {
            "schema": GENOTYPE_SCHEMA,
            "layout": layout_tag(self.n_inter),
            "n_inter": self.n_inter,
            # float.hex round-trips bit-exactly; the decimal copy is for humans
            "genes_hex": [float(g).hex() for g in self.genes],
            "genes": [float(g) for g in self.genes],
            "metadata": metadata,
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("schema") != GENOTYPE_SCHEMA:
            raise SchemaError(f"unsupported genotype schema {data.get('schema')!r}; "
                              f"expected {GENOTYPE_SCHEMA!r}")
        n = int(data.get("n_inter", 2))
        if data.get("layout") != layout_tag(n):
            raise SchemaError(f"genotype layout {data.get('layout')!r} does not match "
                              f"{layout_tag(n)!r}")
        if "genes_hex" in data:
            genes = [float.fromhex(h) for h in data["genes_hex"]]
        else:
            genes = data["genes"]
        return cls(np.array(genes), n)

    def save(self, path, **metadata):
        Path(path).write_text(json.dumps(self.to_dict(**metadata), indent=2) + "\n")

    @classmethod
    def load(cls, path):
        data = json.loads(Path(path).read_text())
        return cls.from_dict(data), data.get("metadata", {})


@dataclass(frozen=True)
class NetworkParams:
    w_s: np.ndarray                 # (7, N)
    w_i: np.ndarray                 # (N, N)
    w_m: np.ndarray                 # (N, 2)
    neurons: tuple                  # N x IzhikevichParams
    windows: tuple                  # N x int, steps
    tau: np.ndarray                 # (2,)
    bias: np.ndarray                # (2,)
    gain: np.ndarray                # (2,)
    f_max: float = F_MAX

    @property
    def n_inter(self):
        return len(self.neurons)

    @property
    def excitatory(self):
        return np.array([p.excitatory for p in self.neurons])


def _lin(g, lo_hi):
    lo, hi = lo_hi
    return lo + (hi - lo) * g


def decode(genotype, *, gain_range=GAIN_RANGE, f_max=F_MAX):
    """Map a genotype onto network parameters.

    Outgoing weights of each interneuron take their magnitude from the gene
    and their sign from the neuron's polarity flag.
    """
    if not isinstance(genotype, Genotype):
        genotype = Genotype(np.asarray(genotype))
    n = genotype.n_inter
    g = genotype.genes
    lay = layout(n)

    excitatory = g[lay["flag"]] >= 0.5
    sign = np.where(excitatory, 1.0, -1.0)

    w_s = _lin(g[lay["w_s"]], WEIGHT_RANGE).reshape(N_SENSORS, n)
    w_i = np.abs(_lin(g[lay["w_i"]], WEIGHT_RANGE)).reshape(n, n) * sign[:, None]
    w_m = np.abs(_lin(g[lay["w_m"]], WEIGHT_RANGE)).reshape(n, N_MOTORS) * sign[:, None]

    ng = g[lay["neuron"]].reshape(n, 4)
    neurons = tuple(IzhikevichParams.from_genes(*ng[i], excitatory=bool(excitatory[i]))
                    for i in range(n))
    lo, hi = WINDOW_RANGE
    windows = tuple(int(lo + round((hi - lo) * float(x))) for x in g[lay["window"]])

    mg = g[lay["motor"]].reshape(N_MOTORS, 3)
    return NetworkParams(
        w_s=w_s, w_i=w_i, w_m=w_m, neurons=neurons, windows=windows,
        tau=_lin(mg[:, 0], TAU_RANGE), bias=_lin(mg[:, 1], BIAS_RANGE),
        gain=_lin(mg[:, 2], gain_range), f_max=float(f_max),
    )


@dataclass
class ControllerState:
    neurons: tuple                  # N x NeuronState
    histories: tuple                # N x SpikeHistory
    motors: tuple = (0.0, 0.0)
    rates: tuple = field(default=None)

    @classmethod
    def initial(cls, params):
        n = params.n_inter
        return cls(
            neurons=tuple(p.resting_state() for p in params.neurons),
            histories=tuple(SpikeHistory(H_MAX) for _ in range(n)),
            motors=(0.0,) * N_MOTORS,
            rates=(0.0,) * n,
        )

    @property
    def spikes(self):
        return tuple(1.0 if s.fired else 0.0 for s in self.neurons)

    def copy(self):
        return replace(self, histories=tuple(h.copy() for h in self.histories))


def sum_synaptic_input(sensors, prev_spikes, params, i):
    """Drive to interneuron ``i`` from the sensors and last step's spikes."""
    total = 0.0
    for j in range(N_SENSORS):
        total += params.w_s[j, i] * sensors[j]
    for j in range(params.n_inter):
        total += params.w_i[j, i] * prev_spikes[j]
    return total


def motor_step(m, rates, params, i, dt):
    """Euler step of ``tau * m' = -m + sum_j w_m[j, i] * rate_j``."""
    drive = 0.0
    for j in range(params.n_inter):
        drive += params.w_m[j, i] * rates[j]
    return m + dt / params.tau[i] * (drive - m)


def logistic(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def motor_output(m, params, i):
    return logistic(params.gain[i] * (m + params.bias[i]))


def net_force(motors, params):
    return params.f_max * (motor_output(motors[0], params, 0) - motor_output(motors[1], params, 1))


def controller_step(state, params, sensors, dt):
    """Advance the controller one step; returns ``(new_state, force)``.

    ``state`` is not modified.
    """
    prev = state.spikes
    neurons = []
    histories = []
    for i, (ns, hist) in enumerate(zip(state.neurons, state.histories)):
        drive = sum_synaptic_input(sensors, prev, params, i)
        ns = neuron_step(ns, params.neurons[i], drive, dt)
        hist = hist.copy()
        hist.push(ns.fired)
        neurons.append(ns)
        histories.append(hist)
    rates = tuple(rate_code(h, w) for h, w in zip(histories, params.windows))
    motors = tuple(motor_step(state.motors[i], rates, params, i, dt) for i in range(N_MOTORS))
    new = ControllerState(tuple(neurons), tuple(histories), motors, rates)
    return new, net_force(motors, params)
