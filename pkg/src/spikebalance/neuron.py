"""Izhikevich spiking neuron and the sliding-window rate coder.

Membrane dynamics follow the two-variable quadratic model

    v' = 0.04 v^2 + 5 v + 140 - u + I
    u' = a (b v - u)

with a hard reset ``v <- c, u <- u + d`` once ``v`` reaches the 30 mV peak.
Integration is explicit Euler; the reset is applied inside the step, so a
returned state never sits at or above the peak.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalDivergence

SPIKE_PEAK = 30.0
RESTING_V = -70.0

#: Default capacity of :class:`SpikeHistory`; must cover the largest rate window.
H_MAX = 100


@dataclass(frozen=True)
class IzhikevichParams:
    a: float = 0.02
    b: float = 0.2
    c: float = -65.0
    d: float = 8.0
    excitatory: bool = True

    def __post_init__(self):
        if not self.a > 0:
            raise ConfigError(f"recovery time-scale a must be > 0, got {self.a}")
        if not self.d >= 0:
            raise ConfigError(f"recovery increment d must be >= 0, got {self.d}")
        if not self.c < SPIKE_PEAK:
            raise ConfigError(f"reset potential c must be below {SPIKE_PEAK}, got {self.c}")

    @classmethod
    def from_genes(cls, r_a, r_b, r_c, r_d, excitatory):
        """Map four normalized genes onto the excitatory or inhibitory family.

        Excitatory cells span regular spiking to chattering (only ``c`` and
        ``d`` vary); inhibitory cells span fast spiking to low-threshold
        spiking (only ``a`` and ``b`` vary).
        """
        if excitatory:
            return cls(a=0.02, b=0.2, c=-65.0 + 15.0 * r_c * r_c,
                       d=8.0 - 6.0 * r_d * r_d, excitatory=True)
        return cls(a=0.02 + 0.08 * r_a, b=0.25 - 0.05 * r_b, c=-65.0, d=2.0,
                   excitatory=False)

    def resting_state(self):
        """Lower fixed point of the subthreshold dynamics under zero drive.

        Falls back to ``v = c`` when the nullclines do not intersect.
        """
        # 0.04 v^2 + (5 - b) v + 140 = 0, lower root
        disc = (5.0 - self.b) ** 2 - 4 * 0.04 * 140.0
        v = (-(5.0 - self.b) - math.sqrt(disc)) / 0.08 if disc >= 0 else self.c
        return NeuronState(v=v, u=self.b * v, fired=False)


@dataclass(frozen=True)
class NeuronState:
    v: float = RESTING_V
    u: float = -14.0
    fired: bool = False


def neuron_step(state, params, input_current, dt):
    """Advance one neuron by a single Euler step of length ``dt``.

    Raises:
        NumericalDivergence: if the input or resulting state is not finite.
    """
    if not dt > 0:
        raise ConfigError(f"dt must be > 0, got {dt}")
    v, u = state.v, state.u
    if not (math.isfinite(v) and math.isfinite(u) and math.isfinite(input_current)):
        raise NumericalDivergence("non-finite neuron state or input",
                                  {"v": v, "u": u, "I": input_current})
    v_new = v + dt * (0.04 * v * v + 5.0 * v + 140.0 - u + input_current)
    u_new = u + dt * (params.a * (params.b * v - u))
    if not (math.isfinite(v_new) and math.isfinite(u_new)):
        raise NumericalDivergence("neuron state diverged", {"v": v_new, "u": u_new, "dt": dt})
    if v_new >= SPIKE_PEAK:
        return NeuronState(v=params.c, u=u_new + params.d, fired=True)
    return NeuronState(v=v_new, u=u_new, fired=False)


class SpikeHistory:
    """Fixed-capacity ring of the most recent binary spike indicators.

    Starts zero-filled, so windows read during warm-up see silence.
    """

    __slots__ = ("capacity", "_buf", "_pos")

    def __init__(self, capacity=H_MAX):
        if capacity < 1:
            raise ConfigError(f"history capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self._buf = np.zeros(self.capacity)
        self._pos = 0  # index of the next write

    def push(self, spike):
        self._buf[self._pos] = 1.0 if spike else 0.0
        self._pos = (self._pos + 1) % self.capacity

    def recent(self, h):
        """The last ``h`` entries, newest first."""
        idx = (self._pos - 1 - np.arange(h)) % self.capacity
        return self._buf[idx]

    def copy(self):
        other = SpikeHistory.__new__(SpikeHistory)
        other.capacity = self.capacity
        other._buf = self._buf.copy()
        other._pos = self._pos
        return other

    def __len__(self):
        return self.capacity

    @classmethod
    def from_sequence(cls, spikes, capacity=H_MAX):
        """Build a history as if ``spikes`` had been pushed in order."""
        hist = cls(capacity)
        for s in spikes:
            hist.push(s)
        return hist


def rate_code(history, h):
    """Fraction of spikes among the most recent ``h`` steps."""
    if h < 1:
        raise ConfigError(f"rate window must be >= 1, got {h}")
    if h > history.capacity:
        raise ConfigError(f"rate window {h} exceeds history capacity {history.capacity}")
    # integer count keeps the result exact and independent of summation order
    return int(np.count_nonzero(history.recent(h))) / h
