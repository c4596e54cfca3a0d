"""Evolved spiking controllers for ray-sensed pole balancing, with MI analysis."""
from .environment import (
    CartPoleState,
    PhysicsParams,
    RayConfig,
    TrialConfig,
    evaluate_fitness,
    generalization_grid,
    physics_step,
    run_trial,
    sense,
)
from .network import ControllerState, Genotype, NetworkParams, controller_step, decode
from .neuron import IzhikevichParams, NeuronState, SpikeHistory, neuron_step, rate_code

__version__ = "0.1.0"
