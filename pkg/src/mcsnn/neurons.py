"""Spiking neuron dynamics: LIF, current-based LIF, and the
multi-compartment leaky (MCLeaky) neuron.

Every step function is pure: it takes (state, params, input_current) and
returns (new_state, spike). Spikes use a soft reset by threshold
subtraction applied on the step AFTER the spike. All potentials are plain
float arrays of shape [batch, units] (any broadcastable shape works).

The hard threshold is non-differentiable; training uses the fast-sigmoid
surrogate whose primitive is x / (1 + k|x|) and whose derivative is
1 / (1 + k|x|)^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SURROGATE_SLOPE_DEFAULT = 25.0


def fast_sigmoid(x: np.ndarray, slope: float = SURROGATE_SLOPE_DEFAULT) -> np.ndarray:
    """Smooth spike primitive x / (1 + k|x|); odd, saturates at +-1/k."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    finite = np.isfinite(x)
    xf = x[finite]
    out[finite] = xf / (1.0 + slope * np.abs(xf))
    out[~finite] = np.sign(x[~finite]) / slope
    return out


def surrogate_grad(x: np.ndarray, slope: float = SURROGATE_SLOPE_DEFAULT) -> np.ndarray:
    """Derivative of fast_sigmoid: 1 / (1 + k|x|)^2."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    finite = np.isfinite(x)
    out[finite] = 1.0 / (1.0 + slope * np.abs(x[finite])) ** 2
    return out


def heaviside(x: np.ndarray) -> np.ndarray:
    """Spike indicator [x >= 0] as float (boundary fires)."""
    return (np.asarray(x) >= 0.0).astype(np.float64)


def _reset_current(spike: np.ndarray, threshold: float) -> np.ndarray:
    # guard: with threshold = +inf spiking is disabled, and 0 * inf is nan
    if not np.isfinite(threshold):
        return np.zeros_like(spike)
    return spike * threshold


# ---------------------------------------------------------------------------
# Plain leaky integrate-and-fire
# ---------------------------------------------------------------------------

@dataclass
class LifParams:
    beta: float = 0.875
    threshold: float = 1.0
    learn_threshold: bool = True


@dataclass
class LifState:
    """Membrane potential as left by the previous step (pre-reset).

    The previous spike is recoverable as [v >= threshold], so it is not
    stored separately.
    """

    v: np.ndarray

    @classmethod
    def zeros(cls, shape) -> "LifState":
        return cls(np.zeros(shape, dtype=np.float64))


def lif_step(state: LifState, params: LifParams,
             input_current: np.ndarray) -> tuple[LifState, np.ndarray]:
    """v' = beta*v + I - last_spike*threshold; spike = [v' >= threshold]."""
    last_spike = heaviside(state.v - params.threshold)
    v = params.beta * state.v + input_current \
        - _reset_current(last_spike, params.threshold)
    spike = heaviside(v - params.threshold)
    return LifState(v), spike


# ---------------------------------------------------------------------------
# Current-based LIF (synaptic current trace feeding the membrane)
# ---------------------------------------------------------------------------

@dataclass
class CLifParams:
    alpha_syn: float = 0.5
    beta: float = 0.875
    threshold: float = 1.0
    learn_alpha_syn: bool = True
    learn_threshold: bool = True


@dataclass
class CLifState:
    i_syn: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, shape) -> "CLifState":
        return cls(np.zeros(shape, dtype=np.float64),
                   np.zeros(shape, dtype=np.float64))


def clif_step(state: CLifState, params: CLifParams,
              input_current: np.ndarray) -> tuple[CLifState, np.ndarray]:
    """i_syn' = alpha_syn*i_syn + I; v' = beta*v + i_syn' - last_spike*thr.

    With alpha_syn = 0 the synapse trace is exactly the input and the
    dynamics degenerate to lif_step.
    """
    last_spike = heaviside(state.v - params.threshold)
    i_syn = params.alpha_syn * state.i_syn + input_current
    v = params.beta * state.v + i_syn \
        - _reset_current(last_spike, params.threshold)
    spike = heaviside(v - params.threshold)
    return CLifState(i_syn, v), spike


# ---------------------------------------------------------------------------
# Multi-compartment leaky neuron
# ---------------------------------------------------------------------------

@dataclass
class MCLeakyParams:
    """Two dendrite compartments chained into a soma.

    alpha_* are the recurrent (self and backward) decays, beta_* the forward
    couplings. The soma term alpha_s * v_soma(t-1) feeds both the distal
    update and the soma update, so the effective soma leak is doubled when
    the forward couplings are 1; see mcleaky_step.
    """

    alpha_d1: float = 0.2
    alpha_d2: float = 0.2
    alpha_s: float = 0.2
    beta_d1: float = 0.875
    beta_d2: float = 0.875
    threshold: float = 1.0
    learn_alpha_d1: bool = True
    learn_alpha_d2: bool = True
    learn_alpha_s: bool = True
    learn_beta_d1: bool = False
    learn_beta_d2: bool = False
    learn_threshold: bool = True


@dataclass
class MCLeakyState:
    v_d1: np.ndarray
    v_d2: np.ndarray
    v_soma: np.ndarray
    last_spike: np.ndarray

    @classmethod
    def zeros(cls, shape) -> "MCLeakyState":
        z = lambda: np.zeros(shape, dtype=np.float64)
        return cls(z(), z(), z(), z())


def mcleaky_step(state: MCLeakyState, params: MCLeakyParams,
                 input_current: np.ndarray) -> tuple[MCLeakyState, np.ndarray]:
    """One update of the three-compartment cascade, evaluated top to bottom:

        v_d2' = alpha_d2*v_d2 + alpha_d1*v_d1 + I
        v_d1' = alpha_d1*v_d1 + beta_d2*v_d2' + alpha_s*v_soma
        v_soma' = alpha_s*v_soma + beta_d1*v_d1' - last_spike*threshold
        spike = [v_soma' >= threshold]

    Input enters the distal dendrite; each later line consumes the fresh
    value computed above it. Soft reset subtracts threshold on the step
    after a spike.
    """
    v_d2 = params.alpha_d2 * state.v_d2 + params.alpha_d1 * state.v_d1 \
        + input_current
    v_d1 = params.alpha_d1 * state.v_d1 + params.beta_d2 * v_d2 \
        + params.alpha_s * state.v_soma
    v_soma = params.alpha_s * state.v_soma + params.beta_d1 * v_d1 \
        - _reset_current(state.last_spike, params.threshold)
    spike = heaviside(v_soma - params.threshold)
    return MCLeakyState(v_d1, v_d2, v_soma, spike), spike


def run_neuron(step_fn, state, params, inputs: np.ndarray):
    """Drive a step function over a [t_steps, ...] input sequence.

    Returns (final_state, spikes [t, ...], traces) where traces maps each
    state field to its stacked per-step trajectory.
    """
    spikes, traces = [], None
    for x in inputs:
        state, spike = step_fn(state, params, x)
        spikes.append(spike)
        fields = vars(state)
        if traces is None:
            traces = {k: [] for k in fields}
        for k, val in fields.items():
            traces[k].append(np.array(val, copy=True))
    stacked = {k: np.stack(v) for k, v in (traces or {}).items()}
    return state, np.stack(spikes) if spikes else np.zeros((0,)), stacked
