"""Spiking LSTM cells: the full gated cell, three reduced-gate variants,
and the decaying-memory (dm) cell that low-pass filters the input first.

The cell follows the usual LSTM algebra but emits binary spikes by
thresholding the hidden state, with an immediate soft reset:

    i, f, o = sigmoid(W_i* x + b_i* + W_h* mem + b_h*)
    g       = tanh   (W_ig x + b_ig + W_hg mem + b_hg)
    cell'   = f * cell + i * g
    mem*    = o * tanh(cell')
    spikes  = [mem* >= threshold]
    mem'    = mem* - spikes * threshold

Variants reduce the gate pre-activations:
    v1: gates drop the input term (keep both bias sets); g keeps its full form
    v2: gates and g keep only the hidden weight matrices
    v3: gates and g keep only the hidden biases
    dm: full cell fed with input_trace' = decay * input_trace + x + offset
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

VARIANTS = ("full", "v1", "v2", "v3", "dm")

GATES = ("i", "f", "o", "g")


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class SlstmParams:
    variant: str
    input_dim: int
    hidden_dim: int
    # input-to-gate and hidden-to-gate weights, [in, hid] / [hid, hid]
    W_ii: np.ndarray
    W_if: np.ndarray
    W_io: np.ndarray
    W_ig: np.ndarray
    W_hi: np.ndarray
    W_hf: np.ndarray
    W_ho: np.ndarray
    W_hg: np.ndarray
    b_ii: np.ndarray
    b_if: np.ndarray
    b_io: np.ndarray
    b_ig: np.ndarray
    b_hi: np.ndarray
    b_hf: np.ndarray
    b_ho: np.ndarray
    b_hg: np.ndarray
    threshold: float = 1.0
    # dm only: per-input-element trainable decay and offset for the trace
    input_decay: np.ndarray | None = None
    input_offset: np.ndarray | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown slstm variant {self.variant!r}")

    @classmethod
    def init(cls, variant: str, input_dim: int, hidden_dim: int, seed: int,
             threshold: float = 1.0,
             input_decay_alpha: float = 0.5) -> "SlstmParams":
        """Uniform init in +-1/sqrt(hidden_dim) for every matrix and bias."""
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(hidden_dim)
        u = lambda *shape: rng.uniform(-bound, bound, size=shape)
        kw = {}
        for gate in GATES:
            kw[f"W_i{gate}"] = u(input_dim, hidden_dim)
            kw[f"W_h{gate}"] = u(hidden_dim, hidden_dim)
            kw[f"b_i{gate}"] = u(hidden_dim)
            kw[f"b_h{gate}"] = u(hidden_dim)
        decay = offset = None
        if variant == "dm":
            decay = np.full(input_dim, float(input_decay_alpha))
            offset = np.zeros(input_dim)
        return cls(variant, input_dim, hidden_dim, threshold=threshold,
                   input_decay=decay, input_offset=offset, **kw)


@dataclass
class SlstmState:
    mem: np.ndarray
    cell: np.ndarray
    last_spike: np.ndarray
    input_trace: np.ndarray | None = None

    @classmethod
    def zeros(cls, batch: int, params: SlstmParams) -> "SlstmState":
        z = lambda dim: np.zeros((batch, dim), dtype=np.float64)
        trace = z(params.input_dim) if params.variant == "dm" else None
        return cls(z(params.hidden_dim), z(params.hidden_dim),
                   z(params.hidden_dim), trace)


def retained_parameter_names(variant: str) -> list[str]:
    """Trainable fields actually used by a variant (threshold excluded)."""
    if variant in ("full", "dm"):
        names = [f"W_i{g}" for g in GATES] + [f"W_h{g}" for g in GATES] \
            + [f"b_i{g}" for g in GATES] + [f"b_h{g}" for g in GATES]
        if variant == "dm":
            names += ["input_decay", "input_offset"]
        return names
    if variant == "v1":
        # gates lose their input matrices; g keeps the full form
        return ["W_ig"] + [f"W_h{g}" for g in GATES] \
            + [f"b_i{g}" for g in GATES] + [f"b_h{g}" for g in GATES]
    if variant == "v2":
        return [f"W_h{g}" for g in GATES]
    if variant == "v3":
        return [f"b_h{g}" for g in GATES]
    raise ValueError(f"unknown slstm variant {variant!r}")


def parameter_count(params: SlstmParams) -> int:
    """Size of the retained trainable set, plus the threshold scalar."""
    total = 1
    for name in retained_parameter_names(params.variant):
        total += getattr(params, name).size
    return total


def gate_preacts(params: SlstmParams, x: np.ndarray,
                 mem: np.ndarray) -> dict[str, np.ndarray]:
    """Pre-activations for i, f, o, g under the variant's omissions."""
    pre = {}
    for gate in GATES:
        W_i = getattr(params, f"W_i{gate}")
        W_h = getattr(params, f"W_h{gate}")
        b_i = getattr(params, f"b_i{gate}")
        b_h = getattr(params, f"b_h{gate}")
        full = gate == "g" and params.variant == "v1"
        if params.variant in ("full", "dm") or full:
            pre[gate] = x @ W_i + b_i + mem @ W_h + b_h
        elif params.variant == "v1":
            pre[gate] = b_i + mem @ W_h + b_h
        elif params.variant == "v2":
            pre[gate] = mem @ W_h
        else:  # v3
            pre[gate] = np.broadcast_to(b_h, mem.shape).copy()
    return pre


def slstm_step(state: SlstmState, params: SlstmParams,
               x: np.ndarray) -> tuple[SlstmState, np.ndarray]:
    """One cell update; returns (new_state, spikes)."""
    trace = state.input_trace
    if params.variant == "dm":
        trace = params.input_decay * trace + x + params.input_offset
        x = trace
    pre = gate_preacts(params, x, state.mem)
    i, f, o = sigmoid(pre["i"]), sigmoid(pre["f"]), sigmoid(pre["o"])
    g = np.tanh(pre["g"])
    cell = f * state.cell + i * g
    mem_raw = o * np.tanh(cell)
    spikes = (mem_raw >= params.threshold).astype(np.float64)
    mem = mem_raw - spikes * params.threshold
    new_trace = trace if params.variant == "dm" else None
    return SlstmState(mem, cell, spikes, new_trace), spikes


def run_slstm(params: SlstmParams, inputs: np.ndarray) -> tuple[SlstmState, np.ndarray]:
    """Drive the cell over [t_steps, batch, input_dim]; stack the spikes."""
    state = SlstmState.zeros(inputs.shape[1], params)
    out = []
    for x in inputs:
        state, spk = slstm_step(state, params, x)
        out.append(spk)
    return state, np.stack(out)
