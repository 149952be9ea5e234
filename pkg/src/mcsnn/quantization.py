"""Fixed-point formats, shift-based decay, integer neuron datapaths,
quantization-aware training helpers, and bit-width sweeps.

Conventions: signed two's-complement rawtypes, round-half-to-even on
quantize, saturating overflow everywhere. The hardware decay multiplies by
0.875 = 1 - 1/8 and is realized as v - (v >> 3) with an arithmetic shift;
for negative raw values the shift floors, so negative potentials decay
slightly asymmetrically. The simulator mirrors this bit-identically. (A
three-term Taylor expansion of e^(-t/tau) at tau = 2 gives 0.625; the
shift-friendly 0.875 constant is what the datapath implements and is
authoritative here.)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DECAY_CONSTANT = 0.875  # 1 - 2**-3, realized as a subtract-shift


@dataclass(frozen=True)
class FixedPointFormat:
    """Signed fixed point: total_bits wide, frac_bits fractional."""

    total_bits: int
    frac_bits: int

    def __post_init__(self):
        if not 2 <= self.total_bits <= 32:
            raise ValueError("total_bits must lie in [2, 32]")
        if not 0 <= self.frac_bits < self.total_bits:
            raise ValueError("frac_bits must lie in [0, total_bits)")

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits

    @property
    def raw_min(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def raw_max(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def min_value(self) -> float:
        return self.raw_min / self.scale

    @property
    def max_value(self) -> float:
        return self.raw_max / self.scale


WEIGHT_FORMAT = FixedPointFormat(8, 7)
STATE_FORMAT = FixedPointFormat(16, 8)
THRESHOLD_FORMAT = FixedPointFormat(8, 3)


@dataclass
class QTensor:
    """Integer raw values tagged with their format."""

    raw: np.ndarray
    fmt: FixedPointFormat

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.int64)
        if self.raw.size and (
            self.raw.min() < self.fmt.raw_min or self.raw.max() > self.fmt.raw_max
        ):
            raise ValueError("raw values outside the format's range")

    def to_float(self) -> np.ndarray:
        return self.raw.astype(np.float64) / self.fmt.scale


def saturate(raw: np.ndarray, fmt: FixedPointFormat) -> np.ndarray:
    return np.clip(np.asarray(raw, dtype=np.int64), fmt.raw_min, fmt.raw_max)


def quantize(x: np.ndarray, fmt: FixedPointFormat) -> QTensor:
    """Round-half-to-even onto the format's grid, saturating at the rails."""
    scaled = np.rint(np.asarray(x, dtype=np.float64) * fmt.scale)
    return QTensor(saturate(scaled.astype(np.int64), fmt), fmt)


def dequantize(q: QTensor) -> np.ndarray:
    return q.to_float()


def fake_quantize(x: np.ndarray, fmt: FixedPointFormat) -> np.ndarray:
    """Quantize-dequantize for QAT forwards; backward treats it as identity
    (straight-through estimator, applied by the training layers)."""
    return dequantize(quantize(x, fmt))


def rescale_raw(raw, from_fmt: FixedPointFormat, to_fmt: FixedPointFormat):
    """Re-express raw integers in another format's fractional scale.

    Left shift is exact; a right shift truncates toward minus infinity
    (arithmetic shift), matching the datapath.
    """
    shift = to_fmt.frac_bits - from_fmt.frac_bits
    raw = np.asarray(raw, dtype=np.int64)
    return raw << shift if shift >= 0 else raw >> (-shift)


def decay_approx(raw):
    """Multiply by 0.875 in pure integer arithmetic: v - (v >> 3).

    Works on int arrays and Python ints. The arithmetic right shift floors,
    so e.g. -7 decays to -6 where +7 stays 7 (asymmetric at small negatives).
    """
    if isinstance(raw, (int, np.integer)):
        return int(raw) - (int(raw) >> 3)
    raw = np.asarray(raw, dtype=np.int64)
    return raw - (raw >> 3)


# ---------------------------------------------------------------------------
# Integer layer datapaths
# ---------------------------------------------------------------------------

def qdense_forward(spikes: np.ndarray, weights: QTensor, bias: QTensor | None,
                   out_fmt: FixedPointFormat = STATE_FORMAT) -> QTensor:
    """Spike-driven accumulation: sum the weight rows of active inputs.

    spikes is a 0/1 vector [in] (or matrix [batch, in]); weights is
    [in, out]. The accumulator is a wide int64; bias (same format as the
    weights) is added raw, then the total is re-expressed in out_fmt and
    saturated. No multiplies happen on the spike path.
    """
    spikes = np.asarray(spikes)
    if bias is not None and bias.fmt != weights.fmt:
        raise ValueError("bias must share the weight format")
    acc = (spikes.astype(np.int64) @ weights.raw)
    if bias is not None:
        acc = acc + bias.raw
    acc = rescale_raw(acc, weights.fmt, out_fmt)
    return QTensor(saturate(acc, out_fmt), out_fmt)


@dataclass
class QMCLeakyParams:
    """Integer multi-compartment neuron: decays are the implicit 0.875
    constant; only the threshold is stored (8-bit), compared in state raw."""

    threshold: QTensor
    state_fmt: FixedPointFormat = STATE_FORMAT

    def threshold_state_raw(self) -> np.ndarray:
        if self.state_fmt.frac_bits < self.threshold.fmt.frac_bits:
            raise ValueError("state format must be at least as fine as threshold")
        return rescale_raw(self.threshold.raw, self.threshold.fmt, self.state_fmt)


@dataclass
class QMCLeakyState:
    v_d1: np.ndarray
    v_d2: np.ndarray
    v_soma: np.ndarray
    last_spike: np.ndarray

    @classmethod
    def zeros(cls, shape) -> "QMCLeakyState":
        z = lambda: np.zeros(shape, dtype=np.int64)
        return cls(z(), z(), z(), z())


def qmcleaky_step(state: QMCLeakyState, params: QMCLeakyParams,
                  input_raw: np.ndarray) -> tuple[QMCLeakyState, np.ndarray]:
    """Integer Eq.-1 cascade: every decay is a subtract-shift, every update
    line saturates once after its full sum, reset subtracts raw threshold."""
    fmt = params.state_fmt
    thr = params.threshold_state_raw()
    d2 = saturate(decay_approx(state.v_d2) + decay_approx(state.v_d1)
                  + np.asarray(input_raw, dtype=np.int64), fmt)
    d1 = saturate(decay_approx(state.v_d1) + decay_approx(d2)
                  + decay_approx(state.v_soma), fmt)
    soma = saturate(decay_approx(state.v_soma) + decay_approx(d1)
                    - state.last_spike * thr, fmt)
    spike = (soma >= thr).astype(np.int64)
    return QMCLeakyState(d1, d2, soma, spike), spike


@dataclass
class QLifParams:
    threshold: QTensor
    state_fmt: FixedPointFormat = STATE_FORMAT

    def threshold_state_raw(self) -> np.ndarray:
        return rescale_raw(self.threshold.raw, self.threshold.fmt, self.state_fmt)


@dataclass
class QLifState:
    v: np.ndarray
    last_spike: np.ndarray

    @classmethod
    def zeros(cls, shape) -> "QLifState":
        return cls(np.zeros(shape, dtype=np.int64), np.zeros(shape, dtype=np.int64))


def qlif_step(state: QLifState, params: QLifParams,
              input_raw: np.ndarray) -> tuple[QLifState, np.ndarray]:
    """Integer LIF with the same 0.875 subtract-shift leak."""
    fmt = params.state_fmt
    thr = params.threshold_state_raw()
    v = saturate(decay_approx(state.v) + np.asarray(input_raw, dtype=np.int64)
                 - state.last_spike * thr, fmt)
    spike = (v >= thr).astype(np.int64)
    return QLifState(v, spike), spike


# ---------------------------------------------------------------------------
# Whole-network integer inference
# ---------------------------------------------------------------------------

@dataclass
class QuantizedBlock:
    """One weighted stage: spike-driven dense accumulation into a population
    of integer neurons."""

    weights: QTensor           # [in, units], weight format
    bias: QTensor | None       # [units], weight format
    neuron_kind: str           # "qmcleaky" | "qlif"
    threshold: QTensor         # scalar or [units], THRESHOLD_FORMAT


@dataclass
class QuantizedNetwork:
    input_dim: int
    blocks: list[QuantizedBlock]
    state_fmt: FixedPointFormat = STATE_FORMAT

    @property
    def layer_sizes(self) -> list[int]:
        return [b.weights.raw.shape[1] for b in self.blocks]


def q_forward(qnet: QuantizedNetwork, spikes: np.ndarray) -> list[np.ndarray]:
    """Run integer inference over [t_steps, input_dim] input spikes.

    Returns the per-block output spike trains, each [t_steps, units]. This
    is the bit-level reference the event-driven simulator must reproduce.
    """
    spikes = np.asarray(spikes)
    if spikes.ndim != 2 or spikes.shape[1] != qnet.input_dim:
        raise ValueError("expected [t_steps, input_dim] spikes")
    states = []
    for block in qnet.blocks:
        units = block.weights.raw.shape[1]
        if block.neuron_kind == "qmcleaky":
            states.append(QMCLeakyState.zeros(units))
        elif block.neuron_kind == "qlif":
            states.append(QLifState.zeros(units))
        else:
            raise ValueError(f"unknown neuron kind {block.neuron_kind!r}")
    outs = [np.zeros((spikes.shape[0], b.weights.raw.shape[1]), dtype=np.int64)
            for b in qnet.blocks]
    for t in range(spikes.shape[0]):
        x = spikes[t]
        for li, block in enumerate(qnet.blocks):
            acc = qdense_forward(x, block.weights, block.bias, qnet.state_fmt)
            if block.neuron_kind == "qmcleaky":
                params = QMCLeakyParams(block.threshold, qnet.state_fmt)
                states[li], spk = qmcleaky_step(states[li], params, acc.raw)
            else:
                params = QLifParams(block.threshold, qnet.state_fmt)
                states[li], spk = qlif_step(states[li], params, acc.raw)
            outs[li][t] = spk
            x = spk
    return outs


def quantize_network(model, weight_fmt: FixedPointFormat = WEIGHT_FORMAT,
                     state_fmt: FixedPointFormat = STATE_FORMAT,
                     threshold_fmt: FixedPointFormat = THRESHOLD_FORMAT,
                     ) -> QuantizedNetwork:
    """Post-training quantization of a trained float model into the integer
    inference form.

    The model must alternate weighted layers (dense/qdense) with activation
    layers whose neurons are mcleaky/qmcleaky (decays are replaced by the
    hardware 0.875 constant; train with 0.875 if losslessness matters) or
    lif. Dropout layers are identity at inference and are skipped.
    """
    from . import network as net_mod

    blocks = []
    pending = None
    for layer in model.layers:
        if isinstance(layer, (net_mod.DenseLayer, net_mod.QDenseLayer)):
            if pending is not None:
                raise ValueError("two weighted layers without an activation between")
            pending = layer
        elif isinstance(layer, net_mod.ActivationLayer):
            if pending is None:
                raise ValueError("activation layer without a preceding weighted layer")
            kind = {"mcleaky": "qmcleaky", "qmcleaky": "qmcleaky",
                    "lif": "qlif"}.get(layer.neuron)
            if kind is None:
                raise ValueError(f"neuron {layer.neuron!r} has no integer datapath")
            weights = quantize(pending.effective_weights(), weight_fmt)
            bias = None
            if pending.b is not None:
                bias = quantize(pending.effective_bias(), weight_fmt)
            thr = quantize(layer.threshold_value(), threshold_fmt)
            blocks.append(QuantizedBlock(weights, bias, kind, thr))
            pending = None
        elif isinstance(layer, net_mod.DropoutLayer):
            continue
        else:
            raise ValueError(f"layer kind {type(layer).__name__} not quantizable")
    if pending is not None:
        raise ValueError("trailing weighted layer without activation")
    return QuantizedNetwork(model.spec.input_dim, blocks, state_fmt)


def widths_format_map(width: int) -> FixedPointFormat:
    """Weight format used at a sweep width: all-but-one bits fractional."""
    return FixedPointFormat(width, width - 1)


def bitwidth_sweep(spec, split, widths=(2, 4, 8, 16, 32), epochs=50,
                   seed=0, lr=0.01, batch_size=24, loss="count_mse",
                   progress=None) -> list[dict]:
    """Train the same architecture once per weight width; returns rows of
    {width, epoch, test_accuracy} suitable for the sweep CSV."""
    from . import network as net_mod
    from . import training

    rows = []
    for width in widths:
        wspec = net_mod.NetworkSpec.from_dict(spec.to_dict())
        for layer in wspec.layers:
            if layer.kind == "qdense":
                layer.q_bits = width
        model = net_mod.Network.build(wspec, seed=seed)
        cfg = training.TrainConfig(epochs=epochs, batch_size=batch_size,
                                   lr=lr, loss=loss, seed=seed)
        history = training.train(model, split, cfg)
        for rec in history:
            rows.append({"width": width, "epoch": rec["epoch"],
                         "test_accuracy": rec["test_acc"]})
        if progress is not None:
            progress(width, history[-1]["test_acc"])
    return rows
