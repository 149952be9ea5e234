"""Spike-ratio energy model.

Estimates the energy of a spiking network relative to an equivalent
analog (MAC-based) network from recorded spike statistics. A synapse in
the analog network performs one multiply-accumulate per presentation; in
the spiking network it performs one accumulate per presynaptic spike.
With lambda = E_MAC / E_ACC, the energy ratio of a layer is its spike
ratio divided by lambda, and the network ratio weights layers by their
synapse counts (total accumulate ops over total MAC ops).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import NetworkSpec, layer_out_dim

LAMBDA_DEFAULT = 5.0           # E_MAC / E_ACC for the target technology
LATENCY_RATIO_DEFAULT = 2.085  # ANN-over-SNN latency assumption for EDP


@dataclass
class LayerSpikeStats:
    """Spike traffic into one weighted layer over an evaluation run."""

    layer_index: int
    n_input_neurons: int
    n_output_neurons: int
    input_spikes_total: float
    n_synapses: int

    def __post_init__(self):
        if self.n_input_neurons <= 0:
            raise ValueError("layer needs at least one input neuron")
        if self.input_spikes_total < 0:
            raise ValueError("spike counts cannot be negative")


@dataclass
class EnergyReport:
    per_layer_spike_ratio: list[float]
    network_spike_ratio: float
    lam: float
    energy_ratio_snn_over_ann: float
    efficiency: float
    edp_ratio: float
    latency_ratio: float

    def to_text(self) -> str:
        lines = [
            "energy report",
            f"  lambda (E_MAC/E_ACC): {self.lam:g}",
            f"  latency ratio (ANN/SNN): {self.latency_ratio:g}",
        ]
        for i, sr in enumerate(self.per_layer_spike_ratio):
            lines.append(f"  layer {i} spike ratio: {sr:.6g}")
        lines += [
            f"  network spike ratio: {self.network_spike_ratio:.6g}",
            f"  energy ratio (SNN/ANN): {self.energy_ratio_snn_over_ann:.6g}",
            f"  efficiency: {self.efficiency:.6g}x",
            f"  EDP gain: {self.edp_ratio:.6g}x",
        ]
        return "\n".join(lines)


def spike_ratio(stats: LayerSpikeStats, t_windows: int) -> float:
    """Average spikes per presynaptic neuron per window presentation.

    Can exceed 1 when windows span multiple timesteps (every neuron
    firing at every step of a T-step window gives T).
    """
    if t_windows <= 0:
        raise ValueError("t_windows must be positive")
    return float(stats.input_spikes_total) / (t_windows * stats.n_input_neurons)


def energy_ratio(per_layer: list[LayerSpikeStats],
                 lam: float = LAMBDA_DEFAULT,
                 t_windows: int = 1) -> tuple[float, float, float]:
    """Network (energy_ratio, efficiency, network_spike_ratio).

    Accumulate ops = spikes into a layer times its fan-out; MAC ops = its
    synapse count. Summing both over layers makes the network spike ratio
    a synapse-weighted mean of the per-layer ratios.
    """
    if not per_layer:
        raise ValueError("no layer statistics")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    acc_ops = sum(spike_ratio(s, t_windows) * s.n_input_neurons
                  * s.n_output_neurons for s in per_layer)
    mac_ops = sum(s.n_synapses for s in per_layer)
    network_sr = acc_ops / mac_ops
    ratio = network_sr / lam
    efficiency = np.inf if ratio == 0 else 1.0 / ratio
    return ratio, efficiency, network_sr


def edp_ratio(report: EnergyReport, latency_ratio_ann_over_snn: float) -> float:
    """Energy-delay-product gain over the analog reference."""
    if latency_ratio_ann_over_snn <= 0:
        raise ValueError("latency ratio must be positive")
    return report.efficiency * latency_ratio_ann_over_snn


def ann_reference_macs(spec: NetworkSpec) -> int:
    """MACs per presentation of the equivalent analog network.

    One MAC per synapse of each weighted feed-forward layer; recurrent
    layers have no single-MAC equivalence and are rejected.
    """
    total = 0
    width = spec.input_dim
    for layer in spec.layers:
        if layer.kind == "slstm":
            raise ValueError("recurrent layers have no MAC equivalent")
        if layer.kind in ("dense", "qdense"):
            total += width * layer.units
        width = layer_out_dim(layer, width)
    return total


def energy_report(per_layer: list[LayerSpikeStats] | list[dict],
                  t_windows: int,
                  lam: float = LAMBDA_DEFAULT,
                  latency_ratio: float = LATENCY_RATIO_DEFAULT) -> EnergyReport:
    """Assemble the full report from per-layer spike statistics.

    Accepts the dict records produced by Network.spike_stats directly.
    """
    stats = [s if isinstance(s, LayerSpikeStats) else LayerSpikeStats(**s)
             for s in per_layer]
    ratio, efficiency, network_sr = energy_ratio(stats, lam, t_windows)
    report = EnergyReport(
        per_layer_spike_ratio=[spike_ratio(s, t_windows) for s in stats],
        network_spike_ratio=network_sr,
        lam=lam,
        energy_ratio_snn_over_ann=ratio,
        efficiency=efficiency,
        edp_ratio=0.0,
        latency_ratio=latency_ratio,
    )
    report.edp_ratio = edp_ratio(report, latency_ratio)
    return report
