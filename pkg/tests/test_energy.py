"""Spike-ratio and energy-report tests."""

import numpy as np
import pytest

from mcsnn.energy import (LAMBDA_DEFAULT, LayerSpikeStats, ann_reference_macs,
                          edp_ratio, energy_ratio, energy_report, spike_ratio)
from mcsnn.network import LayerSpec, NetworkSpec


def stats(n_in, n_out, spikes, idx=0):
    return LayerSpikeStats(layer_index=idx, n_input_neurons=n_in,
                           n_output_neurons=n_out, input_spikes_total=spikes,
                           n_synapses=n_in * n_out)


def test_spike_ratio_direct():
    assert spike_ratio(stats(100, 10, 40), 1) == pytest.approx(0.4)


def test_spike_ratio_zero_spikes():
    assert spike_ratio(stats(100, 10, 0), 5) == 0.0


def test_spike_ratio_saturated_exceeds_one():
    # every neuron fires at every one of T timesteps of a single window
    t = 25
    assert spike_ratio(stats(100, 10, t * 100), 1) == pytest.approx(t)


def test_spike_ratio_rejects_bad_inputs():
    with pytest.raises(ValueError):
        LayerSpikeStats(0, 0, 4, 10, 0)
    with pytest.raises(ValueError):
        spike_ratio(stats(10, 2, 5), 0)
    with pytest.raises(ValueError):
        LayerSpikeStats(0, 10, 4, -1, 40)


def test_energy_ratio_single_layer_oracle():
    # SR = 0.4, lambda = 5 -> 0.08 energy ratio, 12.5x efficiency
    ratio, eff, sr = energy_ratio([stats(100, 10, 40)], lam=5.0)
    assert ratio == pytest.approx(0.08, abs=1e-9)
    assert eff == pytest.approx(12.5, abs=1e-9)
    assert sr == pytest.approx(0.4, abs=1e-9)


def test_energy_ratio_fanout_invariant_for_single_layer():
    a = energy_ratio([stats(100, 1, 40)], lam=5.0)[0]
    b = energy_ratio([stats(100, 7, 40)], lam=5.0)[0]
    assert a == pytest.approx(b, abs=1e-12)


def test_energy_ratio_parity_point():
    # spike ratio equal to lambda sits exactly at ANN parity
    lam = 5.0
    ratio, eff, _ = energy_ratio([stats(10, 3, 50)], lam=lam)
    assert ratio == pytest.approx(1.0, abs=1e-12)
    assert eff == pytest.approx(1.0, abs=1e-12)


def test_energy_ratio_default_lambda():
    assert LAMBDA_DEFAULT == 5.0
    assert energy_ratio([stats(10, 2, 10)])[0] == pytest.approx(0.2)


def test_energy_ratio_errors():
    with pytest.raises(ValueError):
        energy_ratio([])
    with pytest.raises(ValueError):
        energy_ratio([stats(10, 2, 5)], lam=0.0)


def test_energy_ratio_linear_in_spikes_and_inverse_in_lambda():
    rng = np.random.default_rng(11)
    for _ in range(50):
        layers = [stats(int(rng.integers(1, 60)), int(rng.integers(1, 60)),
                        float(rng.integers(0, 500)), i)
                  for i in range(rng.integers(1, 5))]
        lam = float(rng.uniform(0.5, 10))
        t_w = int(rng.integers(1, 8))
        base = energy_ratio(layers, lam, t_w)[0]
        doubled = [stats(s.n_input_neurons, s.n_output_neurons,
                         2 * s.input_spikes_total, s.layer_index)
                   for s in layers]
        assert energy_ratio(doubled, lam, t_w)[0] == pytest.approx(2 * base)
        assert energy_ratio(layers, 2 * lam, t_w)[0] == pytest.approx(base / 2)


def test_report_invariants_and_edp():
    rng = np.random.default_rng(3)
    for _ in range(30):
        layers = [stats(int(rng.integers(1, 40)), int(rng.integers(1, 40)),
                        float(rng.integers(1, 300)), i)
                  for i in range(rng.integers(1, 4))]
        rep = energy_report(layers, t_windows=int(rng.integers(1, 6)),
                            lam=float(rng.uniform(1, 8)),
                            latency_ratio=float(rng.uniform(0.5, 4)))
        assert rep.efficiency * rep.energy_ratio_snn_over_ann == pytest.approx(
            1.0, abs=1e-12)
        assert rep.edp_ratio == pytest.approx(
            rep.efficiency * rep.latency_ratio, abs=1e-12)
        assert len(rep.per_layer_spike_ratio) == len(layers)


def test_edp_table_values():
    rep = energy_report([stats(100, 10, 40)], t_windows=1, lam=5.0,
                        latency_ratio=2.085)
    assert rep.efficiency == pytest.approx(12.5)
    # the documented operating points
    rep.efficiency = 25.12
    assert edp_ratio(rep, 2.085) == pytest.approx(52.37, abs=0.05)
    assert edp_ratio(rep, 1.0) == pytest.approx(25.12, abs=1e-12)
    rep.efficiency = 39.2
    assert edp_ratio(rep, 2.089) == pytest.approx(81.9, abs=0.05)


def test_all_silent_network_ratio_zero():
    rep = energy_report([stats(30, 5, 0), stats(5, 2, 0, idx=1)], t_windows=3)
    assert rep.network_spike_ratio == 0.0
    assert rep.energy_ratio_snn_over_ann == 0.0
    assert rep.per_layer_spike_ratio == [0.0, 0.0]
    assert np.isinf(rep.efficiency)


def test_ann_reference_macs():
    spec = NetworkSpec(256, [
        LayerSpec("dense", units=64),
        LayerSpec("activation", neuron="lif"),
        LayerSpec("dense", units=2),
        LayerSpec("activation", neuron="lif"),
    ], t_steps=25)
    assert ann_reference_macs(spec) == 256 * 64 + 64 * 2
    tiny = NetworkSpec(2, [LayerSpec("dense", units=2),
                           LayerSpec("activation", neuron="lif")], t_steps=2)
    assert ann_reference_macs(tiny) == 4
    none = NetworkSpec(4, [LayerSpec("dropout", rate=0.1),
                           LayerSpec("activation", neuron="lif")], t_steps=2)
    assert ann_reference_macs(none) == 0
    rec = NetworkSpec(4, [LayerSpec("slstm", units=3),
                          LayerSpec("dense", units=2),
                          LayerSpec("activation", neuron="lif")], t_steps=2)
    with pytest.raises(ValueError):
        ann_reference_macs(rec)


def test_report_accepts_network_stat_dicts():
    from mcsnn.encoding import encode_windows
    from mcsnn.network import Network
    from mcsnn import data

    ds = data.synth_dataset(10, 8, seed=1)
    spec = NetworkSpec(8, [
        LayerSpec("dense", units=4),
        LayerSpec("activation", neuron="mcleaky", threshold=0.3),
        LayerSpec("dense", units=2),
        LayerSpec("activation", neuron="mcleaky", threshold=0.3),
    ], t_steps=6)
    net = Network.build(spec, seed=0)
    net.reset_stats()
    net.forward(encode_windows(ds.windows, 6, seed=0))
    rep = energy_report(net.spike_stats(), t_windows=ds.n_windows)
    assert rep.energy_ratio_snn_over_ann >= 0.0
    assert len(rep.per_layer_spike_ratio) == 2
    # layer 0 sees the raw encoded input spikes
    enc = encode_windows(ds.windows, 6, seed=0)
    assert rep.per_layer_spike_ratio[0] == pytest.approx(
        enc.sum() / (10 * 8))
