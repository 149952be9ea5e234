"""Trainable spiking network: layer specs, layer objects with explicit
forward caches and backward steps, and the time-unrolled wiring.

Training unrolls the network over t_steps. Each layer's step(x) consumes
one timestep and records what backward_step(gy) needs; backward runs the
timesteps in reverse, carrying state gradients across steps (backprop
through time). Thresholds are non-differentiable, so backward uses the
fast-sigmoid surrogate at every spike.

Two forward modes exist:
  hard   -- spikes are 0/1 via the Heaviside step (training and inference)
  smooth -- spikes are the surrogate primitive z/(1+k|z|) and quantizers
            are identity, making the whole network differentiable; the
            backward pass is the exact gradient of this relaxed forward,
            which is what finite-difference checks validate.
The backward code is identical in both modes; only the cached spike values
differ.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import quantization as qz
from .neurons import fast_sigmoid, heaviside, surrogate_grad
from .slstm import (GATES, SlstmParams, gate_preacts, retained_parameter_names,
                    sigmoid)

NEURON_KINDS = ("lif", "clif", "mcleaky", "qmcleaky")

DECAY_CLAMP = (0.0, 1.0)
THRESHOLD_CLAMP = (0.1, 10.0)


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------

@dataclass
class LayerSpec:
    """Declarative description of one layer.

    kind: dense | qdense | dropout | activation | slstm
    """

    kind: str
    units: int | None = None            # dense/qdense/slstm output width
    q_bits: int | None = None           # qdense weight width
    rate: float | None = None           # dropout probability
    neuron: str | None = None           # activation neuron kind
    beta: float | None = None           # activation: initial decay value(s)
    threshold: float = 1.0              # activation/slstm spike threshold
    grad_slope: float = 25.0            # surrogate slope k
    variant: str | None = None          # slstm variant
    input_decay_alpha: float = 0.5      # slstm dm trace decay init
    use_bias: bool = True               # dense/qdense
    learn: bool = True                  # neuron coefficient learnability
    learn_threshold: bool | None = None  # overrides `learn` for the threshold

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(**d)


@dataclass
class NetworkSpec:
    input_dim: int
    layers: list[LayerSpec]
    t_steps: int = 25

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "t_steps": self.t_steps,
                "layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(d["input_dim"], [LayerSpec.from_dict(l) for l in d["layers"]],
                   d.get("t_steps", 25))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "NetworkSpec":
        return cls.from_dict(json.loads(s))

    def validate(self) -> None:
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.t_steps < 1:
            raise ValueError("t_steps must be >= 1")
        if len(self.layers) < 2:
            raise ValueError("network needs at least dense(2) + activation")
        tail_dense, tail_act = self.layers[-2], self.layers[-1]
        if tail_dense.kind not in ("dense", "qdense") or tail_dense.units != 2:
            raise ValueError("second-to-last layer must be a 2-unit dense")
        if tail_act.kind != "activation":
            raise ValueError("last layer must be an activation layer")
        width = self.input_dim
        for spec in self.layers:
            width = layer_out_dim(spec, width)


def layer_out_dim(spec: LayerSpec, in_dim: int) -> int:
    if spec.kind in ("dense", "qdense", "slstm"):
        if not spec.units or spec.units < 1:
            raise ValueError(f"{spec.kind} layer needs positive units")
        return spec.units
    if spec.kind in ("dropout", "activation"):
        return in_dim
    raise ValueError(f"unknown layer kind {spec.kind!r}")


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

class DenseLayer:
    """y = x W + b with uniform +-1/sqrt(in_dim) init."""

    def __init__(self, in_dim: int, units: int, rng, use_bias=True):
        bound = 1.0 / np.sqrt(in_dim)
        self.in_dim, self.units = in_dim, units
        self.W = rng.uniform(-bound, bound, (in_dim, units))
        self.b = rng.uniform(-bound, bound, units) if use_bias else None
        self.grads = {k: np.zeros_like(v) for k, v in self.params().items()}
        self.stat_spikes = 0.0
        self._cache = []

    def params(self):
        p = {"W": self.W}
        if self.b is not None:
            p["b"] = self.b
        return p

    def clamps(self):
        return {}

    def effective_weights(self):
        return self.W

    def effective_bias(self):
        return self.b

    def begin(self, batch, train, smooth, rng):
        self._cache = []

    def forward_weights(self):
        return self.W

    def step(self, x):
        self.stat_spikes += float(x.sum())
        self._cache.append(x)
        W = self.forward_weights()
        y = x @ W
        if self.b is not None:
            y = y + self.effective_bias()
        return y

    def backward_step(self, gy):
        x = self._cache.pop()
        self.grads["W"] += x.T @ gy
        if self.b is not None:
            self.grads["b"] += gy.sum(axis=0)
        return gy @ self.forward_weights().T


class QDenseLayer(DenseLayer):
    """Dense with quantization-aware training: the forward uses weights
    snapped to the q_bits grid; the backward is a straight-through estimator
    into the float shadow weights. In smooth mode quantization is identity.
    """

    def __init__(self, in_dim, units, rng, q_bits=8, use_bias=True):
        super().__init__(in_dim, units, rng, use_bias)
        self.q_bits = q_bits
        self._smooth = False
        self._Wq = None
        self._bq = None

    @property
    def weight_fmt(self):
        return qz.FixedPointFormat(self.q_bits, self.q_bits - 1)

    def effective_weights(self):
        return qz.fake_quantize(self.W, self.weight_fmt)

    def effective_bias(self):
        if self.b is None:
            return None
        return qz.fake_quantize(self.b, self.weight_fmt)

    def begin(self, batch, train, smooth, rng):
        self._cache = []
        self._smooth = smooth
        self._Wq = self.W if smooth else self.effective_weights()
        self._bq = self.b if smooth else self.effective_bias()

    def forward_weights(self):
        return self._Wq if self._Wq is not None else self.effective_weights()

    def step(self, x):
        self.stat_spikes += float(x.sum())
        self._cache.append(x)
        y = x @ self.forward_weights()
        if self.b is not None:
            y = y + (self._bq if self._bq is not None else self.effective_bias())
        return y


class DropoutLayer:
    """Zeroes spikes with probability rate during training; identity at eval.

    No rescaling: outputs must stay binary spike trains.
    """

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = rate
        self.grads = {}
        self._masks = []
        self._active = False
        self._rng = None

    def params(self):
        return {}

    def clamps(self):
        return {}

    def begin(self, batch, train, smooth, rng):
        self._masks = []
        self._active = train and self.rate > 0.0
        self._rng = rng

    def step(self, x):
        if not self._active:
            self._masks.append(None)
            return x
        mask = (self._rng.random(x.shape) >= self.rate).astype(x.dtype)
        self._masks.append(mask)
        return x * mask

    def backward_step(self, gy):
        mask = self._masks.pop()
        return gy if mask is None else gy * mask


class ActivationLayer:
    """Spiking nonlinearity over a population of identical neurons.

    Holds the neuron coefficients as 0-d arrays so the optimizer can update
    them in place; which of them are trainable depends on the neuron kind
    (recurrent decays and thresholds learn, forward couplings stay fixed;
    qmcleaky pins every decay to the hardware 0.875 and fake-quantizes its
    threshold to 8 bits with a straight-through gradient).
    """

    QMC_DECAY = qz.DECAY_CONSTANT
    THRESHOLD_QFMT = qz.THRESHOLD_FORMAT

    def __init__(self, units: int, neuron: str, beta=None, threshold=1.0,
                 grad_slope=25.0, learn=True, learn_threshold=None):
        if neuron not in NEURON_KINDS:
            raise ValueError(f"unknown neuron kind {neuron!r}")
        self.units = units
        self.neuron = neuron
        self.grad_slope = float(grad_slope)
        v = lambda x: np.array(float(x))
        if neuron == "lif":
            self.coeffs = {"beta": v(0.875 if beta is None else beta)}
            trainable = []
        elif neuron == "clif":
            self.coeffs = {"alpha_syn": v(0.5 if beta is None else beta),
                           "beta": v(0.875 if beta is None else beta)}
            trainable = ["alpha_syn"]
        elif neuron == "mcleaky":
            d = dict(alpha_d1=0.2, alpha_d2=0.2, alpha_s=0.2,
                     beta_d1=0.875, beta_d2=0.875)
            if beta is not None:
                d = {k: float(beta) for k in d}
            self.coeffs = {k: v(x) for k, x in d.items()}
            trainable = ["alpha_d1", "alpha_d2", "alpha_s"]
        else:  # qmcleaky
            self.coeffs = {}
            trainable = []
        self.coeffs["threshold"] = v(threshold)
        if not learn:
            trainable = []
        if learn_threshold if learn_threshold is not None else learn:
            trainable = trainable + ["threshold"]
        self.trainable = trainable
        self.grads = {k: np.zeros_like(v) for k, v in self.params().items()}
        self._smooth = False
        self._state = None
        self._cache = []
        self._carry = None

    def params(self):
        return {name: self.coeffs[name] for name in self.trainable}

    def clamps(self):
        out = {}
        for name in self.trainable:
            out[name] = THRESHOLD_CLAMP if name == "threshold" else DECAY_CLAMP
        return out

    def threshold_value(self) -> float:
        """Threshold as hard-mode inference uses it (quantized for qmcleaky)."""
        thr = float(self.coeffs["threshold"])
        if self.neuron == "qmcleaky":
            return float(qz.fake_quantize(np.array(thr), self.THRESHOLD_QFMT))
        return thr

    def _forward_threshold(self) -> float:
        # smooth mode drops the quantizer so the relaxed forward is
        # differentiable in the raw threshold
        if self._smooth:
            return float(self.coeffs["threshold"])
        return self.threshold_value()

    def begin(self, batch, train, smooth, rng):
        self._smooth = smooth
        z = lambda: np.zeros((batch, self.units))
        if self.neuron == "clif":
            self._state = {"i": z(), "v": z(), "r": z()}
        elif self.neuron in ("mcleaky", "qmcleaky"):
            self._state = {"d1": z(), "d2": z(), "s": z(), "r": z()}
        else:
            self._state = {"v": z(), "r": z()}
        self._cache = []
        self._carry = None

    def _spike(self, z):
        if self._smooth:
            return fast_sigmoid(z, self.grad_slope)
        return heaviside(z)

    def _c(self, name) -> float:
        return float(self.coeffs[name])

    def step(self, x):
        thr = self._forward_threshold()
        st = self._state
        reset = st["r"] * thr
        if self.neuron == "lif":
            v = self._c("beta") * st["v"] + x - reset
            z = v - thr
            y = self._spike(z)
            self._cache.append((st["v"], st["r"], z, y))
            self._state = {"v": v, "r": y}
        elif self.neuron == "clif":
            i = self._c("alpha_syn") * st["i"] + x
            v = self._c("beta") * st["v"] + i - reset
            z = v - thr
            y = self._spike(z)
            self._cache.append((st["i"], st["v"], st["r"], z, y))
            self._state = {"i": i, "v": v, "r": y}
        else:
            if self.neuron == "qmcleaky":
                a1 = a2 = as_ = b1 = b2 = self.QMC_DECAY
            else:
                a1, a2, as_ = self._c("alpha_d1"), self._c("alpha_d2"), self._c("alpha_s")
                b1, b2 = self._c("beta_d1"), self._c("beta_d2")
            d2 = a2 * st["d2"] + a1 * st["d1"] + x
            d1 = a1 * st["d1"] + b2 * d2 + as_ * st["s"]
            s = as_ * st["s"] + b1 * d1 - reset
            z = s - thr
            y = self._spike(z)
            self._cache.append((st["d1"], st["d2"], st["s"], st["r"], d1, d2, z, y))
            self._state = {"d1": d1, "d2": d2, "s": s, "r": y}
        return y

    def backward_step(self, gy):
        thr = self._forward_threshold()
        k = self.grad_slope
        learn = set(self.trainable)

        def acc(name, val):
            if name in learn:
                self.grads[name] += val

        if self.neuron == "lif":
            v_prev, r_prev, z, y = self._cache.pop()
            c = self._carry or {"v": 0.0, "r": 0.0}
            gy_tot = gy + c["r"]
            gz = gy_tot * surrogate_grad(z, k)
            gv = gz + c["v"]
            beta = self._c("beta")
            acc("threshold", -float(gz.sum()) - float((gv * r_prev).sum()))
            acc("beta", float((gv * v_prev).sum()))
            self._carry = {"v": gv * beta, "r": -thr * gv}
            return gv
        if self.neuron == "clif":
            i_prev, v_prev, r_prev, z, y = self._cache.pop()
            c = self._carry or {"i": 0.0, "v": 0.0, "r": 0.0}
            gy_tot = gy + c["r"]
            gz = gy_tot * surrogate_grad(z, k)
            gv = gz + c["v"]
            gi = gv + c["i"]
            a, beta = self._c("alpha_syn"), self._c("beta")
            acc("alpha_syn", float((gi * i_prev).sum()))
            acc("beta", float((gv * v_prev).sum()))
            acc("threshold", -float(gz.sum()) - float((gv * r_prev).sum()))
            self._carry = {"i": gi * a, "v": gv * beta, "r": -thr * gv}
            return gi
        # mcleaky / qmcleaky
        d1_prev, d2_prev, s_prev, r_prev, d1_new, d2_new, z, y = self._cache.pop()
        c = self._carry or {"d1": 0.0, "d2": 0.0, "s": 0.0, "r": 0.0}
        if self.neuron == "qmcleaky":
            a1 = a2 = as_ = b1 = b2 = self.QMC_DECAY
        else:
            a1, a2, as_ = self._c("alpha_d1"), self._c("alpha_d2"), self._c("alpha_s")
            b1, b2 = self._c("beta_d1"), self._c("beta_d2")
        gy_tot = gy + c["r"]
        gz = gy_tot * surrogate_grad(z, k)
        gs = gz + c["s"]
        acc("alpha_s", float((gs * s_prev).sum()))
        acc("beta_d1", float((gs * d1_new).sum()))
        acc("threshold", -float(gz.sum()) - float((gs * r_prev).sum()))
        gd1 = gs * b1 + c["d1"]
        acc("alpha_d1", float((gd1 * d1_prev).sum()))
        acc("beta_d2", float((gd1 * d2_new).sum()))
        acc("alpha_s", float((gd1 * s_prev).sum()))
        gd2 = gd1 * b2 + c["d2"]
        acc("alpha_d2", float((gd2 * d2_prev).sum()))
        acc("alpha_d1", float((gd2 * d1_prev).sum()))
        self._carry = {
            "d1": gd1 * a1 + gd2 * a1,
            "d2": gd2 * a2,
            "s": gs * as_ + gd1 * as_,
            "r": -thr * gs,
        }
        return gd2


class SlstmLayer:
    """Spiking LSTM layer wrapping the cell family from mcsnn.slstm."""

    def __init__(self, in_dim: int, units: int, rng, variant="full",
                 threshold=1.0, grad_slope=25.0, input_decay_alpha=0.5):
        seed = int(rng.integers(2**31 - 1))
        self.p = SlstmParams.init(variant, in_dim, units, seed,
                                  threshold=threshold,
                                  input_decay_alpha=input_decay_alpha)
        self.in_dim, self.units = in_dim, units
        self.variant = variant
        self.grad_slope = float(grad_slope)
        self.thr = np.array(float(threshold))
        self._retained = retained_parameter_names(variant)
        self.grads = {k: np.zeros_like(v) for k, v in self.params().items()}
        self.stat_spikes = 0.0
        self._smooth = False
        self._cache = []
        self._carry = None
        self._state = None

    def params(self):
        out = {name: getattr(self.p, name) for name in self._retained}
        out["threshold"] = self.thr
        return out

    def clamps(self):
        out = {"threshold": THRESHOLD_CLAMP}
        if "input_decay" in self._retained:
            out["input_decay"] = DECAY_CLAMP
        return out

    def _uses(self, gate: str) -> tuple[bool, bool, bool, bool]:
        """(input weights, input bias, hidden weights, hidden bias)."""
        v = self.variant
        if v in ("full", "dm") or (v == "v1" and gate == "g"):
            return True, True, True, True
        if v == "v1":
            return False, True, True, True
        if v == "v2":
            return False, False, True, False
        return False, False, False, True  # v3

    def begin(self, batch, train, smooth, rng):
        self._smooth = smooth
        z = lambda dim: np.zeros((batch, dim))
        self._state = {"mem": z(self.units), "cell": z(self.units)}
        if self.variant == "dm":
            self._state["trace"] = z(self.in_dim)
        self._cache = []
        self._carry = None

    def step(self, x):
        self.stat_spikes += float(x.sum())
        st = self._state
        trace_prev = st.get("trace")
        if self.variant == "dm":
            x_used = self.p.input_decay * trace_prev + x + self.p.input_offset
            st["trace"] = x_used
        else:
            x_used = x
        mem_prev, cell_prev = st["mem"], st["cell"]
        pre = gate_preacts(self.p, x_used, mem_prev)
        i, f, o = sigmoid(pre["i"]), sigmoid(pre["f"]), sigmoid(pre["o"])
        g = np.tanh(pre["g"])
        cell = f * cell_prev + i * g
        tc = np.tanh(cell)
        mem_raw = o * tc
        thr = float(self.thr)
        z_ = mem_raw - thr
        if self._smooth:
            y = fast_sigmoid(z_, self.grad_slope)
        else:
            y = heaviside(z_)
        st["mem"] = mem_raw - y * thr
        st["cell"] = cell
        self._cache.append((x_used, trace_prev, mem_prev, cell_prev,
                            i, f, o, g, tc, z_, y))
        return y

    def backward_step(self, gy):
        (x_used, trace_prev, mem_prev, cell_prev,
         i, f, o, g, tc, z_, y) = self._cache.pop()
        thr = float(self.thr)
        c = self._carry or {"mem": 0.0, "cell": 0.0, "trace": 0.0}
        gy_tot = gy + np.asarray(c["mem"]) * (-thr)
        gz = gy_tot * surrogate_grad(z_, self.grad_slope)
        g_mraw = np.asarray(c["mem"]) + gz
        g_thr = -float(gz.sum()) - float((np.asarray(c["mem"]) * y).sum())
        self.grads["threshold"] += g_thr
        go = g_mraw * tc
        g_cell = g_mraw * o * (1.0 - tc * tc) + c["cell"]
        gf = g_cell * cell_prev
        gi = g_cell * g
        gg = g_cell * i
        c_cell = g_cell * f
        gpre = {
            "i": gi * i * (1.0 - i),
            "f": gf * f * (1.0 - f),
            "o": go * o * (1.0 - o),
            "g": gg * (1.0 - g * g),
        }
        gx_used = np.zeros_like(x_used, dtype=np.float64)
        c_mem = np.zeros_like(mem_prev)
        for gate in GATES:
            use_wi, use_bi, use_wh, use_bh = self._uses(gate)
            gp = gpre[gate]
            if use_wi:
                name = f"W_i{gate}"
                if name in self.grads:
                    self.grads[name] += x_used.T @ gp
                gx_used += gp @ getattr(self.p, name).T
            if use_bi:
                self.grads[f"b_i{gate}"] += gp.sum(axis=0)
            if use_wh:
                self.grads[f"W_h{gate}"] += mem_prev.T @ gp
                c_mem += gp @ getattr(self.p, f"W_h{gate}").T
            if use_bh:
                self.grads[f"b_h{gate}"] += gp.sum(axis=0)
        if self.variant == "dm":
            # x_used doubles as the stored trace, so it also receives the
            # carry from the next step's trace update
            g_xu = gx_used + np.asarray(c["trace"])
            self.grads["input_decay"] += (g_xu * trace_prev).sum(axis=0)
            self.grads["input_offset"] += g_xu.sum(axis=0)
            gx = g_xu
            c_trace = g_xu * self.p.input_decay
        else:
            gx = gx_used
            c_trace = 0.0
        self._carry = {"mem": c_mem, "cell": c_cell, "trace": c_trace}
        return gx


def build_layer(spec: LayerSpec, in_dim: int, rng):
    if spec.kind == "dense":
        return DenseLayer(in_dim, spec.units, rng, spec.use_bias)
    if spec.kind == "qdense":
        return QDenseLayer(in_dim, spec.units, rng, spec.q_bits or 8,
                           spec.use_bias)
    if spec.kind == "dropout":
        return DropoutLayer(spec.rate or 0.0)
    if spec.kind == "activation":
        return ActivationLayer(in_dim, spec.neuron, spec.beta, spec.threshold,
                               spec.grad_slope, spec.learn,
                               spec.learn_threshold)
    if spec.kind == "slstm":
        return SlstmLayer(in_dim, spec.units, rng, spec.variant or "full",
                          spec.threshold, spec.grad_slope,
                          spec.input_decay_alpha)
    raise ValueError(f"unknown layer kind {spec.kind!r}")


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------

class Network:
    """An ordered stack of layers unrolled over time."""

    def __init__(self, spec: NetworkSpec, layers: list):
        self.spec = spec
        self.layers = layers

    @classmethod
    def build(cls, spec: NetworkSpec, seed: int, enforce_classifier=True) -> "Network":
        if enforce_classifier:
            spec.validate()
        rng = np.random.default_rng(seed)
        layers, width = [], spec.input_dim
        for lspec in spec.layers:
            layers.append(build_layer(lspec, width, rng))
            width = layer_out_dim(lspec, width)
        net = cls(spec, layers)
        net.zero_grads()
        return net

    # -- parameter plumbing -------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        """Canonical name -> array mapping; insertion order is the flat
        serialization order (layer index, then the layer's own order)."""
        out = {}
        for idx, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                out[f"{idx}.{name}"] = arr
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for idx, layer in enumerate(self.layers):
            for name in layer.params():
                out[f"{idx}.{name}"] = layer.grads[name]
        return out

    def clamps(self) -> dict[str, tuple[float, float]]:
        out = {}
        for idx, layer in enumerate(self.layers):
            for name, rng_ in layer.clamps().items():
                out[f"{idx}.{name}"] = rng_
        return out

    def zero_grads(self) -> None:
        for layer in self.layers:
            layer.grads = {name: np.zeros_like(arr)
                           for name, arr in layer.params().items()}

    def parameter_count(self) -> int:
        return sum(arr.size for arr in self.parameters().values())

    def flat_parameters(self) -> np.ndarray:
        parts = [np.asarray(a, dtype=np.float64).ravel()
                 for a in self.parameters().values()]
        return np.concatenate(parts) if parts else np.zeros(0)

    def load_flat_parameters(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.parameter_count():
            raise ValueError(
                f"parameter block has {flat.size} values, "
                f"model needs {self.parameter_count()}")
        off = 0
        for arr in self.parameters().values():
            n = arr.size
            arr[...] = flat[off : off + n].reshape(arr.shape)
            off += n

    # -- running ------------------------------------------------------------

    def forward(self, spikes: np.ndarray, train=False, smooth=False,
                rng=None) -> np.ndarray:
        """Unroll over [t_steps, batch, features]; returns [t_steps, batch, out]."""
        spikes = np.asarray(spikes, dtype=np.float64)
        if spikes.ndim != 3:
            raise ValueError("forward expects [t_steps, batch, features]")
        t_steps, batch, width = spikes.shape
        if width != self.spec.input_dim:
            raise ValueError(
                f"input features {width} != spec input_dim {self.spec.input_dim}")
        if train and any(isinstance(l, DropoutLayer) for l in self.layers) \
                and rng is None:
            rng = np.random.default_rng(0)
        for layer in self.layers:
            layer.begin(batch, train, smooth, rng)
        outs = []
        for t in range(t_steps):
            x = spikes[t]
            for layer in self.layers:
                x = layer.step(x)
            outs.append(x)
        return np.stack(outs)

    def backward(self, grad_out: np.ndarray) -> None:
        """Consume [t_steps, batch, out] loss gradients in reverse time."""
        for t in range(grad_out.shape[0] - 1, -1, -1):
            g = grad_out[t]
            for layer in reversed(self.layers):
                g = layer.backward_step(g)

    # -- spike bookkeeping for the energy model -----------------------------

    def reset_stats(self) -> None:
        for layer in self.layers:
            if hasattr(layer, "stat_spikes"):
                layer.stat_spikes = 0.0

    def spike_stats(self) -> list[dict]:
        """Per weighted layer: input spike totals and synapse counts since
        the last reset_stats()."""
        out = []
        for idx, layer in enumerate(self.layers):
            if isinstance(layer, DenseLayer):
                out.append({"layer_index": idx,
                            "n_input_neurons": layer.in_dim,
                            "n_output_neurons": layer.units,
                            "input_spikes_total": layer.stat_spikes,
                            "n_synapses": layer.in_dim * layer.units})
            elif isinstance(layer, SlstmLayer):
                syn = 4 * (layer.in_dim * layer.units + layer.units ** 2)
                out.append({"layer_index": idx,
                            "n_input_neurons": layer.in_dim,
                            "n_output_neurons": layer.units,
                            "input_spikes_total": layer.stat_spikes,
                            "n_synapses": syn})
        return out
