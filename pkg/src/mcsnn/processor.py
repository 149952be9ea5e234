"""Event-driven simulator of the 256-neuron spike processor.

The simulated fabric time-multiplexes 256 neurons over shared SRAM-style
memories: one 16-byte record per neuron and a 256x256 array of signed 8-bit
synapse weights. Spikes travel as 14-bit AER packets

    packed = (neuron_addr << 6) | (burst_len_minus1 << 3) | isi

with an 8-bit source address, a 3-bit burst length minus one, and a 3-bit
inter-spike interval counted in simulator ticks (sub-steps of one time
step). The controller accumulates weight rows for every packet belonging to
the current time step; a packet carrying a later time step (or an explicit
close) ends the step, at which point every configured neuron applies its
leak, threshold compare, spike emission, and subtraction reset. Neurons are
swept in ascending address order and internally generated spikes propagate
within the same sweep, so a layered model whose layers occupy ascending
address ranges behaves exactly like the layer-by-layer integer reference
in the quantization module, spike for spike.

Memory image file (little-endian throughout):

    offset  size   field
    0       4      magic "MCQI"
    4       2      version (currently 1)
    6       1      state format fractional bits (16-bit states)
    7       1      threshold format fractional bits (8-bit thresholds)
    8       1      weight format fractional bits (8-bit weights)
    9       1      reserved (zero)
    10      4096   256 neuron records, 16 bytes each:
                       kind u8 (0 none, 1 lif, 2 mcleaky), n_compartments u8,
                       last_spike u8, threshold i8, v_d2 i16, v_d1 i16,
                       v_soma i16, 6 reserved bytes (zero)
    4106    65536  synapse weights i8, row-major [source, target]

AER stream file: a bare sequence of (time_step u32, packed u16) records.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .quantization import (
    STATE_FORMAT,
    THRESHOLD_FORMAT,
    WEIGHT_FORMAT,
    FixedPointFormat,
    QuantizedNetwork,
    decay_approx,
    rescale_raw,
)

N_NEURONS = 256
FIFO_CAPACITY_DEFAULT = 1024

KIND_NONE = 0
KIND_LIF = 1
KIND_MCLEAKY = 2
_KIND_COMPARTMENTS = {KIND_NONE: 0, KIND_LIF: 1, KIND_MCLEAKY: 3}

IMAGE_MAGIC = b"MCQI"
IMAGE_VERSION = 1
_HEADER = struct.Struct("<4sHBBBB")
_NEURON_RECORD = struct.Struct("<BBBbhhh6x")
IMAGE_SIZE = _HEADER.size + N_NEURONS * _NEURON_RECORD.size + N_NEURONS * N_NEURONS
_STREAM_RECORD = struct.Struct("<IH")


class FieldOverflow(ValueError):
    """A packet field does not fit its bit width."""


class StreamOrderError(ValueError):
    """The input stream moved backwards in time."""


class FifoOverflow(RuntimeError):
    """A scheduler FIFO exceeded its capacity."""

    def __init__(self, message: str, time_step: int):
        super().__init__(message)
        self.time_step = time_step


# ---------------------------------------------------------------------------
# AER packets
# ---------------------------------------------------------------------------

def _check_field(name: str, value: int, bits: int) -> None:
    if not isinstance(value, (int, np.integer)):
        raise TypeError(f"{name} must be an int, got {type(value).__name__}")
    if not 0 <= value < (1 << bits):
        raise FieldOverflow(f"{name}={value} does not fit in {bits} bits")


@dataclass(frozen=True)
class AerPacket:
    """One 14-bit address-event: source address plus burst descriptor."""

    neuron_addr: int
    burst_len_minus1: int = 0
    isi: int = 0

    def __post_init__(self):
        _check_field("neuron_addr", self.neuron_addr, 8)
        _check_field("burst_len_minus1", self.burst_len_minus1, 3)
        _check_field("isi", self.isi, 3)

    @property
    def packed(self) -> int:
        return (self.neuron_addr << 6) | (self.burst_len_minus1 << 3) | self.isi

    @property
    def n_spikes(self) -> int:
        return self.burst_len_minus1 + 1


def pack_packet(neuron_addr: int, burst_len_minus1: int = 0, isi: int = 0) -> AerPacket:
    return AerPacket(int(neuron_addr), int(burst_len_minus1), int(isi))


def unpack_packet(word: int) -> AerPacket:
    _check_field("packed word", word, 14)
    word = int(word)
    return AerPacket(word >> 6, (word >> 3) & 0b111, word & 0b111)


# ---------------------------------------------------------------------------
# Memories
# ---------------------------------------------------------------------------

@dataclass
class NeuronMemoryWord:
    """One record of the neuron memory.

    Potentials are raw integers in the state format, the threshold is raw in
    the threshold format. `drive` is the soma input latched by
    dendrite_update for the following soma_update; it is transient state of
    the datapath, not part of the stored record.
    """

    kind: int = KIND_NONE
    n_compartments: int = 0
    last_spike: int = 0
    threshold: int = 0
    v_d2: int = 0
    v_d1: int = 0
    v_soma: int = 0
    drive: int = 0

    def validate(self, state_fmt: FixedPointFormat, threshold_fmt: FixedPointFormat) -> None:
        if self.kind not in _KIND_COMPARTMENTS:
            raise ValueError(f"unknown neuron kind {self.kind}")
        if self.n_compartments != _KIND_COMPARTMENTS[self.kind]:
            raise ValueError(
                f"kind {self.kind} requires {_KIND_COMPARTMENTS[self.kind]} "
                f"compartments, record says {self.n_compartments}")
        if self.last_spike not in (0, 1):
            raise ValueError(f"last_spike flag must be 0 or 1, got {self.last_spike}")
        if not threshold_fmt.raw_min <= self.threshold <= threshold_fmt.raw_max:
            raise ValueError(f"threshold {self.threshold} out of 8-bit range")
        for name in ("v_d2", "v_d1", "v_soma"):
            v = getattr(self, name)
            if not state_fmt.raw_min <= v <= state_fmt.raw_max:
                raise ValueError(f"{name}={v} out of state range")

    def copy(self) -> "NeuronMemoryWord":
        return NeuronMemoryWord(self.kind, self.n_compartments, self.last_spike,
                                self.threshold, self.v_d2, self.v_d1, self.v_soma)


@dataclass
class MemoryImage:
    """Neuron and synapse memories plus the fixed-point formats they use."""

    neurons: list
    synapses: np.ndarray
    state_fmt: FixedPointFormat = STATE_FORMAT
    threshold_fmt: FixedPointFormat = THRESHOLD_FORMAT
    weight_fmt: FixedPointFormat = WEIGHT_FORMAT

    def validate(self) -> None:
        if len(self.neurons) != N_NEURONS:
            raise ValueError(f"expected {N_NEURONS} neuron records, got {len(self.neurons)}")
        syn = np.asarray(self.synapses)
        if syn.shape != (N_NEURONS, N_NEURONS):
            raise ValueError(f"synapse memory must be {N_NEURONS}x{N_NEURONS}, got {syn.shape}")
        if syn.min(initial=0) < -128 or syn.max(initial=0) > 127:
            raise ValueError("weight out of 8-bit range")
        if self.state_fmt.total_bits != 16:
            raise ValueError("state format must be 16 bits wide")
        if self.threshold_fmt.total_bits != 8:
            raise ValueError("threshold format must be 8 bits wide")
        if self.weight_fmt.total_bits != 8:
            raise ValueError("weight format must be 8 bits wide")
        for word in self.neurons:
            word.validate(self.state_fmt, self.threshold_fmt)

    def to_bytes(self) -> bytes:
        self.validate()
        out = [_HEADER.pack(IMAGE_MAGIC, IMAGE_VERSION, self.state_fmt.frac_bits,
                            self.threshold_fmt.frac_bits, self.weight_fmt.frac_bits, 0)]
        for w in self.neurons:
            out.append(_NEURON_RECORD.pack(w.kind, w.n_compartments, w.last_spike,
                                           w.threshold, w.v_d2, w.v_d1, w.v_soma))
        out.append(np.asarray(self.synapses, dtype=np.int8).tobytes(order="C"))
        return b"".join(out)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "MemoryImage":
        if len(blob) < _HEADER.size or blob[:4] != IMAGE_MAGIC:
            raise ValueError("bad magic: not a memory image")
        if len(blob) != IMAGE_SIZE:
            raise ValueError(f"image size {len(blob)} != expected {IMAGE_SIZE}")
        magic, version, state_frac, thr_frac, weight_frac, _ = _HEADER.unpack_from(blob, 0)
        if version != IMAGE_VERSION:
            raise ValueError(f"unsupported image version {version}")
        neurons = []
        off = _HEADER.size
        for _ in range(N_NEURONS):
            kind, ncomp, last, thr, v_d2, v_d1, v_soma = _NEURON_RECORD.unpack_from(blob, off)
            neurons.append(NeuronMemoryWord(kind, ncomp, last, thr, v_d2, v_d1, v_soma))
            off += _NEURON_RECORD.size
        synapses = np.frombuffer(blob, dtype=np.int8, count=N_NEURONS * N_NEURONS,
                                 offset=off).reshape(N_NEURONS, N_NEURONS).copy()
        image = cls(neurons, synapses, FixedPointFormat(16, state_frac),
                    FixedPointFormat(8, thr_frac), FixedPointFormat(8, weight_frac))
        image.validate()
        return image


def load_memory_image(path) -> MemoryImage:
    with open(path, "rb") as fh:
        return MemoryImage.from_bytes(fh.read())


# ---------------------------------------------------------------------------
# Model export: layers onto disjoint address ranges
# ---------------------------------------------------------------------------

@dataclass
class AddressMap:
    """Where a layered model lives on the fabric.

    Input features occupy the first addresses (sources only, no dynamics),
    each block's neurons the next range in order, and the optional bias
    source sits on its own address whose synapse row carries the biases; the
    stream writer fires it every time step.
    """

    input_start: int
    input_len: int
    layers: list
    bias_addr: int | None = None

    def layer_slice(self, index: int) -> slice:
        start, length = self.layers[index]
        return slice(start, start + length)

    @property
    def input_slice(self) -> slice:
        return slice(self.input_start, self.input_start + self.input_len)

    def to_json(self) -> dict:
        return {"input": [self.input_start, self.input_len],
                "layers": [list(pair) for pair in self.layers],
                "bias": self.bias_addr}

    @classmethod
    def from_json(cls, obj: dict) -> "AddressMap":
        return cls(int(obj["input"][0]), int(obj["input"][1]),
                   [(int(s), int(n)) for s, n in obj["layers"]],
                   None if obj.get("bias") is None else int(obj["bias"]))


_NEURON_KINDS = {"qmcleaky": KIND_MCLEAKY, "qlif": KIND_LIF}


def export_memory_image(qnet: QuantizedNetwork) -> tuple[MemoryImage, AddressMap]:
    """Map a quantized network onto the 256-address fabric.

    Layers land on consecutive disjoint address ranges after the input
    block, which keeps all connectivity forward (lower address to higher);
    models that need more than 256 addresses are rejected.
    """
    if not qnet.blocks:
        raise ValueError("network has no blocks to export")
    weight_fmt = qnet.blocks[0].weights.fmt
    threshold_fmt = qnet.blocks[0].threshold.fmt
    if weight_fmt.total_bits != 8:
        raise ValueError("weight out of 8-bit range: fabric weights are 8-bit")
    has_bias = any(b.bias is not None for b in qnet.blocks)
    total = qnet.input_dim + sum(qnet.layer_sizes) + (1 if has_bias else 0)
    if total > N_NEURONS:
        raise ValueError(f"model needs {total} addresses, fabric has {N_NEURONS}")

    neurons = [NeuronMemoryWord() for _ in range(N_NEURONS)]
    synapses = np.zeros((N_NEURONS, N_NEURONS), dtype=np.int64)
    layers = []
    prev_start, prev_len = 0, qnet.input_dim
    addr = qnet.input_dim
    bias_addr = qnet.input_dim + sum(qnet.layer_sizes) if has_bias else None
    for block in qnet.blocks:
        if block.weights.fmt != weight_fmt:
            raise ValueError("blocks must share one weight format")
        if block.threshold.fmt != threshold_fmt:
            raise ValueError("blocks must share one threshold format")
        units = block.weights.raw.shape[1]
        if block.weights.raw.shape[0] != prev_len:
            raise ValueError("block input width does not match the previous layer")
        kind = _NEURON_KINDS.get(block.neuron_kind)
        if kind is None:
            raise ValueError(f"neuron kind {block.neuron_kind!r} has no fabric datapath")
        synapses[prev_start:prev_start + prev_len, addr:addr + units] = block.weights.raw
        if block.bias is not None:
            synapses[bias_addr, addr:addr + units] = block.bias.raw
        thresholds = np.broadcast_to(np.asarray(block.threshold.raw), (units,))
        for i in range(units):
            neurons[addr + i] = NeuronMemoryWord(
                kind=kind, n_compartments=_KIND_COMPARTMENTS[kind],
                threshold=int(thresholds[i]))
        layers.append((addr, units))
        prev_start, prev_len = addr, units
        addr += units

    if synapses.min() < -128 or synapses.max() > 127:
        raise ValueError("weight out of 8-bit range")
    image = MemoryImage(neurons, synapses.astype(np.int8), qnet.state_fmt,
                        threshold_fmt, weight_fmt)
    image.validate()
    return image, AddressMap(0, qnet.input_dim, layers, bias_addr)


# ---------------------------------------------------------------------------
# Fixed-point neuron datapaths (bit-equal to the quantization module)
# ---------------------------------------------------------------------------

def _sat(value: int, fmt: FixedPointFormat) -> int:
    return min(max(int(value), fmt.raw_min), fmt.raw_max)


def dendrite_update(word: NeuronMemoryWord, input_sum: int,
                    state_fmt: FixedPointFormat = STATE_FORMAT) -> NeuronMemoryWord:
    """Advance the dendritic compartments and latch the soma drive.

    input_sum is raw in the state format (the weight-row accumulation after
    rescaling). Every decay is the shift-based 0.875 approximation and every
    update line saturates once after its full sum.
    """
    if word.kind == KIND_MCLEAKY:
        d2 = _sat(decay_approx(word.v_d2) + decay_approx(word.v_d1)
                  + int(input_sum), state_fmt)
        d1 = _sat(decay_approx(word.v_d1) + decay_approx(d2)
                  + decay_approx(word.v_soma), state_fmt)
        word.v_d2 = d2
        word.v_d1 = d1
        word.drive = decay_approx(d1)
    elif word.kind == KIND_LIF:
        word.drive = int(input_sum)
    else:
        raise ValueError("cannot update an unconfigured neuron word")
    return word


def soma_update(word: NeuronMemoryWord,
                state_fmt: FixedPointFormat = STATE_FORMAT,
                threshold_fmt: FixedPointFormat = THRESHOLD_FORMAT,
                ) -> tuple[NeuronMemoryWord, int]:
    """Soma leak + drive + subtraction reset, then the >= threshold compare."""
    thr = int(rescale_raw(word.threshold, threshold_fmt, state_fmt))
    soma = _sat(decay_approx(word.v_soma) + word.drive - word.last_spike * thr,
                state_fmt)
    word.v_soma = soma
    spike = 1 if soma >= thr else 0
    word.last_spike = spike
    return word, spike


# ---------------------------------------------------------------------------
# Scheduler and controller
# ---------------------------------------------------------------------------

@dataclass
class SchedulerFifo:
    """Bounded FIFO of AER packets; push past capacity raises."""

    capacity: int = FIFO_CAPACITY_DEFAULT
    _items: deque = field(default_factory=deque, repr=False)

    def push(self, packet: AerPacket, time_step: int) -> None:
        if len(self._items) >= self.capacity:
            raise FifoOverflow(
                f"scheduler FIFO overflow at time step {time_step} "
                f"(capacity {self.capacity})", time_step)
        self._items.append(packet)

    def pop(self) -> AerPacket:
        return self._items.popleft()

    def __len__(self) -> int:
        return len(self._items)

    def __bool__(self) -> bool:
        return bool(self._items)


@dataclass
class ControllerState:
    current_time_step: int = 0
    phase: str = "integrating"


@dataclass
class SimResult:
    """Output stream plus per-address spike and input-event counts."""

    events: list
    spike_counts: np.ndarray
    input_counts: np.ndarray
    t_steps: int


class Controller:
    """Single-threaded event loop over one memory image.

    The image is copied at construction, so one exported image can drive any
    number of independent simulations.
    """

    def __init__(self, image: MemoryImage, fifo_capacity: int = FIFO_CAPACITY_DEFAULT):
        image.validate()
        self.words = [w.copy() for w in image.neurons]
        self.synapses = np.asarray(image.synapses, dtype=np.int64)
        self.state_fmt = image.state_fmt
        self.threshold_fmt = image.threshold_fmt
        self.weight_fmt = image.weight_fmt
        self.state = ControllerState()
        self.external = SchedulerFifo(fifo_capacity)
        self.internal = SchedulerFifo(fifo_capacity)
        self.accumulator = np.zeros(N_NEURONS, dtype=np.int64)
        self.events = []
        self.spike_counts = np.zeros(N_NEURONS, dtype=np.int64)
        self.input_counts = np.zeros(N_NEURONS, dtype=np.int64)

    def process(self, incoming) -> list:
        """Feed a chunk of (time_step, AerPacket) pairs.

        Packets at the current time step queue for integration; a packet
        bearing a later step closes every step up to it. Returns the events
        emitted during this call.
        """
        emitted = len(self.events)
        for time_step, packet in incoming:
            time_step = int(time_step)
            if time_step < self.state.current_time_step:
                raise StreamOrderError(
                    f"time step {time_step} after step "
                    f"{self.state.current_time_step} already closed")
            while self.state.current_time_step < time_step:
                self.close_step()
            self.external.push(packet, time_step)
        return self.events[emitted:]

    def _deliver(self, packet: AerPacket) -> None:
        # burst_len spikes isi ticks apart land within one step, so their
        # row contributions simply sum
        self.accumulator += self.synapses[packet.neuron_addr] * packet.n_spikes
        self.input_counts[packet.neuron_addr] += packet.n_spikes

    def close_step(self) -> None:
        """Integrate queued packets, then fire the whole fabric once.

        External packets are delivered before internal ones. The firing
        sweep runs in ascending address order and spikes propagate inside
        the sweep, so forward connectivity resolves within the step.
        """
        t = self.state.current_time_step
        while self.external:
            self._deliver(self.external.pop())
        self.state.phase = "firing"
        for addr in range(N_NEURONS):
            word = self.words[addr]
            if word.kind == KIND_NONE:
                continue
            input_state = _sat(int(rescale_raw(int(self.accumulator[addr]),
                                               self.weight_fmt, self.state_fmt)),
                               self.state_fmt)
            dendrite_update(word, input_state, self.state_fmt)
            _, spike = soma_update(word, self.state_fmt, self.threshold_fmt)
            if spike:
                packet = AerPacket(addr)
                self.internal.push(packet, t)
                self._deliver(self.internal.pop())
                self.events.append((t, packet))
                self.spike_counts[addr] += 1
        self.accumulator[:] = 0
        self.state.current_time_step = t + 1
        self.state.phase = "integrating"


def run_inference(image: MemoryImage, input_stream, t_steps: int,
                  fifo_capacity: int = FIFO_CAPACITY_DEFAULT) -> SimResult:
    """Simulate t_steps of the fabric under an AER input stream.

    The stream is a sequence of (time_step, AerPacket) pairs with monotone
    non-decreasing time steps below t_steps. Every step is closed exactly
    once, including silent ones, so leak always applies. The output events
    come back sorted by (time_step, neuron_addr).
    """
    if t_steps < 1:
        raise ValueError("t_steps must be positive")
    ctrl = Controller(image, fifo_capacity)
    for time_step, packet in input_stream:
        if time_step >= t_steps:
            raise ValueError(f"stream time step {time_step} beyond horizon {t_steps}")
        ctrl.process([(time_step, packet)])
    while ctrl.state.current_time_step < t_steps:
        ctrl.close_step()
    return SimResult(ctrl.events, ctrl.spike_counts, ctrl.input_counts, t_steps)


# ---------------------------------------------------------------------------
# Streams and result views
# ---------------------------------------------------------------------------

def write_stream(path, events) -> None:
    """Write (time_step, AerPacket) records to a stream file."""
    with open(path, "wb") as fh:
        for time_step, packet in events:
            fh.write(_STREAM_RECORD.pack(int(time_step), packet.packed))


def read_stream(path) -> list:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) % _STREAM_RECORD.size:
        raise ValueError("truncated stream file")
    return [(t, unpack_packet(word))
            for t, word in _STREAM_RECORD.iter_unpack(blob)]


def make_input_stream(spikes: np.ndarray, amap: AddressMap) -> list:
    """Turn a [t_steps, input_dim] 0/1 spike array into an AER stream.

    Emits one packet per active feature per step plus, when the map has a
    bias source, one packet for it every step (the bias row always fires).
    """
    spikes = np.asarray(spikes)
    if spikes.ndim != 2 or spikes.shape[1] != amap.input_len:
        raise ValueError(f"expected [t_steps, {amap.input_len}] spikes")
    stream = []
    for t in range(spikes.shape[0]):
        for i in np.flatnonzero(spikes[t]):
            stream.append((t, AerPacket(amap.input_start + int(i))))
        if amap.bias_addr is not None:
            stream.append((t, AerPacket(amap.bias_addr)))
    return stream


def spike_trains(result: SimResult, amap: AddressMap) -> list:
    """Rebuild per-layer [t_steps, units] spike matrices from the events."""
    trains = [np.zeros((result.t_steps, length), dtype=np.int64)
              for _, length in amap.layers]
    for t, packet in result.events:
        for li, (start, length) in enumerate(amap.layers):
            if start <= packet.neuron_addr < start + length:
                trains[li][t, packet.neuron_addr - start] = 1
                break
    return trains


def predict_class(result: SimResult, amap: AddressMap) -> int:
    """Class decision: most active neuron of the last layer (ties go low)."""
    return int(np.argmax(result.spike_counts[amap.layer_slice(len(amap.layers) - 1)]))


def layer_spike_stats(result: SimResult, amap: AddressMap) -> list:
    """Per-layer input-spike statistics in the energy module's shape."""
    stats = []
    prev = amap.input_slice
    prev_len = amap.input_len
    source = result.input_counts
    for li, (start, length) in enumerate(amap.layers):
        stats.append({
            "layer_index": li,
            "n_input_neurons": prev_len,
            "n_output_neurons": length,
            "input_spikes_total": int(source[prev].sum()),
            "n_synapses": prev_len * length,
        })
        prev = slice(start, start + length)
        prev_len = length
        source = result.spike_counts
    return stats
