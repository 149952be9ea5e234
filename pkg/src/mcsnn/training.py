"""Training loop, losses, optimizer and checkpoint files.

Losses return (value, gradient-per-timestep) pairs so the network's
backward can consume them directly. Both operate on the output layer's
spike trains shaped [t_steps, batch, classes].
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .data import SplitDataset, WindowedDataset
from .encoding import encode_windows
from .network import Network, NetworkSpec

CHECKPOINT_MAGIC = b"MCQM"
CHECKPOINT_VERSION = 1

COUNT_TARGET_HI = 0.8   # fraction of t_steps the correct class should fire
COUNT_TARGET_LO = 0.2


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; evolution treats the candidate as dead."""


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def count_mse_loss(out_spikes: np.ndarray, labels: np.ndarray):
    """Mean squared error between per-class spike counts and targets.

    The correct class should fire on 80% of timesteps, the other on 20%.
    The error is averaged over classes and batch.
    """
    t_steps, batch, n_classes = out_spikes.shape
    counts = out_spikes.sum(axis=0)
    targets = np.full((batch, n_classes), COUNT_TARGET_LO * t_steps)
    targets[np.arange(batch), labels] = COUNT_TARGET_HI * t_steps
    diff = counts - targets
    loss = float((diff * diff).mean())
    # d(loss)/d(counts) = 2*diff/(batch*n_classes); every timestep
    # contributes equally to the count
    gcounts = 2.0 * diff / (batch * n_classes)
    grad = np.broadcast_to(gcounts, out_spikes.shape).copy()
    return loss, grad


def ce_rate_loss(out_spikes: np.ndarray, labels: np.ndarray):
    """Cross entropy of the per-timestep softmax, averaged over time and
    batch. Encourages the correct output neuron to out-fire the other at
    every step."""
    t_steps, batch, n_classes = out_spikes.shape
    shifted = out_spikes - out_spikes.max(axis=2, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=2, keepdims=True)
    idx = np.arange(batch)
    picked = p[:, idx, labels]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    grad = p.copy()
    grad[:, idx, labels] -= 1.0
    grad /= t_steps * batch
    return loss, grad


LOSSES = {"count_mse": count_mse_loss, "ce_rate": ce_rate_loss}


# ---------------------------------------------------------------------------
# Optimizer and schedule
# ---------------------------------------------------------------------------

class Adam:
    def __init__(self, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict, clamps: dict | None = None,
             lr: float | None = None) -> None:
        """Update params in place; clamped keys are clipped after the step."""
        lr = self.lr if lr is None else lr
        clamps = clamps or {}
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for key, p in params.items():
            g = np.asarray(grads[key], dtype=np.float64)
            m = self.m.setdefault(key, np.zeros_like(p, dtype=np.float64))
            v = self.v.setdefault(key, np.zeros_like(p, dtype=np.float64))
            m[...] = self.beta1 * m + (1.0 - self.beta1) * g
            v[...] = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            update = lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p[...] = p - update
            if key in clamps:
                lo, hi = clamps[key]
                np.clip(p, lo, hi, out=p)


def cosine_anneal(epoch: int, lr_max: float, lr_min: float = 0.0,
                  period: int = 50) -> float:
    """Half-cosine decay from lr_max to lr_min, restarting every period."""
    phase = (epoch % period) / period
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + np.cos(np.pi * phase))


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale the whole gradient set down to a global L2 norm ceiling.

    Spiking losses occasionally produce violent batches (a whole layer
    crossing threshold at once); without a ceiling one such batch can throw
    thresholds or decays into a dead region they never recover from.
    """
    total = 0.0
    for g in grads.values():
        total += float(np.square(g).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# ---------------------------------------------------------------------------
# Train / evaluate
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 24
    lr: float = 0.01
    lr_min: float = 0.0
    schedule: str = "cosine"        # cosine | constant
    anneal_period: int | None = None
    loss: str = "count_mse"
    seed: int = 0
    t_steps: int | None = None      # None: use the model spec
    clip_norm: float | None = 5.0   # global gradient norm ceiling
    progress: bool = False


def predict(model: Network, enc: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Labels for encoded spikes [t_steps, n, features]; ties resolve to the
    lowest class index."""
    n = enc.shape[1]
    out = np.empty(n, dtype=np.int64)
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        spikes = model.forward(enc[:, lo:hi, :], train=False)
        counts = spikes.sum(axis=0)
        out[lo:hi] = counts.argmax(axis=1)
    return out


def accuracy(model: Network, enc: np.ndarray, labels: np.ndarray,
             batch_size: int = 256) -> float:
    pred = predict(model, enc, batch_size)
    return float((pred == np.asarray(labels)).mean())


def train(model: Network, split: SplitDataset, cfg: TrainConfig) -> list[dict]:
    """Optimize the model on split.train, tracking split.test accuracy.

    Returns one history row per epoch:
    {"epoch", "lr", "loss", "train_acc", "test_acc"}.
    """
    if cfg.loss not in LOSSES:
        raise ValueError(f"unknown loss {cfg.loss!r}")
    loss_fn = LOSSES[cfg.loss]
    t_steps = cfg.t_steps or model.spec.t_steps
    enc_train = encode_windows(split.train.windows, t_steps, seed=cfg.seed)
    enc_test = encode_windows(split.test.windows, t_steps, seed=cfg.seed + 1)
    y_train = np.asarray(split.train.labels, dtype=np.int64)
    y_test = np.asarray(split.test.labels, dtype=np.int64)

    opt = Adam(lr=cfg.lr)
    clamps = model.clamps()
    period = cfg.anneal_period or cfg.epochs
    rng = np.random.default_rng(cfg.seed)
    n = enc_train.shape[1]
    history = []
    for epoch in range(cfg.epochs):
        if cfg.schedule == "cosine":
            lr = cosine_anneal(epoch, cfg.lr, cfg.lr_min, period)
        else:
            lr = cfg.lr
        perm = rng.permutation(n)
        epoch_loss, n_batches = 0.0, 0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            spikes = model.forward(enc_train[:, idx, :], train=True, rng=rng)
            loss, grad = loss_fn(spikes, y_train[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss {loss} at epoch {epoch}")
            model.zero_grads()
            model.backward(grad)
            grads = model.gradients()
            if cfg.clip_norm is not None:
                norm = clip_gradients(grads, cfg.clip_norm)
                if not np.isfinite(norm):
                    raise TrainingDiverged(
                        f"gradient norm {norm} at epoch {epoch}")
            opt.step(model.parameters(), grads, clamps, lr)
            epoch_loss += loss
            n_batches += 1
        row = {
            "epoch": epoch,
            "lr": float(lr),
            "loss": epoch_loss / max(n_batches, 1),
            "train_acc": accuracy(model, enc_train, y_train),
            "test_acc": accuracy(model, enc_test, y_test),
        }
        history.append(row)
        if cfg.progress:
            print(f"epoch {epoch:3d}  lr {row['lr']:.5f}  "
                  f"loss {row['loss']:8.4f}  train {row['train_acc']:.3f}  "
                  f"test {row['test_acc']:.3f}")
    return history


def evaluate_with_stats(model: Network, enc: np.ndarray, labels: np.ndarray):
    """Accuracy plus per-layer spike totals for the energy model."""
    model.reset_stats()
    acc = accuracy(model, enc, labels)
    stats = model.spike_stats()
    presentations = enc.shape[0] * enc.shape[1]  # timesteps x windows
    return acc, stats, presentations


# ---------------------------------------------------------------------------
# Leave-one-subject-out
# ---------------------------------------------------------------------------

def concat_datasets(parts: list[WindowedDataset]) -> WindowedDataset:
    """Stack datasets row-wise. Parts must share one window structure."""
    if not parts:
        raise ValueError("nothing to concatenate")
    first = parts[0]
    for p in parts[1:]:
        if p.provenance != first.provenance:
            raise ValueError("datasets have differing window structure")
    return WindowedDataset(
        windows=np.concatenate([p.windows for p in parts], axis=0),
        labels=np.concatenate([p.labels for p in parts], axis=0),
        provenance=list(first.provenance),
    )


def leave_one_out(datasets: list[WindowedDataset]):
    """Yield (held_out_index, SplitDataset) per subject."""
    for i in range(len(datasets)):
        rest = [d for j, d in enumerate(datasets) if j != i]
        yield i, SplitDataset(train=concat_datasets(rest), test=datasets[i],
                              seed=i)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: Network, history: list[dict] | None = None) -> None:
    """Binary checkpoint: magic, version, JSON-described architecture, a
    flat float32 parameter block in canonical order, then the training
    history as JSON."""
    spec_blob = model.spec.to_json().encode("utf-8")
    params = model.flat_parameters().astype("<f4")
    hist_blob = json.dumps(history or []).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(spec_blob)))
        fh.write(spec_blob)
        fh.write(struct.pack("<I", params.size))
        fh.write(params.tobytes())
        fh.write(struct.pack("<I", len(hist_blob)))
        fh.write(hist_blob)


def load_checkpoint(path) -> tuple[Network, list[dict]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a model checkpoint (bad magic)")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 6
    (n_spec,) = struct.unpack_from("<I", blob, off)
    off += 4
    spec = NetworkSpec.from_json(blob[off : off + n_spec].decode("utf-8"))
    off += n_spec
    (n_params,) = struct.unpack_from("<I", blob, off)
    off += 4
    flat = np.frombuffer(blob, dtype="<f4", count=n_params, offset=off)
    off += 4 * n_params
    (n_hist,) = struct.unpack_from("<I", blob, off)
    off += 4
    history = json.loads(blob[off : off + n_hist].decode("utf-8"))
    model = Network.build(spec, seed=0, enforce_classifier=False)
    model.load_flat_parameters(np.asarray(flat, dtype=np.float64))
    return model, history
