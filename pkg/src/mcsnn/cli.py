"""Batch command-line interface.

Subcommands: ingest, encode, train, evolve, quantize, sweep, simulate,
energy, report. Options resolve as flag > config file > built-in default; the
config file is JSON with one object per subcommand, e.g.
{"train": {"epochs": 30}}. Exit codes: 0 success, 1 usage, 2 input
validation, 3 runtime failure (training divergence, FIFO overflow).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import energy as energy_mod
from . import grammar as grammar_mod
from . import nas as nas_mod
from . import processor as proc
from . import quantization as qz
from . import training
from .encoding import encode_windows
from .network import LayerSpec, Network, NetworkSpec


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage problems; the contract here is exit 1
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# Built-in defaults, applied after flags and config file.
DEFAULTS = {
    "train": {"epochs": 20, "batch_size": 16, "lr": 0.01, "loss": "count_mse",
              "seed": 0, "t_steps": 25, "train_fraction": 0.8, "hidden": 64,
              "neuron": "mcleaky", "threshold": 0.25, "q_bits": 8},
    "evolve": {"generations": 4, "parents": 8, "offspring": 8, "jobs": 1,
               "seed": 0, "train_epochs": 3, "batch_size": 24, "t_steps": 25,
               "train_fraction": 0.8, "grammar": "qmcleaky"},
    "sweep": {"widths": "2,4,8,16,32", "epochs": 50, "seed": 0, "lr": 0.01,
              "batch_size": 24, "t_steps": 25, "train_fraction": 0.8,
              "hidden": 64, "threshold": 0.25},
    "encode": {"t_steps": 25, "seed": 0, "index": 0},
    "simulate": {"fifo_capacity": proc.FIFO_CAPACITY_DEFAULT},
    "energy": {"lam": energy_mod.LAMBDA_DEFAULT,
               "latency_ratio": energy_mod.LATENCY_RATIO_DEFAULT},
    "report": {"lam": energy_mod.LAMBDA_DEFAULT,
               "latency_ratio": energy_mod.LATENCY_RATIO_DEFAULT},
}


def build_parser() -> _Parser:
    parser = _Parser(prog="mcsnn", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON config file with per-command defaults")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("ingest", help="run the ingest pipeline from a manifest")
    p.add_argument("--manifest", required=True, help="ingest manifest (JSON)")
    p.add_argument("--out", required=True, help="output dataset file")

    p = sub.add_parser("encode", help="rate-encode one window as an AER input stream")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--map", required=True, help="address map JSON")
    p.add_argument("--out", required=True, help="output AER stream file")
    p.add_argument("--t-steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--index", type=int, help="window index within the dataset")

    p = sub.add_parser("train", help="train a spiking classifier")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--loss", choices=sorted(training.LOSSES))
    p.add_argument("--seed", type=int)
    p.add_argument("--t-steps", type=int)
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--hidden", type=int, help="hidden layer width")
    p.add_argument("--neuron", choices=["lif", "clif", "mcleaky", "qmcleaky"])
    p.add_argument("--threshold", type=float)
    p.add_argument("--q-bits", type=int, help="weight width for qmcleaky nets")
    p.add_argument("--spec-json", help="NetworkSpec JSON file overriding the architecture flags")
    p.add_argument("--progress", action="store_true")

    p = sub.add_parser("evolve", help="grammar-guided architecture search")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--generations", type=int)
    p.add_argument("--parents", type=int)
    p.add_argument("--offspring", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--train-epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--t-steps", type=int)
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--grammar", help="preset name or grammar file")
    p.add_argument("--progress", action="store_true")

    p = sub.add_parser("quantize", help="export a checkpoint as a memory image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("sweep", help="bit-width sweep with QAT retraining")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--widths", help="comma-separated weight widths")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--t-steps", type=int)
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("simulate", help="event-driven processor simulation")
    p.add_argument("--image", required=True, help="memory image file")
    p.add_argument("--input", required=True, help="input AER stream file")
    p.add_argument("--t-steps", type=int, required=True)
    p.add_argument("--out", required=True, help="output AER stream file")
    p.add_argument("--fifo-capacity", type=int)
    p.add_argument("--map", help="address map JSON for per-layer summaries")

    p = sub.add_parser("energy", help="spike-ratio energy report")
    p.add_argument("--stats", required=True, help="spike statistics JSON")
    p.add_argument("--lambda", dest="lam", type=float,
                   help="MAC/ACC energy cost ratio")
    p.add_argument("--latency-ratio", type=float)
    p.add_argument("--out", help="write the report here instead of stdout")

    p = sub.add_parser("report", help="render figures from run artifacts")
    p.add_argument("--from", dest="from_dir", required=True,
                   help="artifact directory (train/evolve/sweep outputs)")
    p.add_argument("--out-dir", help="figure directory (default: --from)")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--latency-ratio", type=float)

    return parser


def _apply_defaults(args: argparse.Namespace) -> argparse.Namespace:
    """flag > config file > built-in default."""
    config = {}
    if args.config:
        with open(args.config) as fh:
            config = json.load(fh)
        if not isinstance(config, dict):
            raise ValueError("config file must hold a JSON object")
    section = config.get(args.command, {})
    for key, value in {**DEFAULTS.get(args.command, {}), **section}.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)
    return args


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _load_split(args) -> data_mod.SplitDataset:
    ds = data_mod.read_dataset(args.data)
    return data_mod.split(ds, args.train_fraction, seed=args.seed)


def _build_spec(args, input_dim: int) -> NetworkSpec:
    if getattr(args, "spec_json", None):
        return NetworkSpec.from_json(Path(args.spec_json).read_text())
    weighted = "qdense" if args.neuron == "qmcleaky" else "dense"
    q_bits = getattr(args, "q_bits", None) if weighted == "qdense" else None
    return NetworkSpec(input_dim, [
        LayerSpec(weighted, units=args.hidden, q_bits=q_bits),
        LayerSpec("activation", neuron=args.neuron, threshold=args.threshold),
        LayerSpec(weighted, units=2, q_bits=q_bits),
        LayerSpec("activation", neuron=args.neuron, threshold=args.threshold),
    ], t_steps=args.t_steps)


def _write_metrics_csv(path, history: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "loss", "train_acc", "test_acc"])
        for row in history:
            writer.writerow([row["epoch"], row["lr"], row["loss"],
                             row["train_acc"], row["test_acc"]])


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    manifest = data_mod.load_manifest(args.manifest)
    ds = data_mod.run_ingest(manifest)
    data_mod.write_dataset(ds, args.out)
    print(f"wrote {args.out}: {len(ds.labels)} windows of "
          f"{ds.windows.shape[1]} samples")
    return 0


def cmd_encode(args) -> int:
    ds = data_mod.read_dataset(args.data)
    if not 0 <= args.index < ds.n_windows:
        raise ValueError(f"window index {args.index} outside "
                         f"[0, {ds.n_windows})")
    amap = proc.AddressMap.from_json(json.loads(Path(args.map).read_text()))
    # whole-matrix encoding, then slice: matches how evaluation encodes
    enc = encode_windows(ds.windows, args.t_steps, seed=args.seed)
    stream = proc.make_input_stream(enc[:, args.index, :], amap)
    proc.write_stream(args.out, stream)
    print(f"wrote {args.out}: window {args.index} "
          f"(label {int(ds.labels[args.index])}), {len(stream)} packets")
    return 0


def cmd_train(args) -> int:
    split = _load_split(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = _build_spec(args, split.train.windows.shape[1])
    model = Network.build(spec, seed=args.seed)
    cfg = training.TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                               lr=args.lr, loss=args.loss, seed=args.seed,
                               t_steps=args.t_steps, progress=args.progress)
    history = training.train(model, split, cfg)

    enc = encode_windows(split.test.windows, args.t_steps, seed=args.seed)
    acc, stats, presentations = training.evaluate_with_stats(
        model, enc, split.test.labels)

    training.save_checkpoint(out_dir / "model.mcqm", model, history)
    _write_metrics_csv(out_dir / "metrics.csv", history)
    _write_json(out_dir / "stats.json",
                {"test_accuracy": acc, "t_windows": presentations,
                 "layers": stats})
    print(f"final test accuracy {acc:.4f}; artifacts in {out_dir}")
    return 0


def cmd_evolve(args) -> int:
    split = _load_split(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    source = args.grammar
    if source not in grammar_mod.GRAMMAR_PRESETS and Path(source).exists():
        source = Path(source).read_text()
    grammar = grammar_mod.load_grammar(source)
    config = nas_mod.EvoConfig(
        generations=args.generations, parents=args.parents,
        offspring=args.offspring, jobs=args.jobs, seed=args.seed,
        train_epochs=args.train_epochs, batch_size=args.batch_size,
        t_steps=args.t_steps)
    result = nas_mod.evolve(grammar, split, config, progress=args.progress)

    (out_dir / "evolution.csv").write_text(
        nas_mod.history_to_csv(result.history) + "\n")
    _write_json(out_dir / "archive.json", result.archive)
    spec, lr = nas_mod.decode(result.best, grammar,
                              input_dim=split.train.windows.shape[1],
                              t_steps=args.t_steps)
    _write_json(out_dir / "best.json", {
        "genotype_id": result.best.genotype_id,
        "fitness": result.best.fitness,
        "lr": lr,
        "network_spec": json.loads(spec.to_json()),
        "genotype": result.best.to_json(),
    })
    print(f"best fitness {result.best.fitness:.4f} "
          f"({result.evaluations} evaluations); artifacts in {out_dir}")
    return 0


def cmd_quantize(args) -> int:
    model, _ = training.load_checkpoint(args.checkpoint)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    qnet = qz.quantize_network(model)
    image, amap = proc.export_memory_image(qnet)
    image.save(out_dir / "model.mcqi")
    _write_json(out_dir / "addrmap.json", amap.to_json())
    print(f"wrote {out_dir / 'model.mcqi'} "
          f"({len(qnet.blocks)} blocks, sizes {qnet.layer_sizes})")
    return 0


def cmd_sweep(args) -> int:
    split = _load_split(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    widths = [int(w) for w in str(args.widths).split(",") if w != ""]
    if not widths:
        raise ValueError("empty width list")
    base = NetworkSpec(split.train.windows.shape[1], [
        LayerSpec("qdense", units=args.hidden, q_bits=8),
        LayerSpec("activation", neuron="qmcleaky", threshold=args.threshold),
        LayerSpec("qdense", units=2, q_bits=8),
        LayerSpec("activation", neuron="qmcleaky", threshold=args.threshold),
    ], t_steps=args.t_steps)
    rows = qz.bitwidth_sweep(base, split, widths=tuple(widths),
                             epochs=args.epochs, seed=args.seed, lr=args.lr,
                             batch_size=args.batch_size)
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["width", "epoch", "test_accuracy"])
        for row in rows:
            writer.writerow([row["width"], row["epoch"], row["test_accuracy"]])
    finals = {w: max(r["test_accuracy"] for r in rows if r["width"] == w
                     and r["epoch"] == args.epochs - 1) for w in widths}
    print("final accuracy per width: "
          + ", ".join(f"{w}: {a:.4f}" for w, a in sorted(finals.items())))
    return 0


def cmd_simulate(args) -> int:
    image = proc.load_memory_image(args.image)
    stream = proc.read_stream(args.input)
    result = proc.run_inference(image, stream, args.t_steps,
                                fifo_capacity=args.fifo_capacity)
    proc.write_stream(args.out, result.events)
    print(f"{len(result.events)} output events over {args.t_steps} steps "
          f"-> {args.out}")
    if args.map:
        amap = proc.AddressMap.from_json(json.loads(Path(args.map).read_text()))
        for li in range(len(amap.layers)):
            count = int(result.spike_counts[amap.layer_slice(li)].sum())
            print(f"layer {li} spikes: {count}")
        print(f"class decision: {proc.predict_class(result, amap)}")
    return 0


def _stats_from_file(path):
    blob = json.loads(Path(path).read_text())
    if not isinstance(blob, dict) or "layers" not in blob:
        raise ValueError(f"{path}: expected an object with a 'layers' list")
    return blob


def cmd_energy(args) -> int:
    blob = _stats_from_file(args.stats)
    report = energy_mod.energy_report(blob["layers"],
                                      t_windows=int(blob["t_windows"]),
                                      lam=args.lam,
                                      latency_ratio=args.latency_ratio)
    text = report.to_text()
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def cmd_report(args) -> int:
    from . import plots  # matplotlib import is slow; only this path pays it

    src = Path(args.from_dir)
    if not src.is_dir():
        raise ValueError(f"{src} is not a directory")
    out_dir = Path(args.out_dir) if args.out_dir else src
    out_dir.mkdir(parents=True, exist_ok=True)
    rendered = []

    metrics = src / "metrics.csv"
    if metrics.exists():
        history = [{"epoch": int(r["epoch"]), "lr": float(r["lr"]),
                    "loss": float(r["loss"]),
                    "train_acc": float(r["train_acc"]),
                    "test_acc": float(r["test_acc"])}
                   for r in _read_csv(metrics)]
        rendered.append(plots.training_curves(history, out_dir / "training.png"))

    evolution = src / "evolution.csv"
    if evolution.exists():
        history = [{"generation": int(r["generation"]),
                    "best_fitness": float(r["best_fitness"]),
                    "mean_fitness": float(r["mean_fitness"])}
                   for r in _read_csv(evolution)]
        rendered.append(plots.evolution_curve(history, out_dir / "evolution.png"))

    sweep = src / "sweep.csv"
    if sweep.exists():
        rows = [{"width": int(r["width"]), "epoch": int(r["epoch"]),
                 "test_accuracy": float(r["test_accuracy"])}
                for r in _read_csv(sweep)]
        rendered.append(plots.sweep_curves(rows, out_dir / "sweep.png"))

    stats = src / "stats.json"
    if stats.exists():
        blob = _stats_from_file(stats)
        report = energy_mod.energy_report(blob["layers"],
                                          t_windows=int(blob["t_windows"]),
                                          lam=args.lam,
                                          latency_ratio=args.latency_ratio)
        (out_dir / "energy.txt").write_text(report.to_text() + "\n")
        rendered.append(str(out_dir / "energy.txt"))
        rendered.append(plots.energy_bars(report, out_dir / "energy.png"))

    events_file = src / "output.aer"
    map_file = src / "addrmap.json"
    if events_file.exists() and map_file.exists():
        events = proc.read_stream(events_file)
        amap = proc.AddressMap.from_json(json.loads(map_file.read_text()))
        t_steps = max((t for t, _ in events), default=0) + 1
        result = proc.SimResult(events, np.zeros(proc.N_NEURONS, dtype=np.int64),
                                np.zeros(proc.N_NEURONS, dtype=np.int64), t_steps)
        rendered.append(plots.spike_raster(proc.spike_trains(result, amap),
                                           out_dir / "raster.png"))

    if not rendered:
        raise ValueError(f"no renderable artifacts found in {src}")
    summary = out_dir / "report.txt"
    summary.write_text("".join(f"{p}\n" for p in rendered))
    print(f"rendered {len(rendered)} artifacts; index in {summary}")
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "encode": cmd_encode,
    "train": cmd_train,
    "evolve": cmd_evolve,
    "quantize": cmd_quantize,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "energy": cmd_energy,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("mcsnn: a subcommand is required (see --help)")
    except UsageError as err:
        print(err, file=sys.stderr)
        return 1
    try:
        args = _apply_defaults(args)
        return COMMANDS[args.command](args)
    except training.TrainingDiverged as err:
        print(f"runtime error: training diverged: {err}", file=sys.stderr)
        return 3
    except proc.FifoOverflow as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return 3
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
