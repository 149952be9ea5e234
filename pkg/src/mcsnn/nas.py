"""Two-level neuro-evolutionary architecture search.

The outer (GA) level evolves an ordered list of macro blocks: one or
more hidden blocks, one output block, one learning block. The inner
(DSGE) level stores, per block, the full grammar derivation: which
production was chosen at every nonterminal and the sampled value of
every parameter terminal. Mutation acts on both levels; one-point
crossover swaps hidden-block tails between parents with each block's
derivation travelling along.

Candidate fitness is test accuracy after a short training run; a
candidate whose training diverges scores 0 and the search continues.
Every candidate draws its training seed from a spawned RNG stream keyed
by creation order, so parallel evaluation (``jobs``) cannot change any
result bit.
"""

from __future__ import annotations

import copy
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import SplitDataset
from .grammar import Grammar, Literal, NonTerminal, ParamTerminal
from .network import LayerSpec, Network, NetworkSpec
from .training import TrainConfig, TrainingDiverged, train

NEURON_TOKEN_MAP = {"QMCLeaky": "qmcleaky", "MCLeaky": "mcleaky",
                    "LIF": "lif", "CLIF": "clif"}
HIDDEN_BLOCK_NTS = ("features", "classification")
OUTPUT_NT = "output"
LEARNING_NT = "learning"


@dataclass
class EvoConfig:
    generations: int = 16
    parents: int = 16
    offspring: int = 16
    add_layer: float = 0.15
    reuse_layer: float = 0.15
    remove_layer: float = 0.25
    dsge_mutation: float = 0.15
    macro_mutation: float = 0.3
    train_epochs: int = 3
    batch_size: int = 24
    max_hidden_blocks: int = 4
    input_dim: int | None = None  # None: taken from the dataset window_len
    t_steps: int = 25
    loss: str = "ce_rate"
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        for name in ("add_layer", "reuse_layer", "remove_layer",
                     "dsge_mutation", "macro_mutation"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {rate}")
        if self.generations < 0 or self.parents < 1 or self.offspring < 1:
            raise ValueError("bad population sizing")
        if self.max_hidden_blocks < 1:
            raise ValueError("max_hidden_blocks must be >= 1")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")


@dataclass
class Individual:
    """GA macro structure plus per-block DSGE derivations."""

    hidden: list[dict]
    output: dict
    learning: dict
    fitness: float | None = None

    @property
    def macro_units(self) -> list[dict]:
        return self.hidden + [self.output, self.learning]

    @property
    def genotype_id(self) -> str:
        payload = json.dumps(
            {"hidden": self.hidden, "output": self.output,
             "learning": self.learning}, sort_keys=True)
        return hashlib.sha1(payload.encode()).hexdigest()[:12]

    def to_json(self) -> str:
        return json.dumps({"hidden": self.hidden, "output": self.output,
                           "learning": self.learning,
                           "fitness": self.fitness})

    @classmethod
    def from_json(cls, s: str) -> "Individual":
        d = json.loads(s)
        return cls(d["hidden"], d["output"], d["learning"], d.get("fitness"))


# ---------------------------------------------------------------------------
# Derivation sampling
# ---------------------------------------------------------------------------

def _derive(grammar: Grammar, nt: str, rng) -> dict:
    """Sample a full derivation record for one nonterminal."""
    prods = grammar.productions(nt)
    choice = int(rng.integers(len(prods)))
    children = []
    for sym in prods[choice]:
        if isinstance(sym, NonTerminal):
            children.append(_derive(grammar, sym.name, rng))
        elif isinstance(sym, ParamTerminal):
            children.append({"param": sym.name, "values": sym.sample(rng)})
        else:
            children.append(None)
    return {"nt": nt, "choice": choice, "children": children}


def _hidden_block_options(grammar: Grammar) -> list[str]:
    options = [nt for nt in HIDDEN_BLOCK_NTS if nt in grammar.rules]
    if not options:
        raise ValueError("grammar defines no hidden-block rule")
    return options


def random_individual(grammar: Grammar, config: EvoConfig, rng) -> Individual:
    options = _hidden_block_options(grammar)
    n_blocks = int(rng.integers(1, config.max_hidden_blocks + 1))
    hidden = [_derive(grammar, options[int(rng.integers(len(options)))], rng)
              for _ in range(n_blocks)]
    return Individual(hidden=hidden,
                      output=_derive(grammar, OUTPUT_NT, rng),
                      learning=_derive(grammar, LEARNING_NT, rng))


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------

def _expand(record: dict, grammar: Grammar, tokens: list) -> None:
    nt = record["nt"]
    prods = grammar.productions(nt)
    choice = record["choice"]
    if not 0 <= choice < len(prods):
        raise ValueError(f"stale production choice {choice} for <{nt}>")
    prod = prods[choice]
    children = record["children"]
    if len(children) != len(prod):
        raise ValueError(f"derivation arity mismatch in <{nt}>")
    for sym, child in zip(prod, children):
        if isinstance(sym, NonTerminal):
            _expand(child, grammar, tokens)
        elif isinstance(sym, ParamTerminal):
            if child.get("param") != sym.name or len(child["values"]) != sym.count:
                raise ValueError(f"stale parameter record in <{nt}>")
            for v in child["values"]:
                tokens.append((sym.name, v))
        else:
            tokens.append(sym.text)


def decode(individual: Individual, grammar: Grammar, input_dim: int = 256,
           t_steps: int = 25) -> tuple[NetworkSpec, float]:
    """Materialize the phenotype: (network spec, learning rate)."""
    tokens: list = []
    for unit in individual.macro_units:
        _expand(unit, grammar, tokens)

    records: list[dict] = []
    current: dict | None = None
    for tok in tokens:
        if isinstance(tok, str):
            key, _, value = tok.partition(":")
            if key in ("layer", "learning"):
                current = {key: value}
                records.append(current)
                continue
            if current is None:
                raise ValueError(f"dangling token {tok!r}")
            current[key] = int(value) if value.lstrip("-").isdigit() else value
        else:
            name, value = tok
            if current is None:
                raise ValueError(f"parameter {name!r} outside any block")
            current[name] = value

    layers: list[LayerSpec] = []
    lr: float | None = None
    for rec in records:
        if "learning" in rec:
            if rec["learning"] != "adam":
                raise ValueError(f"unknown learning method {rec['learning']!r}")
            lr = float(rec["lr"])
            continue
        kind = rec["layer"]
        if kind == "qfc":
            layers.append(LayerSpec("qdense", units=int(rec["num-units"]),
                                    q_bits=int(rec["q_bits"])))
        elif kind == "fc":
            layers.append(LayerSpec("dense", units=int(rec["num-units"])))
        elif kind == "dropout":
            layers.append(LayerSpec("dropout", rate=float(rec["rate"])))
        elif kind == "act":
            neuron = NEURON_TOKEN_MAP.get(rec["neuron"])
            if neuron is None:
                raise ValueError(f"unknown neuron token {rec['neuron']!r}")
            layers.append(LayerSpec("activation", neuron=neuron,
                                    beta=float(rec["beta"]),
                                    threshold=float(rec["threshold"]),
                                    grad_slope=float(rec["grad_slope"])))
        else:
            raise ValueError(f"unknown layer token {kind!r}")
    if lr is None:
        raise ValueError("genotype has no learning block")

    spec = NetworkSpec(input_dim, layers, t_steps)
    spec.validate()
    return spec, lr


# ---------------------------------------------------------------------------
# Variation operators
# ---------------------------------------------------------------------------

def _perturb_params(record: dict, grammar: Grammar, rng) -> None:
    """Gaussian-perturb floats (sigma = 10% of range) and resample ints."""
    prod = grammar.productions(record["nt"])[record["choice"]]
    for sym, child in zip(prod, record["children"]):
        if isinstance(sym, NonTerminal):
            _perturb_params(child, grammar, rng)
        elif isinstance(sym, ParamTerminal):
            if sym.dtype == "int":
                child["values"] = sym.sample(rng)
            else:
                child["values"] = [
                    float(np.clip(v + rng.normal(0.0, 0.1 * (sym.hi - sym.lo)),
                                  sym.lo, sym.hi))
                    for v in child["values"]]


def mutate(individual: Individual, grammar: Grammar, config: EvoConfig,
           rng) -> Individual:
    """Apply the five mutation operators independently; clears fitness."""
    ind = Individual(copy.deepcopy(individual.hidden),
                     copy.deepcopy(individual.output),
                     copy.deepcopy(individual.learning))
    options = _hidden_block_options(grammar)

    if rng.random() < config.add_layer and len(ind.hidden) < config.max_hidden_blocks:
        block = _derive(grammar, options[int(rng.integers(len(options)))], rng)
        ind.hidden.insert(int(rng.integers(len(ind.hidden) + 1)), block)
    if rng.random() < config.reuse_layer and len(ind.hidden) < config.max_hidden_blocks:
        block = copy.deepcopy(ind.hidden[int(rng.integers(len(ind.hidden)))])
        ind.hidden.insert(int(rng.integers(len(ind.hidden) + 1)), block)
    if rng.random() < config.remove_layer and len(ind.hidden) > 1:
        del ind.hidden[int(rng.integers(len(ind.hidden)))]

    def vary(unit: dict) -> dict:
        if rng.random() < config.macro_mutation:
            unit = _derive(grammar, unit["nt"], rng)
        if rng.random() < config.dsge_mutation:
            _perturb_params(unit, grammar, rng)
        return unit

    ind.hidden = [vary(u) for u in ind.hidden]
    ind.output = vary(ind.output)
    ind.learning = vary(ind.learning)
    return ind


def crossover(a: Individual, b: Individual, rng) -> Individual:
    """One-point crossover over hidden blocks; head from a, tail from b."""
    k = int(rng.integers(1, min(len(a.hidden), len(b.hidden)) + 1))
    return Individual(
        hidden=copy.deepcopy(a.hidden[:k] + b.hidden[k:]),
        output=copy.deepcopy(b.output),
        learning=copy.deepcopy(b.learning),
    )


# ---------------------------------------------------------------------------
# Evolution loop
# ---------------------------------------------------------------------------

@dataclass
class EvoResult:
    best: Individual | None = None
    history: list[dict] = field(default_factory=list)
    archive: list[dict] = field(default_factory=list)
    evaluations: int = 0


def _evaluate(individual: Individual, grammar: Grammar, split: SplitDataset,
              config: EvoConfig, seed: int) -> float:
    input_dim = config.input_dim or split.train.window_len
    try:
        spec, lr = decode(individual, grammar, input_dim, config.t_steps)
        model = Network.build(spec, seed=seed)
        cfg = TrainConfig(epochs=config.train_epochs,
                          batch_size=config.batch_size, lr=lr,
                          loss=config.loss, seed=seed)
        history = train(model, split, cfg)
        return float(history[-1]["test_acc"])
    except TrainingDiverged:
        return 0.0
    except (FloatingPointError, OverflowError):
        return 0.0


def evolve(grammar: Grammar, split: SplitDataset, config: EvoConfig,
           progress: bool = False) -> EvoResult:
    """(mu + lambda) generational search with elitism via pooled selection."""
    master = np.random.SeedSequence(config.seed)
    evo_ss, eval_ss = master.spawn(2)
    rng = np.random.default_rng(evo_ss)
    result = EvoResult()

    def evaluate_wave(wave: list[Individual], generation: int) -> None:
        seeds = [int(ss.generate_state(1)[0]) for ss in eval_ss.spawn(len(wave))]
        if config.jobs == 1:
            scores = [_evaluate(ind, grammar, split, config, s)
                      for ind, s in zip(wave, seeds)]
        else:
            with ThreadPoolExecutor(max_workers=config.jobs) as pool:
                scores = list(pool.map(
                    lambda pair: _evaluate(pair[0], grammar, split, config,
                                           pair[1]),
                    zip(wave, seeds)))
        for ind, score in zip(wave, scores):
            ind.fitness = score
            result.archive.append({
                "generation": generation,
                "genotype_id": ind.genotype_id,
                "fitness": score,
                "genotype": ind.to_json(),
            })
        result.evaluations += len(wave)

    parents = [random_individual(grammar, config, rng)
               for _ in range(config.parents)]
    evaluate_wave(parents, 0)
    parents.sort(key=lambda ind: -ind.fitness)

    def record(generation: int) -> None:
        row = {
            "generation": generation,
            "best_fitness": parents[0].fitness,
            "mean_fitness": float(np.mean([p.fitness for p in parents])),
            "best_genotype_id": parents[0].genotype_id,
        }
        result.history.append(row)
        if progress:
            print(f"generation {generation:3d}  best {row['best_fitness']:.4f}"
                  f"  mean {row['mean_fitness']:.4f}")

    record(0)
    for gen in range(1, config.generations + 1):
        offspring = []
        for _ in range(config.offspring):
            p1 = parents[int(rng.integers(len(parents)))]
            p2 = parents[int(rng.integers(len(parents)))]
            offspring.append(mutate(crossover(p1, p2, rng), grammar, config,
                                    rng))
        evaluate_wave(offspring, gen)
        pool = parents + offspring
        pool.sort(key=lambda ind: -ind.fitness)  # stable: parents win ties
        parents = pool[: config.parents]
        record(gen)

    result.best = parents[0]
    return result


def history_to_csv(history: list[dict]) -> str:
    lines = ["generation,best_fitness,mean_fitness,best_genotype_id"]
    for row in history:
        lines.append(f"{row['generation']},{row['best_fitness']:.6f},"
                     f"{row['mean_fitness']:.6f},{row['best_genotype_id']}")
    return "\n".join(lines) + "\n"
