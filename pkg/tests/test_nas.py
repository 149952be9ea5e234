"""Grammar parsing and evolutionary-search tests."""

import numpy as np
import pytest

from mcsnn import data
from mcsnn.grammar import (GrammarSyntaxError, Literal, NonTerminal,
                           ParamTerminal, load_grammar, parse_grammar)
from mcsnn.nas import (EvoConfig, Individual, crossover, decode, evolve,
                       history_to_csv, mutate, random_individual)

PARAM_BOUNDS = {
    "q_bits": (4, 32, "int"),
    "lr": (0.001, 0.1, "float"),
    "threshold": (0.1, 10.0, "float"),
    "grad_slope": (1, 30, "int"),
    "rate": (0.0, 0.5, "float"),
    "beta": (0.0, 1.0, "float"),
    "num-units": (16, 1024, "int"),
}


def walk_params(node, out):
    if isinstance(node, dict):
        if "param" in node:
            out.append((node["param"], node["values"]))
        for child in node.get("children", []):
            walk_params(child, out)


def collect_params(ind):
    out = []
    for unit in ind.macro_units:
        walk_params(unit, out)
    return out


def assert_in_bounds(ind):
    for name, values in collect_params(ind):
        lo, hi, dtype = PARAM_BOUNDS[name]
        for v in values:
            assert lo <= v <= hi, f"{name}={v} outside [{lo}, {hi}]"
            if dtype == "int":
                assert float(v) == int(v)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def test_parse_single_param_rule():
    g = parse_grammar("<q_bits> ::= [q_bits,int,1,4,32]")
    assert list(g.rules) == ["q_bits"]
    (prod,) = g.productions("q_bits")
    (sym,) = prod
    assert sym == ParamTerminal("q_bits", "int", 1, 4.0, 32.0)


def test_parse_mixed_production():
    g = parse_grammar("<fully-last>::=layer:qfc num-units:2 [q_bits,int,1,4,32]")
    (prod,) = g.productions("fully-last")
    assert prod[0] == Literal("layer:qfc")
    assert prod[1] == Literal("num-units:2")
    assert isinstance(prod[2], ParamTerminal)


def test_parse_adjacent_symbols_and_continuations():
    g = parse_grammar(
        "<a> ::= layer:act <b><c>\n"
        "        x:y\n"
        "       | <c>\n"
        "<b> ::= k:v\n"
        "<c> ::= [t,float,1,0,1]\n")
    prods = g.productions("a")
    assert len(prods) == 2
    assert prods[0] == [Literal("layer:act"), NonTerminal("b"),
                        NonTerminal("c"), Literal("x:y")]
    assert prods[1] == [NonTerminal("c")]


def test_parse_dangling_reference():
    with pytest.raises(ValueError, match="undefined"):
        parse_grammar("<a> ::= <b>")


def test_parse_errors_carry_line_numbers():
    with pytest.raises(GrammarSyntaxError, match="line 2"):
        parse_grammar("<a> ::= x:y\n<b> ::= [broken,int,1]\n")
    with pytest.raises(GrammarSyntaxError, match="line 1"):
        parse_grammar("<a> ::= word_without_colon")
    with pytest.raises(GrammarSyntaxError, match="line 1"):
        parse_grammar("<a> ::= <unclosed")
    with pytest.raises(GrammarSyntaxError, match="line 2"):
        parse_grammar("<a> ::= x:y\n<a> ::= z:w")
    with pytest.raises(GrammarSyntaxError):
        parse_grammar("stray:token\n<a> ::= x:y")


def test_parse_rejects_bad_param_fields():
    with pytest.raises(GrammarSyntaxError, match="type"):
        parse_grammar("<a> ::= [x,bool,1,0,1]")
    with pytest.raises(GrammarSyntaxError, match="range"):
        parse_grammar("<a> ::= [x,int,1,5,4]")
    with pytest.raises(ValueError, match="empty production"):
        parse_grammar("<a> ::= x:y |")


def test_presets_parse():
    for name in ("qmcleaky", "mcleaky"):
        g = load_grammar(name)
        assert "output" in g.rules and "learning" in g.rules


# ---------------------------------------------------------------------------
# Sampling and bounds
# ---------------------------------------------------------------------------

def test_sampled_parameters_respect_bounds_in_bulk():
    g = load_grammar("qmcleaky")
    cfg = EvoConfig()
    rng = np.random.default_rng(123)
    seen = set()
    for _ in range(10_000):
        ind = random_individual(g, cfg, rng)
        assert_in_bounds(ind)
        for name, _ in collect_params(ind):
            seen.add(name)
    assert {"q_bits", "lr", "threshold", "grad_slope", "beta",
            "num-units"} <= seen


def test_random_individuals_all_decode():
    g = load_grammar("qmcleaky")
    cfg = EvoConfig()
    rng = np.random.default_rng(5)
    for _ in range(1000):
        ind = random_individual(g, cfg, rng)
        spec, lr = decode(ind, g, input_dim=64, t_steps=8)
        spec.validate()
        assert 0.001 <= lr <= 0.1
        assert spec.layers[-2].units == 2
        assert 1 <= len(ind.hidden) <= cfg.max_hidden_blocks


def test_sampling_is_deterministic():
    g = load_grammar("qmcleaky")
    cfg = EvoConfig()
    a = random_individual(g, cfg, np.random.default_rng(42))
    b = random_individual(g, cfg, np.random.default_rng(42))
    assert a.genotype_id == b.genotype_id


# ---------------------------------------------------------------------------
# Decode
# ---------------------------------------------------------------------------

def minimal_individual(g, units=24, q_bits=8):
    """Hand-built genotype: one fc+act block, output, adam."""
    def derive_first(nt, rng):
        # always choice 0, fixed param values where we care
        from mcsnn.nas import _derive
        return _derive(g, nt, rng)

    rng = np.random.default_rng(0)
    ind = Individual(hidden=[derive_first("features", rng)],
                     output=derive_first("output", rng),
                     learning=derive_first("learning", rng))
    return ind


def test_decode_minimal_genotype_shape():
    g = load_grammar("mcleaky")
    ind = minimal_individual(g)
    spec, lr = decode(ind, g, input_dim=16, t_steps=5)
    kinds = [l.kind for l in spec.layers]
    assert kinds == ["dense", "activation", "dense", "activation"]
    assert spec.layers[2].units == 2
    assert spec.layers[1].neuron == "mcleaky"
    assert spec.input_dim == 16 and spec.t_steps == 5


def test_decode_is_deterministic_and_validates():
    g = load_grammar("qmcleaky")
    rng = np.random.default_rng(9)
    ind = random_individual(g, EvoConfig(), rng)
    a = decode(ind, g, 32, 6)
    b = decode(ind, g, 32, 6)
    assert a[0].to_json() == b[0].to_json() and a[1] == b[1]
    # stale choice index rejected
    bad = Individual.from_json(ind.to_json())
    bad.output["choice"] = 7
    with pytest.raises(ValueError):
        decode(bad, g, 32, 6)


def test_decoded_qfc_layers_are_quantized():
    g = load_grammar("qmcleaky")
    ind = random_individual(g, EvoConfig(), np.random.default_rng(3))
    spec, _ = decode(ind, g, 32, 6)
    weighted = [l for l in spec.layers if l.kind in ("dense", "qdense")]
    assert all(l.kind == "qdense" and 4 <= l.q_bits <= 32 for l in weighted)
    acts = [l for l in spec.layers if l.kind == "activation"]
    assert all(l.neuron == "qmcleaky" for l in acts)


# ---------------------------------------------------------------------------
# Variation operators
# ---------------------------------------------------------------------------

def test_mutate_identity_when_rates_zero():
    g = load_grammar("qmcleaky")
    zero = EvoConfig(add_layer=0, reuse_layer=0, remove_layer=0,
                     dsge_mutation=0, macro_mutation=0)
    ind = random_individual(g, zero, np.random.default_rng(1))
    out = mutate(ind, g, zero, np.random.default_rng(2))
    assert out.genotype_id == ind.genotype_id
    assert out.fitness is None


def test_mutate_forced_removal():
    g = load_grammar("qmcleaky")
    cfg = EvoConfig(add_layer=0, reuse_layer=0, remove_layer=1.0,
                    dsge_mutation=0, macro_mutation=0)
    rng = np.random.default_rng(0)
    ind = random_individual(g, EvoConfig(), rng)
    while len(ind.hidden) != 2:
        ind = random_individual(g, EvoConfig(), rng)
    out = mutate(ind, g, cfg, rng)
    assert len(out.hidden) == 1


def test_mutation_closure_and_bounds():
    g = load_grammar("qmcleaky")
    cfg = EvoConfig()
    rng = np.random.default_rng(8)
    ind = random_individual(g, cfg, rng)
    for _ in range(1000):
        ind = mutate(ind, g, cfg, rng)
        assert_in_bounds(ind)
        spec, _ = decode(ind, g, 32, 4)
        spec.validate()
        assert 1 <= len(ind.hidden) <= cfg.max_hidden_blocks


def test_crossover_self_identity_and_bounds():
    g = load_grammar("qmcleaky")
    cfg = EvoConfig()
    rng = np.random.default_rng(4)
    a = random_individual(g, cfg, rng)
    clone = crossover(a, a, np.random.default_rng(0))
    assert clone.genotype_id == a.genotype_id
    for _ in range(200):
        b = random_individual(g, cfg, rng)
        child = crossover(a, b, rng)
        decode(child, g, 32, 4)
        lo = min(len(a.hidden), len(b.hidden))
        hi = len(a.hidden) + len(b.hidden) - 1
        assert lo <= len(child.hidden) <= hi
    c1 = crossover(a, b, np.random.default_rng(11))
    c2 = crossover(a, b, np.random.default_rng(11))
    assert c1.genotype_id == c2.genotype_id


# ---------------------------------------------------------------------------
# Evolution loop
# ---------------------------------------------------------------------------

def tiny_split():
    ds = data.synth_dataset(40, 16, seed=2)
    return data.split(ds, 0.75, seed=2)


def test_evolve_returns_argmax_of_two():
    g = load_grammar("qmcleaky")
    cfg = EvoConfig(generations=1, parents=2, offspring=2, train_epochs=1,
                    batch_size=8, t_steps=4, seed=3)
    res = evolve(g, tiny_split(), cfg)
    assert res.best.fitness == max(r["fitness"] for r in res.archive)
    assert res.evaluations == 2 + 2


def test_evolve_history_monotone_and_deterministic():
    g = load_grammar("qmcleaky")
    cfg = EvoConfig(generations=3, parents=3, offspring=3, train_epochs=1,
                    batch_size=8, t_steps=4, seed=0)
    r1 = evolve(g, tiny_split(), cfg)
    bests = [row["best_fitness"] for row in r1.history]
    assert len(bests) == 4  # initial population + 3 generations
    assert all(b2 >= b1 for b1, b2 in zip(bests, bests[1:]))
    r2 = evolve(g, tiny_split(), cfg)
    assert r1.best.genotype_id == r2.best.genotype_id
    assert r1.history == r2.history


def test_evolve_invariant_under_jobs():
    g = load_grammar("qmcleaky")
    base = dict(generations=2, parents=2, offspring=3, train_epochs=1,
                batch_size=8, t_steps=4, seed=1)
    r1 = evolve(g, tiny_split(), EvoConfig(**base, jobs=1))
    r3 = evolve(g, tiny_split(), EvoConfig(**base, jobs=3))
    assert r1.history == r3.history
    assert r1.best.genotype_id == r3.best.genotype_id
    assert [a["fitness"] for a in r1.archive] == [a["fitness"] for a in r3.archive]


def test_evoconfig_validation():
    with pytest.raises(ValueError):
        EvoConfig(add_layer=1.5)
    with pytest.raises(ValueError):
        EvoConfig(parents=0)
    with pytest.raises(ValueError):
        EvoConfig(jobs=0)


def test_history_csv_format():
    rows = [{"generation": 0, "best_fitness": 0.5, "mean_fitness": 0.25,
             "best_genotype_id": "abc123"}]
    text = history_to_csv(rows)
    lines = text.strip().split("\n")
    assert lines[0] == "generation,best_fitness,mean_fitness,best_genotype_id"
    assert lines[1] == "0,0.500000,0.250000,abc123"


def test_archive_records_are_replayable():
    g = load_grammar("qmcleaky")
    cfg = EvoConfig(generations=1, parents=2, offspring=2, train_epochs=1,
                    batch_size=8, t_steps=4, seed=5)
    res = evolve(g, tiny_split(), cfg)
    for rec in res.archive:
        ind = Individual.from_json(rec["genotype"])
        assert ind.genotype_id == rec["genotype_id"]
        spec, _ = decode(ind, g, 16, 4)
        spec.validate()
