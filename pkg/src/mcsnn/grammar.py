"""BNF-style grammar for the architecture search space.

The grammar text uses one syntax with three symbol kinds:

* ``<name>`` references another rule,
* ``[name,type,count,min,max]`` is an evolvable parameter terminal
  (``type`` is ``int`` or ``float``, ``count`` values are sampled, all
  within ``[min, max]`` inclusive),
* ``key:value`` is a literal token passed through to the decoder.

Rules are written ``<name> ::= production | production``. A production
may wrap across lines; a continuation line starting with ``|`` opens a
new alternative. Adjacent symbols need no whitespace.
"""

from __future__ import annotations

from dataclasses import dataclass

PARAM_DTYPES = ("int", "float")


@dataclass(frozen=True)
class NonTerminal:
    name: str


@dataclass(frozen=True)
class Literal:
    text: str


@dataclass(frozen=True)
class ParamTerminal:
    name: str
    dtype: str
    count: int
    lo: float
    hi: float

    def sample(self, rng) -> list:
        if self.dtype == "int":
            return [int(rng.integers(int(self.lo), int(self.hi) + 1))
                    for _ in range(self.count)]
        return [float(rng.uniform(self.lo, self.hi)) for _ in range(self.count)]

    def contains(self, value) -> bool:
        return self.lo <= value <= self.hi


Symbol = NonTerminal | Literal | ParamTerminal
Production = list


@dataclass
class Grammar:
    rules: dict[str, list[Production]]

    def productions(self, name: str) -> list[Production]:
        try:
            return self.rules[name]
        except KeyError:
            raise KeyError(f"grammar has no rule <{name}>") from None

    def validate(self) -> None:
        for name, prods in self.rules.items():
            for prod in prods:
                for sym in prod:
                    if isinstance(sym, NonTerminal) and sym.name not in self.rules:
                        raise ValueError(
                            f"rule <{name}> references undefined <{sym.name}>")


class GrammarSyntaxError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def _parse_param(body: str, line_no: int) -> ParamTerminal:
    parts = [p.strip() for p in body.split(",")]
    if len(parts) != 5:
        raise GrammarSyntaxError(
            line_no, f"parameter terminal [{body}] needs 5 fields")
    name, dtype, count, lo, hi = parts
    if dtype not in PARAM_DTYPES:
        raise GrammarSyntaxError(line_no, f"unknown parameter type {dtype!r}")
    try:
        count = int(count)
        lo = float(lo)
        hi = float(hi)
    except ValueError:
        raise GrammarSyntaxError(
            line_no, f"non-numeric field in [{body}]") from None
    if count < 1:
        raise GrammarSyntaxError(line_no, "parameter count must be >= 1")
    if lo > hi:
        raise GrammarSyntaxError(line_no, f"empty range in [{body}]")
    return ParamTerminal(name, dtype, count, lo, hi)


def _tokenize(text: str, line_no: int) -> list[Symbol]:
    symbols = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch == "<":
            end = text.find(">", i)
            if end < 0:
                raise GrammarSyntaxError(line_no, "unclosed '<'")
            name = text[i + 1 : end].strip()
            if not name:
                raise GrammarSyntaxError(line_no, "empty nonterminal name")
            symbols.append(NonTerminal(name))
            i = end + 1
        elif ch == "[":
            end = text.find("]", i)
            if end < 0:
                raise GrammarSyntaxError(line_no, "unclosed '['")
            symbols.append(_parse_param(text[i + 1 : end], line_no))
            i = end + 1
        else:
            j = i
            while j < n and text[j] not in "<[|" and not text[j].isspace():
                j += 1
            word = text[i:j]
            if ":" not in word:
                raise GrammarSyntaxError(
                    line_no, f"literal {word!r} must be key:value")
            symbols.append(Literal(word))
            i = j
    return symbols


def parse_grammar(text: str) -> Grammar:
    """Parse grammar text into rules; rejects dangling references."""
    rules: dict[str, list[Production]] = {}
    current: str | None = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "::=" in line:
            head, _, body = line.partition("::=")
            head = head.strip()
            if not (head.startswith("<") and head.endswith(">")):
                raise GrammarSyntaxError(line_no, f"bad rule head {head!r}")
            current = head[1:-1].strip()
            if current in rules:
                raise GrammarSyntaxError(line_no, f"duplicate rule <{current}>")
            rules[current] = [[]]
        else:
            body = line
            if current is None:
                raise GrammarSyntaxError(line_no, "content before first rule")
        for alt in _split_alternatives(body):
            new_alt, chunk = alt
            if new_alt:
                rules[current].append([])
            rules[current][-1].extend(_tokenize(chunk, line_no))
    grammar = Grammar({k: v for k, v in rules.items()})
    for name, prods in grammar.rules.items():
        if any(len(p) == 0 for p in prods):
            raise ValueError(f"rule <{name}> has an empty production")
    grammar.validate()
    return grammar


def _split_alternatives(body: str):
    """Yield (starts_new_alternative, chunk) pieces of a production body."""
    first = True
    for chunk in body.split("|"):
        yield (not first, chunk)
        first = False


# ---------------------------------------------------------------------------
# Shipped grammars
# ---------------------------------------------------------------------------

# Quantized search space: qdense layers with per-layer bit widths and the
# hardware-constrained neuron.
QMCLEAKY_GRAMMAR_TEXT = """\
<features> ::= <fully-connected>
               <activation_cl>
<beta>     ::= [beta,float,1,0,1]
<threshold>::= [threshold,float,1,0.1,10]
<sur_grad_slope>::=[grad_slope,int,1,1,30]
<classification> ::=<fully-connected>
                    <activation_cl>
                   |<dropout>
<dropout>::=layer:dropout[rate,float,1,0,0.5]
<fully-connected>::=layer:qfc
                    [num-units,int,1,16,1024]
                    <q_bits>
<output> ::= <fully-last> <activation_final>
<activation_cl>::=layer:act <beta><threshold>
                  <neuron_cl><sur_grad_slope>
<neuron_cl>       ::=neuron:QMCLeaky
<activation_final>::=layer:act <beta>
                     <threshold> <neuron_cl>
                     <sur_grad_slope>
<fully-last>::=layer:qfc num-units:2 <q_bits>
<q_bits>   ::= [q_bits,int,1,4,32]
<learning> ::= <adam>
<adam>     ::= learning:adam
               [lr,float,1,0.001,0.1]
"""

# Float search space: plain dense layers and the float multi-compartment
# neuron, otherwise the same ranges.
MCLEAKY_GRAMMAR_TEXT = """\
<features> ::= <fully-connected>
               <activation_cl>
<beta>     ::= [beta,float,1,0,1]
<threshold>::= [threshold,float,1,0.1,10]
<sur_grad_slope>::=[grad_slope,int,1,1,30]
<classification> ::=<fully-connected>
                    <activation_cl>
                   |<dropout>
<dropout>::=layer:dropout[rate,float,1,0,0.5]
<fully-connected>::=layer:fc
                    [num-units,int,1,16,1024]
<output> ::= <fully-last> <activation_final>
<activation_cl>::=layer:act <beta><threshold>
                  <neuron_cl><sur_grad_slope>
<neuron_cl>       ::=neuron:MCLeaky
<activation_final>::=layer:act <beta>
                     <threshold> <neuron_cl>
                     <sur_grad_slope>
<fully-last>::=layer:fc num-units:2
<learning> ::= <adam>
<adam>     ::= learning:adam
               [lr,float,1,0.001,0.1]
"""

GRAMMAR_PRESETS = {
    "qmcleaky": QMCLEAKY_GRAMMAR_TEXT,
    "mcleaky": MCLEAKY_GRAMMAR_TEXT,
}


def load_grammar(source: str) -> Grammar:
    """Parse a preset name or raw grammar text."""
    return parse_grammar(GRAMMAR_PRESETS.get(source, source))
