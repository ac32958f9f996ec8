"""Abstract domains over a bounded concrete universe: component lattices
with their Galois connections, product values, the reduction operator, the
brute-force ideal-transformer oracle, and direct-product baselines.

Interval-family domains keep -inf/+inf limits symbolically so the DSL's
infinity constants stay meaningful; concretization is always taken relative
to a UniverseConfig.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field as dataclass_field
from functools import lru_cache

from . import sexpr
from .extint import INF, NINF, eadd, emax, emin, esub, is_finite, is_nan, fmt as efmt, parse as eparse
from .universe import (
    NUM_STR, OTHER_STR, SPECIAL_STR, ConcreteOp, UniverseConfig, UsageError,
    classify_numeric, classify_special, op_eval,
)


class DomainError(UsageError):
    pass


class IndeterminateError(Exception):
    """A bounded computation exceeded its budget; never silently resolved."""


# --- abstract values ---------------------------------------------------------

@dataclass(frozen=True)
class Interval:
    lo: float | int
    hi: float | int


BOT_INTERVAL = Interval(INF, NINF)
TOP_INTERVAL = Interval(NINF, INF)


@dataclass(frozen=True)
class StrSet:
    """SS_k / constant-string value: 'bot', 'set' (non-empty, small), 'top'."""
    tag: str
    items: frozenset | None = None


SS_BOT = StrSet("bot")
SS_TOP = StrSet("top")


@dataclass(frozen=True)
class FlatVal:
    """Flat lattice over naturals (charAt's index argument)."""
    tag: str
    value: int | None = None


FLAT_BOT = FlatVal("bot")
FLAT_TOP = FlatVal("top")

# Class-lattice values (NO / NOS / abstract booleans) are plain frozensets of
# atom names; bottom is the empty set, top is the full atom set.


class Domain:
    """A component lattice plus its Galois connection to the universe."""

    name: str
    kind: str  # concrete carrier: 'int' | 'str' | 'bool' | 'nat'

    def is_bot(self, v) -> bool:
        raise NotImplementedError

    def is_top(self, v) -> bool:
        raise NotImplementedError

    def leq(self, a, b) -> bool:
        raise NotImplementedError

    def join(self, a, b):
        raise NotImplementedError

    def meet(self, a, b):
        raise NotImplementedError

    def alpha(self, values):
        """Most precise abstraction of a finite iterable of concrete values."""
        raise NotImplementedError

    def contains(self, v, c) -> bool:
        """c in gamma(v)."""
        raise NotImplementedError

    def check_value(self, v) -> None:
        """Raise DomainError if v breaks the domain invariants."""
        raise NotImplementedError

    def sort_key(self, v):
        """Deterministic (width, shape) key for grid ordering."""
        raise NotImplementedError

    def format_value(self, v):
        raise NotImplementedError

    def parse_value(self, node):
        raise NotImplementedError

    def __repr__(self):
        return f"<domain {self.name}>"


class IntervalDomain(Domain):
    kind = "int"

    def __init__(self, name: str, parity: str = "any"):
        if parity not in ("any", "odd", "even"):
            raise DomainError(f"bad parity {parity!r}")
        self.name = name
        self.parity = parity

    @property
    def bot(self):
        return BOT_INTERVAL

    @property
    def top(self):
        return TOP_INTERVAL

    def limit_ok(self, x) -> bool:
        if not is_finite(x):
            return not is_nan(x)
        if self.parity == "odd":
            return int(x) % 2 != 0
        if self.parity == "even":
            return int(x) % 2 == 0
        return True

    def round_down(self, x):
        """Largest domain-valid limit <= x (alpha's lower rounding)."""
        if not is_finite(x):
            return x
        x = int(x)
        return x if self.limit_ok(x) else x - 1

    def round_up(self, x):
        if not is_finite(x):
            return x
        x = int(x)
        return x if self.limit_ok(x) else x + 1

    def make(self, lo, hi) -> Interval:
        if is_nan(lo):
            lo = NINF
        if is_nan(hi):
            hi = INF
        if lo > hi:
            return BOT_INTERVAL
        lo = int(lo) if is_finite(lo) else lo
        hi = int(hi) if is_finite(hi) else hi
        return Interval(lo, hi)

    def is_bot(self, v):
        return v.lo > v.hi

    def is_top(self, v):
        return v.lo == NINF and v.hi == INF

    def leq(self, a, b):
        if self.is_bot(a):
            return True
        if self.is_bot(b):
            return False
        return a.lo >= b.lo and a.hi <= b.hi

    def join(self, a, b):
        if self.is_bot(a):
            return b
        if self.is_bot(b):
            return a
        return Interval(emin(a.lo, b.lo), emax(a.hi, b.hi))

    def meet(self, a, b):
        return self.make(emax(a.lo, b.lo), emin(a.hi, b.hi))

    def alpha(self, values):
        lo, hi = INF, NINF
        for v in values:
            if v < lo:
                lo = v
            if v > hi:
                hi = v
        if lo > hi:
            return BOT_INTERVAL
        return Interval(self.round_down(lo), self.round_up(hi))

    def contains(self, v, c):
        return v.lo <= c <= v.hi

    def gamma_values(self, v, lo_bound: int, hi_bound: int) -> range:
        """gamma(v) clipped to [lo_bound, hi_bound]; parity never restricts it."""
        if self.is_bot(v):
            return range(0)
        lo = int(max(v.lo, lo_bound))
        hi = int(min(v.hi, hi_bound))
        return range(lo, hi + 1)

    def check_value(self, v):
        if self.is_bot(v):
            if v != BOT_INTERVAL:
                raise DomainError("non-canonical bottom interval")
            return
        if not (self.limit_ok(v.lo) and self.limit_ok(v.hi)):
            raise DomainError(f"{self.name}: limit parity violated in {v}")

    def sort_key(self, v):
        if self.is_bot(v):
            return (-1.0, 0.0, 0.0)
        width = v.hi - v.lo if is_finite(v.lo) and is_finite(v.hi) else INF
        return (float(width), float(v.lo), float(v.hi))

    def format_value(self, v):
        if self.is_bot(v):
            return ["bot"]
        return ["interval", efmt(v.lo), efmt(v.hi)]

    def parse_value(self, node):
        if node == ["bot"] or node == "bot":
            return BOT_INTERVAL
        if node == ["top"] or node == "top":
            return TOP_INTERVAL
        if not (isinstance(node, list) and len(node) == 3 and node[0] == "interval"):
            raise DomainError(f"bad interval literal {node!r}")
        v = self.make(eparse(node[1]), eparse(node[2]))
        self.check_value(v)
        return v


class ClassDomain(Domain):
    """Powerset lattice over classification atoms (NO, NOS, abstract bools,
    and config-declared finite domains)."""

    def __init__(self, name: str, atoms: tuple[str, ...], classify, kind: str = "str",
                 named: dict[str, frozenset] | None = None,
                 vocab: dict[str, str] | None = None):
        self.name = name
        self.atoms = atoms
        self.classify = classify
        self.kind = kind
        self.top = frozenset(atoms)
        self.bot = frozenset()
        self.named = dict(named or {})
        self._name_of = {v: k for k, v in self.named.items()}
        # atom -> predicate kind, for output-universe realizability reasoning
        self.vocab = dict(vocab or {})

    def realizable_atoms(self, cfg: UniverseConfig) -> frozenset:
        """Atoms that actually occur among output-universe values."""
        if self.kind == "bool":
            return self.top
        out = set()
        for atom in self.atoms:
            pred = self.vocab.get(atom, "other")
            if pred == "other":
                out.add(atom)  # the empty string is always classified other
            elif pred == "numeric":
                if any(c.isdigit() for c in cfg.alphabet) or (
                        set("NaN") <= set(cfg.alphabet) and cfg.max_out_len >= 3):
                    out.add(atom)
            elif pred == "special":
                if any(len(kw) <= cfg.max_out_len and set(kw) <= set(cfg.alphabet)
                       for kw in cfg.special_keywords):
                    out.add(atom)
        return frozenset(out)

    def is_bot(self, v):
        return not v

    def is_top(self, v):
        return v == self.top

    def leq(self, a, b):
        return a <= b

    def join(self, a, b):
        return a | b

    def meet(self, a, b):
        return a & b

    def alpha(self, values):
        out = set()
        for c in values:
            out.add(self.classify(c))
            if len(out) == len(self.atoms):
                break
        return frozenset(out)

    def contains(self, v, c):
        return self.classify(c) in v

    def check_value(self, v):
        if not v <= self.top:
            raise DomainError(f"{self.name}: unknown atoms in {set(v)}")

    def sort_key(self, v):
        bits = tuple(int(a in v) for a in self.atoms)
        return (float(len(v)), bits)

    def format_value(self, v):
        if not v:
            return ["bot"]
        if v in self._name_of:
            return ["class", self._name_of[v]]
        return ["class"] + [a for a in self.atoms if a in v]

    def parse_value(self, node):
        if node == ["bot"] or node == "bot":
            return self.bot
        if node == ["top"] or node == "top":
            return self.top
        if not (isinstance(node, list) and node and node[0] == "class"):
            raise DomainError(f"bad class literal {node!r}")
        out = set()
        for atom in node[1:]:
            if atom == "top":
                return self.top
            if atom in self.named:
                out |= self.named[atom]
            elif atom in self.atoms:
                out.add(atom)
            else:
                raise DomainError(f"{self.name}: unknown class {atom!r}")
        return frozenset(out)


class StringSetDomain(Domain):
    """SS_k: precise sets of at most k strings, else top."""

    kind = "str"
    literal = "sset"

    def __init__(self, name: str, k: int):
        if k < 1:
            raise DomainError("k must be >= 1")
        self.name = name
        self.k = k
        self.bot = SS_BOT
        self.top = SS_TOP

    def make(self, items) -> StrSet:
        items = frozenset(items)
        if not items:
            return SS_BOT
        if len(items) > self.k:
            return SS_TOP
        return StrSet("set", items)

    def is_bot(self, v):
        return v.tag == "bot"

    def is_top(self, v):
        return v.tag == "top"

    def leq(self, a, b):
        if a.tag == "bot" or b.tag == "top":
            return True
        if b.tag == "bot" or a.tag == "top":
            return False
        return a.items <= b.items

    def join(self, a, b):
        if a.tag == "bot":
            return b
        if b.tag == "bot":
            return a
        if a.tag == "top" or b.tag == "top":
            return SS_TOP
        return self.make(a.items | b.items)

    def meet(self, a, b):
        if a.tag == "top":
            return b
        if b.tag == "top":
            return a
        if a.tag == "bot" or b.tag == "bot":
            return SS_BOT
        return self.make(a.items & b.items)

    def alpha(self, values):
        out = set()
        for c in values:
            out.add(c)
            if len(out) > self.k:
                return SS_TOP
        return self.make(out)

    def contains(self, v, c):
        if v.tag == "top":
            return True
        if v.tag == "bot":
            return False
        return c in v.items

    def check_value(self, v):
        if v.tag == "set" and not (v.items and len(v.items) <= self.k):
            raise DomainError(f"{self.name}: set payload must have 1..{self.k} strings")

    def sort_key(self, v):
        if v.tag == "bot":
            return (-1.0, ())
        if v.tag == "top":
            return (INF, ())
        return (float(len(v.items)), tuple(sorted((len(s), s) for s in v.items)))

    def format_value(self, v):
        if v.tag == "bot":
            return ["bot"]
        if v.tag == "top":
            return ["top"]
        return [self.literal] + [sexpr.qstr(s) for s in sorted(v.items, key=lambda s: (len(s), s))]

    def parse_value(self, node):
        if node == ["bot"] or node == "bot":
            return SS_BOT
        if node == ["top"] or node == "top":
            return SS_TOP
        if not (isinstance(node, list) and node and node[0] in ("sset", "const")):
            raise DomainError(f"bad string-set literal {node!r}")
        items = []
        for it in node[1:]:
            if not sexpr.is_qstr(it):
                raise DomainError("string-set members must be quoted strings")
            items.append(it[1])
        v = self.make(items)
        if v.tag == "top":
            raise DomainError(f"{self.name}: more than {self.k} strings in literal")
        return v


class ConstStringDomain(StringSetDomain):
    """CS: a single tracked string, else top (SS_1 with its own spelling)."""

    literal = "const"

    def __init__(self, name: str):
        super().__init__(name, 1)


class FlatNumDomain(Domain):
    kind = "nat"

    def __init__(self, name: str, max_value: int):
        self.name = name
        self.max_value = max_value
        self.bot = FLAT_BOT
        self.top = FLAT_TOP

    def make(self, n: int) -> FlatVal:
        return FlatVal("const", n)

    def is_bot(self, v):
        return v.tag == "bot"

    def is_top(self, v):
        return v.tag == "top"

    def leq(self, a, b):
        if a.tag == "bot" or b.tag == "top":
            return True
        if b.tag == "bot" or a.tag == "top":
            return False
        return a.value == b.value

    def join(self, a, b):
        if a.tag == "bot":
            return b
        if b.tag == "bot":
            return a
        if a == b:
            return a
        return FLAT_TOP

    def meet(self, a, b):
        if a.tag == "top":
            return b
        if b.tag == "top":
            return a
        if a == b:
            return a
        return FLAT_BOT

    def alpha(self, values):
        out = FLAT_BOT
        for c in values:
            out = self.join(out, self.make(c))
            if out.tag == "top":
                break
        return out

    def contains(self, v, c):
        if v.tag == "top":
            return 0 <= c <= self.max_value
        if v.tag == "bot":
            return False
        return v.value == c

    def gamma_values(self, v):
        if v.tag == "top":
            return range(0, self.max_value + 1)
        if v.tag == "bot":
            return range(0)
        return range(v.value, v.value + 1)

    def check_value(self, v):
        if v.tag == "const" and not (0 <= v.value <= self.max_value):
            raise DomainError(f"{self.name}: {v.value} outside 0..{self.max_value}")

    def sort_key(self, v):
        if v.tag == "bot":
            return (-1.0, 0)
        if v.tag == "top":
            return (INF, 0)
        return (0.0, v.value)

    def format_value(self, v):
        if v.tag == "bot":
            return ["bot"]
        if v.tag == "top":
            return ["top"]
        return ["nat", str(v.value)]

    def parse_value(self, node):
        if node == ["bot"] or node == "bot":
            return FLAT_BOT
        if node == ["top"] or node == "top":
            return FLAT_TOP
        if not (isinstance(node, list) and len(node) == 2 and node[0] == "nat"):
            raise DomainError(f"bad nat literal {node!r}")
        v = self.make(int(node[1]))
        self.check_value(v)
        return v


def lattice_op(domain: Domain, which: str, a, b):
    """Dispatch leq/join/meet with cross-domain mixing rejected."""
    domain.check_value(a)
    domain.check_value(b)
    if which == "leq":
        return domain.leq(a, b)
    if which == "join":
        return domain.join(a, b)
    if which == "meet":
        return domain.meet(a, b)
    raise UsageError(f"unknown lattice op {which!r}")


# --- built-in domain factory --------------------------------------------------

def make_domain(name: str, cfg: UniverseConfig) -> Domain:
    if name in ("interval", "int"):
        return IntervalDomain("interval", "any")
    if name in ("odd", "odd_interval"):
        return IntervalDomain("odd", "odd")
    if name in ("even", "even_interval"):
        return IntervalDomain("even", "even")
    if name in ("ssk", "string_set"):
        return StringSetDomain("ssk", cfg.ssk_k)
    if name == "no":
        return ClassDomain("no", (NUM_STR, OTHER_STR), classify_numeric,
                           vocab={NUM_STR: "numeric", OTHER_STR: "other"})
    if name == "nos":
        kws = cfg.special_keywords
        return ClassDomain(
            "nos", (NUM_STR, SPECIAL_STR, OTHER_STR),
            lambda s: classify_special(s, kws),
            named={
                "notnum": frozenset({SPECIAL_STR, OTHER_STR}),
                "notspecial": frozenset({NUM_STR, OTHER_STR}),
                "notother": frozenset({NUM_STR, SPECIAL_STR}),
            },
            vocab={NUM_STR: "numeric", SPECIAL_STR: "special", OTHER_STR: "other"},
        )
    if name == "cs":
        return ConstStringDomain("cs")
    if name in ("absbool", "bool"):
        return ClassDomain("absbool", ("false", "true"),
                           lambda b: "true" if b else "false", kind="bool")
    if name == "pos":
        return FlatNumDomain("pos", cfg.max_len)
    raise DomainError(f"unknown domain {name!r}")


CLASSIFIER_PREDICATES = ("numeric", "special", "other", "boolean")


def make_custom_class_domain(name: str, cfg: UniverseConfig,
                             atoms: list[tuple[str, str]],
                             named: dict[str, list[str]] | None = None) -> ClassDomain:
    """Build a finite string domain from a declarative description:
    atoms as (atom_name, predicate) with predicates over the fixed vocabulary,
    plus optional named join elements. The lattice is the powerset of atoms."""
    preds = {}
    for atom, pred in atoms:
        if pred not in ("numeric", "special", "other"):
            raise DomainError(f"unknown classifier predicate {pred!r}")
        preds[pred] = atom
    if "other" not in preds:
        raise DomainError("custom domain needs an atom with the 'other' predicate")

    kws = cfg.special_keywords

    def classify(s: str) -> str:
        if "special" in preds and s in kws:
            return preds["special"]
        if "numeric" in preds and classify_numeric(s) == NUM_STR:
            return preds["numeric"]
        return preds["other"]

    named_sets = {k: frozenset(v) for k, v in (named or {}).items()}
    atom_names = tuple(a for a, _ in atoms)
    for k, v in named_sets.items():
        if not v <= set(atom_names):
            raise DomainError(f"named element {k!r} uses unknown atoms")
    return ClassDomain(name, atom_names, classify, named=named_sets,
                       vocab={a: p for a, p in atoms})


# --- product values -----------------------------------------------------------

@dataclass(frozen=True)
class ProductValue:
    components: tuple
    reduced: bool = dataclass_field(default=False, compare=False)

    def __iter__(self):
        return iter(self.components)

    def __getitem__(self, i):
        return self.components[i]


class ProductDomain:
    """An ordered tuple of component domains sharing one concrete carrier."""

    def __init__(self, domains: tuple[Domain, ...], cfg: UniverseConfig):
        kinds = {d.kind for d in domains}
        if len(kinds) != 1:
            raise DomainError("product components must share a concrete carrier")
        self.domains = tuple(domains)
        self.cfg = cfg
        self.kind = domains[0].kind
        self.n = len(domains)
        set_idxs = [i for i, d in enumerate(domains) if isinstance(d, StringSetDomain)]
        # The string DSL's pointwise loop draws from this component.
        self.set_source = set_idxs[0] if set_idxs else None
        self._gamma_cache: dict = {}
        self._sigma_cache: dict = {}

    def bottom(self) -> ProductValue:
        return ProductValue(tuple(d.bot for d in self.domains), reduced=True)

    def top(self) -> ProductValue:
        return ProductValue(tuple(d.top for d in self.domains))

    def is_bottom(self, pv: ProductValue) -> bool:
        return any(d.is_bot(v) for d, v in zip(self.domains, pv.components))

    def check_value(self, pv: ProductValue):
        if len(pv.components) != self.n:
            raise DomainError("component count mismatch")
        for d, v in zip(self.domains, pv.components):
            d.check_value(v)

    def contains(self, pv: ProductValue, c) -> bool:
        return all(d.contains(v, c) for d, v in zip(self.domains, pv.components))

    def leq(self, a: ProductValue, b: ProductValue) -> bool:
        return all(d.leq(x, y) for d, x, y in zip(self.domains, a.components, b.components))

    def sort_key(self, pv: ProductValue):
        keys = tuple(d.sort_key(v) for d, v in zip(self.domains, pv.components))
        return (sum(k[0] for k in keys), keys)

    def format_value(self, pv: ProductValue):
        return ["product"] + [d.format_value(v) for d, v in zip(self.domains, pv.components)]

    def parse_value(self, node) -> ProductValue:
        if not (isinstance(node, list) and node and node[0] == "product"):
            raise DomainError(f"bad product literal {node!r}")
        if len(node) != self.n + 1:
            raise DomainError("product literal has wrong component count")
        return ProductValue(tuple(d.parse_value(x) for d, x in zip(self.domains, node[1:])))

    # -- concretization --------------------------------------------------------

    def gamma_bounds(self, pv: ProductValue) -> tuple[int, int] | None:
        """Integer products: gamma intersection clipped to the input universe,
        as an inclusive [m, M] range; None when empty."""
        lo, hi = -self.cfg.int_bound, self.cfg.int_bound
        for v in pv.components:
            lo = max(lo, v.lo)
            hi = min(hi, v.hi)
        if lo > hi:
            return None
        return int(lo), int(hi)

    def gamma_strings(self, pv: ProductValue) -> "StrGamma":
        key = pv.components
        got = self._gamma_cache.get(key)
        if got is None:
            got = _string_gamma(self, pv)
            self._gamma_cache[key] = got
        return got

    def gamma_size(self, pv: ProductValue) -> int:
        if self.kind == "int":
            b = self.gamma_bounds(pv)
            return 0 if b is None else b[1] - b[0] + 1
        if self.kind == "bool":
            return sum(1 for c in (False, True) if self.contains(pv, c))
        return self.gamma_strings(pv).size()

    def gamma_list(self, pv: ProductValue) -> list:
        """Concretization in deterministic universe order (bounded)."""
        if self.kind == "int":
            b = self.gamma_bounds(pv)
            return [] if b is None else list(range(b[0], b[1] + 1))
        if self.kind == "bool":
            return [c for c in (False, True) if self.contains(pv, c)]
        return list(self.gamma_strings(pv).iter_ordered())

    # -- reduction --------------------------------------------------------------

    def sigma(self, pv: ProductValue) -> ProductValue:
        """Reduce to the componentwise most precise tuple with the same
        concretization. Interval products use the symbolic limit formula so
        infinite limits survive; string products use bounded alpha of the
        gamma intersection."""
        if pv.reduced:
            return pv
        key = pv.components
        got = self._sigma_cache.get(key)
        if got is not None:
            return got
        if self.kind == "int":
            out = self._sigma_int(pv)
        else:
            out = self._sigma_str(pv)
        self._sigma_cache[key] = out
        return out

    def _sigma_int(self, pv: ProductValue) -> ProductValue:
        lo, hi = NINF, INF
        for v in pv.components:
            lo = emax(lo, v.lo)
            hi = emin(hi, v.hi)
        if lo > hi or self.gamma_bounds(pv) is None:
            return self.bottom()
        comps = tuple(Interval(d.round_down(lo), d.round_up(hi)) for d in self.domains)
        return ProductValue(comps, reduced=True)

    def _sigma_str(self, pv: ProductValue) -> ProductValue:
        g = self.gamma_strings(pv)
        if g.is_empty():
            return self.bottom()
        comps = tuple(d.alpha(g.iter_ordered()) for d in self.domains)
        return ProductValue(comps, reduced=True)


# --- lazy concrete string sets -------------------------------------------------

class StringUniverseIndex:
    """Per-config index of the bounded string universe: universe order plus
    per-classifier atom partitions, built once and shared."""

    def __init__(self, cfg: UniverseConfig):
        self.cfg = cfg
        self.strings = cfg.str_values()
        self.pos = {s: i for i, s in enumerate(self.strings)}
        self._partitions: dict[int, dict[str, list[str]]] = {}

    def partition(self, dom: ClassDomain) -> dict[str, list[str]]:
        key = id(dom)
        got = self._partitions.get(key)
        if got is None:
            got = {a: [] for a in dom.atoms}
            for s in self.strings:
                got[dom.classify(s)].append(s)
            self._partitions[key] = got
        return got


_INDEXES: dict[tuple, StringUniverseIndex] = {}


def universe_index(cfg: UniverseConfig) -> StringUniverseIndex:
    key = cfg.fingerprint_fields()
    got = _INDEXES.get(key)
    if got is None:
        got = StringUniverseIndex(cfg)
        _INDEXES[key] = got
    return got


class StrGamma:
    """A concrete string set: either an explicit frozenset or the universe
    filtered by class-domain constraints (kept lazy so Top stays cheap)."""

    def __init__(self, index: StringUniverseIndex, explicit: frozenset | None,
                 filters: tuple[tuple[ClassDomain, frozenset], ...]):
        self.index = index
        self.filters = filters
        if explicit is not None:
            explicit = frozenset(s for s in explicit if s in index.pos
                                 and all(d.classify(s) in atoms for d, atoms in filters))
            self.explicit = explicit
            self.filters = ()
        else:
            self.explicit = None

    def is_empty(self) -> bool:
        if self.explicit is not None:
            return not self.explicit
        return self.size() == 0

    def size(self) -> int:
        if self.explicit is not None:
            return len(self.explicit)
        if not self.filters:
            return len(self.index.strings)
        if len(self.filters) == 1:
            dom, atoms = self.filters[0]
            part = self.index.partition(dom)
            return sum(len(part[a]) for a in dom.atoms if a in atoms)
        return sum(1 for _ in self.iter_ordered())

    def __contains__(self, s: str) -> bool:
        if self.explicit is not None:
            return s in self.explicit
        if s not in self.index.pos:
            return False
        return all(d.classify(s) in atoms for d, atoms in self.filters)

    def iter_ordered(self):
        """Universe (length-then-lex) order."""
        if self.explicit is not None:
            yield from sorted(self.explicit, key=lambda s: (len(s), self.index.pos.get(s, 0)))
            return
        if not self.filters:
            yield from self.index.strings
            return
        for s in self.index.strings:
            if all(d.classify(s) in atoms for d, atoms in self.filters):
                yield s


def _string_gamma(prod: ProductDomain, pv: ProductValue) -> StrGamma:
    index = universe_index(prod.cfg)
    explicit = None
    filters = []
    for d, v in zip(prod.domains, pv.components):
        if isinstance(d, StringSetDomain):
            if v.tag == "bot":
                return StrGamma(index, frozenset(), ())
            if v.tag == "set":
                explicit = v.items if explicit is None else (explicit & v.items)
        elif isinstance(d, ClassDomain):
            if d.is_bot(v):
                return StrGamma(index, frozenset(), ())
            if not d.is_top(v):
                filters.append((d, v))
        else:
            raise DomainError(f"{d.name} cannot appear in a string product")
    return StrGamma(index, explicit, tuple(filters))


# --- concrete images of operations ---------------------------------------------


def int_image_bounds(op: ConcreteOp, arg_bounds: list[tuple[int, int] | None]) -> tuple[int, int] | None:
    """Exact [min, max] of the pointwise image over clipped integer boxes."""
    if any(b is None for b in arg_bounds):
        return None
    if op.name == "inc":
        (m, M), = arg_bounds
        return m + 1, M + 1
    if op.name == "add":
        (m1, M1), (m2, M2) = arg_bounds
        return m1 + m2, M1 + M2
    if op.name == "sub":
        (m1, M1), (m2, M2) = arg_bounds
        return m1 - M2, M1 - m2
    if op.name == "abs":
        (m, M), = arg_bounds
        lo = m if m > 0 else (-M if M < 0 else 0)
        return lo, max(-m, M)
    if op.name == "zero":
        return 0, 0
    raise UsageError(f"no image rule for {op.name!r}")


class ImageSummary:
    """What a check needs to know about {f(c) | c in gamma-intersection}:
    membership, per-classifier atom inventory, and (when small) the set."""

    DISTINCT_CAP = 64
    SCAN_CAP = 4_000_000

    def __init__(self, op: ConcreteOp, gammas: list, pos_values: list[int] | None,
                 cfg: UniverseConfig):
        self.op = op
        self.cfg = cfg
        self.gammas = gammas
        self.pos_values = pos_values
        self.empty = any(g.is_empty() for g in gammas) or (pos_values is not None and not pos_values)
        self._explicit: frozenset | None = None
        self._overflow = False
        if not self.empty:
            self._materialize()

    def _arg_tuples(self):
        spaces = [list(g.iter_ordered()) for g in self.gammas]
        if self.pos_values is not None:
            spaces.append(list(self.pos_values))
        return itertools.product(*spaces)

    def _materialize(self):
        total = 1
        for g in self.gammas:
            total *= g.size()
        if self.pos_values is not None:
            total *= len(self.pos_values)
        if total > self.SCAN_CAP:
            raise IndeterminateError(
                f"image of {self.op.name} over {total} concrete tuples exceeds the scan budget")
        out = set()
        for args in self._arg_tuples():
            out.add(op_eval(self.op, list(args), self.cfg))
            if len(out) > self.DISTINCT_CAP:
                self._overflow = True
                break
        if self._overflow:
            self._explicit = None
        else:
            self._explicit = frozenset(out)

    def explicit(self) -> frozenset | None:
        return None if self.empty else self._explicit

    def members_ordered(self) -> list:
        if self.empty:
            return []
        if self._explicit is not None:
            if self.op.result_kind == "int":
                return sorted(self._explicit)
            if self.op.result_kind == "bool":
                return sorted(self._explicit)
            return sorted(self._explicit, key=lambda s: (len(s), s))
        return sorted({op_eval(self.op, list(a), self.cfg) for a in self._arg_tuples()},
                      key=lambda s: (len(s), s))

    def iter_members(self):
        if self.empty:
            return
        if self._explicit is not None:
            yield from self.members_ordered()
            return
        seen = set()
        for args in self._arg_tuples():
            c = op_eval(self.op, list(args), self.cfg)
            if c not in seen:
                seen.add(c)
                yield c

    def contains(self, c) -> bool:
        if self.empty:
            return False
        if self._explicit is not None:
            return c in self._explicit
        if self.op.name == "concat":
            for cut in range(len(c) + 1):
                if c[:cut] in self.gammas[0] and c[cut:] in self.gammas[1]:
                    return True
            return False
        for args in self._arg_tuples():
            if op_eval(self.op, list(args), self.cfg) == c:
                return True
        return False

    def alpha(self, domain: Domain):
        if self.empty:
            return domain.bot
        return domain.alpha(self.iter_members())

    def covered_by(self, domain: Domain, value) -> bool:
        """image subset-of gamma(value)?"""
        if self.empty:
            return True
        if domain.is_top(value):
            return True
        if domain.is_bot(value):
            return False
        for c in self.iter_members():
            if not domain.contains(value, c):
                return False
        return True

    def first_escaping(self, domain: Domain, value):
        """Smallest image member outside gamma(value), else None."""
        if self.empty:
            return None
        for c in self.members_ordered():
            if not domain.contains(value, c):
                return c
        return None


# --- ideal and direct transformers ----------------------------------------------

class Problem:
    """Binds a concrete operation to its product signature for oracle work.

    ``products`` has one ProductDomain per main argument (shared object when
    the argument domains coincide); ``pos_domain`` is charAt's index domain.
    """

    def __init__(self, op: ConcreteOp, product: ProductDomain, cfg: UniverseConfig,
                 comp_names: tuple[str, ...] | None = None):
        self.op = op
        self.product = product
        self.cfg = cfg
        self.arity = len(op.arg_kinds)
        self.comp_names = comp_names or tuple(d.name for d in product.domains)
        if len(self.comp_names) != product.n:
            raise DomainError("component name count mismatch")
        self.pos_domain = FlatNumDomain("pos", cfg.max_len) if op.aux_pos else None
        if op.result_kind == "bool":
            absbool = make_domain("absbool", cfg)
            self.out_domains: tuple[Domain, ...] = tuple(absbool for _ in product.domains)
        else:
            self.out_domains = product.domains
        self._image_cache: dict = {}
        self._direct_cache: dict = {}

    @property
    def n(self) -> int:
        return self.product.n

    def comp_index(self, name: str) -> int:
        try:
            return self.comp_names.index(name)
        except ValueError:
            raise DomainError(f"unknown component {name!r}") from None

    def field_names(self) -> list[str]:
        """Interval DSL terminals: alias.l/.r, argument-indexed when binary."""
        out = []
        for arg in range(self.arity):
            suffix = str(arg + 1) if self.arity > 1 else ""
            for alias in self.comp_names:
                out.extend([f"{alias}{suffix}.l", f"{alias}{suffix}.r"])
        return out

    def env_for(self, inputs: tuple[ProductValue, ...], pos=None) -> dict:
        """Evaluation environment for one abstract input."""
        env = {"args": inputs}
        if pos is not None:
            env["pos"] = pos
        if self.product.kind == "int":
            for arg, pv in enumerate(inputs):
                suffix = str(arg + 1) if self.arity > 1 else ""
                for alias, v in zip(self.comp_names, pv.components):
                    env[f"{alias}{suffix}.l"] = v.lo
                    env[f"{alias}{suffix}.r"] = v.hi
        return env

    def out_universe_bounds(self) -> tuple[int, int]:
        return -self.cfg.int_out_bound, self.cfg.int_out_bound

    def image(self, inputs: tuple[ProductValue, ...], pos=None) -> ImageSummary | tuple[int, int] | None:
        """Bounded pointwise image over the gamma intersections.
        Integer ops return an inclusive (min, max) or None; string/bool ops
        return an ImageSummary."""
        key = (tuple(pv.components for pv in inputs), pos)
        got = self._image_cache.get(key, _MISSING)
        if got is not _MISSING:
            return got
        if self.product.kind == "int":
            bounds = [self.product.gamma_bounds(pv) for pv in inputs]
            out = int_image_bounds(self.op, bounds)
        else:
            gammas = [self.product.gamma_strings(pv) for pv in inputs]
            pos_vals = list(self.pos_domain.gamma_values(pos)) if self.pos_domain else None
            out = ImageSummary(self.op, gammas, pos_vals, self.cfg)
        self._image_cache[key] = out
        return out

    def ideal_component(self, k: int, inputs: tuple[ProductValue, ...], pos=None):
        """Eq.-(4) style oracle: alpha_k of the pointwise image of the full
        gamma intersection (the ground truth every check measures against)."""
        dom = self.out_domains[k]
        img = self.image(inputs, pos)
        if self.product.kind == "int":
            if img is None:
                return dom.bot
            return Interval(dom.round_down(img[0]), dom.round_up(img[1]))
        return img.alpha(dom)

    def ideal_tuple(self, inputs: tuple[ProductValue, ...], pos=None) -> ProductValue:
        return ProductValue(tuple(self.ideal_component(k, inputs, pos) for k in range(self.n)),
                            reduced=True)

    # -- direct product ----------------------------------------------------------

    def direct_component(self, k: int, inputs: tuple[ProductValue, ...], pos=None):
        """Component k of the direct-product transformer: sees only its own
        domain's slice of every argument. Interval domains use the symbolic
        extended hull (so infinite limits pass through, matching the paper's
        closed forms); string domains use bounded alpha of the sliced image."""
        dom = self.out_domains[k]
        key = (k, tuple(pv.components[k] for pv in inputs), pos)
        got = self._direct_cache.get(key, _MISSING)
        if got is not _MISSING:
            return got
        if self.product.kind == "int":
            out = self._direct_int(k, inputs)
        else:
            out = self._direct_str(k, inputs, pos)
        self._direct_cache[key] = out
        return out

    def _direct_int(self, k: int, inputs):
        dom: IntervalDomain = self.out_domains[k]  # type: ignore[assignment]
        vals = [pv.components[k] for pv in inputs]
        if any(v.lo > v.hi for v in vals):
            return BOT_INTERVAL
        name = self.op.name
        if name == "inc":
            lo, hi = eadd(vals[0].lo, 1), eadd(vals[0].hi, 1)
        elif name == "add":
            lo, hi = eadd(vals[0].lo, vals[1].lo), eadd(vals[0].hi, vals[1].hi)
        elif name == "sub":
            lo, hi = esub(vals[0].lo, vals[1].hi), esub(vals[0].hi, vals[1].lo)
        elif name == "abs":
            v = vals[0]
            if v.lo > 0:
                lo = v.lo
            elif v.hi < 0:
                lo = -v.hi
            else:
                lo = 0
            hi = emax(-v.lo, v.hi)
        elif name == "zero":
            lo, hi = 0, 0
        else:
            raise UsageError(f"no direct rule for {name!r}")
        return Interval(dom.round_down(lo), dom.round_up(hi))

    def _direct_str(self, k: int, inputs, pos):
        dom = self.product.domains[k]
        index = universe_index(self.cfg)
        gammas = []
        for pv in inputs:
            v = pv.components[k]
            if isinstance(dom, StringSetDomain):
                if v.tag == "bot":
                    gammas.append(StrGamma(index, frozenset(), ()))
                elif v.tag == "set":
                    gammas.append(StrGamma(index, v.items, ()))
                else:
                    gammas.append(StrGamma(index, None, ()))
            else:
                if dom.is_bot(v):
                    gammas.append(StrGamma(index, frozenset(), ()))
                elif dom.is_top(v):
                    gammas.append(StrGamma(index, None, ()))
                else:
                    gammas.append(StrGamma(index, None, ((dom, v),)))
        pos_vals = list(self.pos_domain.gamma_values(pos)) if self.pos_domain else None
        img = ImageSummary(self.op, gammas, pos_vals, self.cfg)
        return img.alpha(self.out_domains[k])

    def direct_tuple(self, inputs: tuple[ProductValue, ...], pos=None) -> ProductValue:
        return ProductValue(tuple(self.direct_component(k, inputs, pos) for k in range(self.n)))


_MISSING = object()
