"""Transformer DSLs: grammars, size-ordered candidate enumeration with
bounded recursion unrolling, expression evaluation, and the s-expression
round trip.

Two node families share one AST: extended-integer interval limbs
(fields, 0/1, +-inf, neg/add/sub/min/max, interval assembly) and the string
family (guarded branch over finite set components, pointwise image + alpha,
fallback transformer calls, domain constants, meets, boolean folds).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from . import sexpr
from .extint import INF, NINF, eadd, emax, emin, eneg, esub, is_nan, fmt as efmt, parse as eparse
from .universe import UsageError


class GrammarError(Exception):
    """Grammar text failed to load (unknown terminal, unreachable symbol...)."""


class EvalError(Exception):
    """Expression/environment mismatch, not a soundness fact."""


class Invalid:
    """Marker for an evaluation that violated domain discipline (interval
    parity); checks treat it as unsound, never silently rounded."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "<invalid>"


INVALID = Invalid()


# --- AST ----------------------------------------------------------------------

@dataclass(frozen=True)
class Expr:
    def children(self) -> tuple["Expr", ...]:
        return ()


@lru_cache(maxsize=None)
def expr_size(e: Expr) -> int:
    """Node count, the enumeration's size metric."""
    return 1 + sum(expr_size(c) for c in e.children())


@dataclass(frozen=True)
class Var(Expr):
    name: str  # "o.l", "e2.r", ...


@dataclass(frozen=True)
class Num(Expr):
    value: int


@dataclass(frozen=True)
class InfConst(Expr):
    sign: int


@dataclass(frozen=True)
class Unary(Expr):
    op: str  # 'neg'
    x: Expr

    def children(self):
        return (self.x,)


@dataclass(frozen=True)
class Binary(Expr):
    op: str  # 'add' | 'sub' | 'min' | 'max'
    a: Expr
    b: Expr

    def children(self):
        return (self.a, self.b)


@dataclass(frozen=True)
class MkInterval(Expr):
    lo: Expr
    hi: Expr

    def children(self):
        return (self.lo, self.hi)


@dataclass(frozen=True)
class Branch(Expr):
    """Guarded on every finite-set component (and index argument) being
    neither top nor bottom; the pointwise then-branch is only evaluated when
    the guard holds."""
    then: Expr
    els: Expr

    def children(self):
        return (self.then, self.els)


@dataclass(frozen=True)
class Pointwise(Expr):
    """The concrete operation's image set over the arguments' finite set
    components (plus the index argument when present)."""


@dataclass(frozen=True)
class Alpha(Expr):
    x: Expr

    def children(self):
        return (self.x,)


@dataclass(frozen=True)
class Fold(Expr):
    """Forall/exists fold of a boolean concrete op over the pointwise tuples:
    all true -> BoolTrue, some true -> BoolTop, none -> BoolFalse."""


@dataclass(frozen=True)
class Fallback(Expr):
    comp: str


@dataclass(frozen=True)
class DomConst(Expr):
    name: str  # 'top' | 'bot' | class atom / named element


@dataclass(frozen=True)
class ArgRef(Expr):
    comp: str  # first argument's component, passed through


@dataclass(frozen=True)
class Meet(Expr):
    a: Expr
    b: Expr

    def children(self):
        return (self.a, self.b)


COMMUTATIVE = {"add", "min", "max"}


@dataclass(frozen=True)
class DirectRef(Expr):
    """A component transformer backed by the built-in direct-product
    transformer instead of a synthesized expression."""
    comp: str


@dataclass(frozen=True)
class TransformerTuple:
    """One transformer per component domain; component i reads the whole
    input tuple and produces component i's output."""
    components: tuple[Expr, ...]
    provenance: tuple[str, ...] = ()

    def __post_init__(self):
        if self.provenance and len(self.provenance) != len(self.components):
            raise UsageError("provenance arity mismatch")

    def replace(self, k: int, expr: Expr, origin: str) -> "TransformerTuple":
        comps = list(self.components)
        comps[k] = expr
        prov = list(self.provenance) if self.provenance else ["?"] * len(comps)
        prov[k] = origin
        return TransformerTuple(tuple(comps), tuple(prov))


# --- printing / parsing ---------------------------------------------------------

def to_sexpr(e: Expr):
    if isinstance(e, Var):
        comp, field = e.name.split(".")
        return ["field", comp, field]
    if isinstance(e, Num):
        return str(e.value)
    if isinstance(e, InfConst):
        return "+inf" if e.sign > 0 else "-inf"
    if isinstance(e, Unary):
        return [e.op, to_sexpr(e.x)]
    if isinstance(e, Binary):
        return [e.op, to_sexpr(e.a), to_sexpr(e.b)]
    if isinstance(e, MkInterval):
        return ["interval", to_sexpr(e.lo), to_sexpr(e.hi)]
    if isinstance(e, Branch):
        return ["branch", to_sexpr(e.then), to_sexpr(e.els)]
    if isinstance(e, Pointwise):
        return ["pointwise"]
    if isinstance(e, Alpha):
        return ["alpha", to_sexpr(e.x)]
    if isinstance(e, Fold):
        return ["fold"]
    if isinstance(e, Fallback):
        return ["fallback", e.comp]
    if isinstance(e, DomConst):
        return ["const", e.name]
    if isinstance(e, ArgRef):
        return ["arg", e.comp]
    if isinstance(e, Meet):
        return ["meet", to_sexpr(e.a), to_sexpr(e.b)]
    if isinstance(e, DirectRef):
        return ["direct", e.comp]
    raise UsageError(f"unprintable expression {e!r}")


def print_expr(e: Expr) -> str:
    return sexpr.dumps(to_sexpr(e))


def from_sexpr(node) -> Expr:
    if isinstance(node, str):
        if node == "+inf":
            return InfConst(1)
        if node == "-inf":
            return InfConst(-1)
        try:
            return Num(int(node))
        except ValueError as exc:
            raise GrammarError(f"bad atom {node!r} in expression") from exc
    if not isinstance(node, list) or not node:
        raise GrammarError(f"bad expression node {node!r}")
    head = node[0]
    if head == "field":
        return Var(f"{node[1]}.{node[2]}")
    if head == "neg":
        return Unary("neg", from_sexpr(node[1]))
    if head in ("add", "sub", "min", "max"):
        return Binary(head, from_sexpr(node[1]), from_sexpr(node[2]))
    if head == "interval":
        return MkInterval(from_sexpr(node[1]), from_sexpr(node[2]))
    if head == "branch":
        return Branch(from_sexpr(node[1]), from_sexpr(node[2]))
    if head == "pointwise":
        return Pointwise()
    if head == "alpha":
        return Alpha(from_sexpr(node[1]))
    if head == "fold":
        return Fold()
    if head == "fallback":
        return Fallback(node[1])
    if head == "const":
        return DomConst(node[1])
    if head == "arg":
        return ArgRef(node[1])
    if head == "meet":
        return Meet(from_sexpr(node[1]), from_sexpr(node[2]))
    if head == "direct":
        return DirectRef(node[1])
    raise GrammarError(f"unknown expression head {head!r}")


def parse_expr(text: str) -> Expr:
    return from_sexpr(sexpr.parse(text))


# --- grammars -------------------------------------------------------------------

# RHS alternative, normalized: ("term", Expr) for ready-made terminals, or
# ("op", opname, (child,...)) where each child is ("nt", name) or ("term", Expr).

_FUNCTIONAL = {"min": 2, "max": 2, "interval": 2, "neg": 1,
               "add": 2, "sub": 2, "branch": 2, "alpha": 1, "meet": 2}
_PARAM_TERMINALS = ("fallback", "const", "arg")
_NULLARY = ("pointwise", "fold")


@dataclass(frozen=True)
class Production:
    head: str
    shape: tuple


class Grammar:
    """A context-free grammar over the DSL vocabulary.

    Terminals must resolve in the problem's environment schema when a
    vocabulary is supplied; every nonterminal must be reachable from the
    start symbol.
    """

    def __init__(self, start: str, productions: list[Production], text: str = ""):
        self.start = start
        self.productions = list(productions)
        self.text = text
        self.by_head: dict[str, list[Production]] = {}
        for p in self.productions:
            self.by_head.setdefault(p.head, []).append(p)
        self.nonterminals = tuple(self.by_head)
        self._check_reachability()
        self.recursive = self._recursive_heads()

    def _check_reachability(self):
        seen = {self.start}
        work = [self.start]
        while work:
            head = work.pop()
            for p in self.by_head.get(head, ()):
                for kind, payload in _iter_children(p.shape):
                    if kind == "nt" and payload not in seen:
                        seen.add(payload)
                        work.append(payload)
        unreachable = [nt for nt in self.nonterminals if nt not in seen]
        if unreachable:
            raise GrammarError(f"unreachable nonterminals: {', '.join(sorted(unreachable))}")
        missing = seen - set(self.nonterminals)
        if missing:
            raise GrammarError(f"undefined nonterminals: {', '.join(sorted(missing))}")

    def _recursive_heads(self) -> frozenset:
        # head -> set of nonterminals appearing in its productions
        edges = {nt: set() for nt in self.nonterminals}
        for p in self.productions:
            for kind, payload in _iter_children(p.shape):
                if kind == "nt":
                    edges[p.head].add(payload)
        out = set()
        for nt in self.nonterminals:
            seen, work = set(), list(edges[nt])
            while work:
                x = work.pop()
                if x == nt:
                    out.add(nt)
                    break
                if x not in seen:
                    seen.add(x)
                    work.extend(edges[x])
        return frozenset(out)

    def terminals(self) -> list[Expr]:
        out = []
        for p in self.productions:
            if p.shape[0] == "term" and p.shape[1] not in out:
                out.append(p.shape[1])
        return out


def _iter_children(shape):
    if shape[0] == "op":
        for child in shape[2]:
            yield child
    else:
        yield ("leaf", None)


def parse_grammar(text: str, vocabulary: set[str] | None = None) -> Grammar:
    """Load a line-oriented BNF block: ``Head ::= alt | alt | ...`` with
    space-separated tokens; alternatives continue on indented lines."""
    lines = [ln.rstrip() for ln in text.splitlines()]
    merged: list[str] = []
    for ln in lines:
        if not ln.strip() or ln.lstrip().startswith("#"):
            continue
        if "::=" not in ln and merged:
            merged[-1] += " " + ln.strip()
        else:
            merged.append(ln.strip())
    if not merged:
        raise GrammarError("empty grammar description")

    heads = []
    raw: list[tuple[str, str]] = []
    for ln in merged:
        if "::=" not in ln:
            raise GrammarError(f"bad production line {ln!r}")
        head, rhs = ln.split("::=", 1)
        head = head.strip()
        if not head:
            raise GrammarError(f"missing head in {ln!r}")
        heads.append(head)
        raw.append((head, rhs))

    productions: list[Production] = []
    head_set = set(heads)
    for head, rhs in raw:
        for alt in rhs.split("|"):
            toks = _tokenize_alt(alt)
            if not toks:
                raise GrammarError(f"empty alternative in {head!r}")
            productions.append(Production(head, _parse_alt(head, toks, head_set, vocabulary)))
    return Grammar(heads[0], productions, text=text)


def _tokenize_alt(alt: str) -> list[str]:
    out, cur = [], []
    for ch in alt:
        if ch in "(),":
            if cur:
                out.append("".join(cur))
                cur = []
            out.append(ch)
        elif ch.isspace():
            if cur:
                out.append("".join(cur))
                cur = []
        else:
            cur.append(ch)
    if cur:
        out.append("".join(cur))
    return out


def _parse_alt(head, toks, nonterminals, vocabulary):
    def atom(tok):
        """A leaf token: nonterminal reference or terminal expression."""
        if tok in nonterminals:
            return ("nt", tok)
        return ("term", _terminal_expr(tok, vocabulary))

    # - E
    if len(toks) == 2 and toks[0] == "-":
        return ("op", "neg", (atom(toks[1]),))
    # E + E  /  E - E
    if len(toks) == 3 and toks[1] in "+-":
        opname = "add" if toks[1] == "+" else "sub"
        return ("op", opname, (atom(toks[0]), atom(toks[2])))
    # f(a, b, ...)
    if len(toks) >= 3 and toks[1] == "(":
        name = toks[0]
        if toks[-1] != ")":
            raise GrammarError(f"unbalanced parentheses in {head!r} alternative")
        args = [t for t in toks[2:-1] if t != ","]
        if name in _PARAM_TERMINALS:
            if len(args) != 1:
                raise GrammarError(f"{name} takes one parameter")
            return ("term", _param_terminal(name, args[0], vocabulary))
        if name in _FUNCTIONAL:
            if len(args) != _FUNCTIONAL[name]:
                raise GrammarError(f"{name} takes {_FUNCTIONAL[name]} arguments")
            return ("op", name, tuple(atom(a) for a in args))
        raise GrammarError(f"unknown operator {name!r}")
    if len(toks) == 1:
        return atom(toks[0])
    raise GrammarError(f"cannot parse alternative {' '.join(toks)!r} of {head!r}")


def _terminal_expr(tok: str, vocabulary) -> Expr:
    if tok in _NULLARY:
        return Pointwise() if tok == "pointwise" else Fold()
    if tok == "+inf":
        return InfConst(1)
    if tok == "-inf":
        return InfConst(-1)
    try:
        return Num(int(tok))
    except ValueError:
        pass
    if "." in tok:
        if vocabulary is not None and tok not in vocabulary:
            raise GrammarError(f"unknown terminal {tok!r}")
        return Var(tok)
    raise GrammarError(f"unknown terminal {tok!r}")


def _param_terminal(name: str, param: str, vocabulary) -> Expr:
    if name == "fallback":
        key = f"fallback:{param}"
        if vocabulary is not None and key not in vocabulary:
            raise GrammarError(f"unknown terminal fallback({param})")
        return Fallback(param)
    if name == "arg":
        key = f"arg:{param}"
        if vocabulary is not None and key not in vocabulary:
            raise GrammarError(f"unknown terminal arg({param})")
        return ArgRef(param)
    key = f"const:{param}"
    if vocabulary is not None and key not in vocabulary:
        raise GrammarError(f"unknown terminal const({param})")
    return DomConst(param)


def print_grammar(g: Grammar) -> str:
    """Round-trippable text rendering of a grammar."""
    lines = []
    for head in g.nonterminals:
        alts = [_print_shape(p.shape) for p in g.by_head[head]]
        lines.append(f"{head} ::= " + " | ".join(alts))
    return "\n".join(lines)


def _print_shape(shape) -> str:
    kind = shape[0]
    if kind == "term":
        return _print_terminal(shape[1])
    _, name, children = shape
    parts = [c[1] if c[0] == "nt" else _print_terminal(c[1]) for c in children]
    return f"{name}({', '.join(parts)})"


def _print_terminal(e: Expr) -> str:
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Num):
        return str(e.value)
    if isinstance(e, InfConst):
        return "+inf" if e.sign > 0 else "-inf"
    if isinstance(e, Pointwise):
        return "pointwise"
    if isinstance(e, Fold):
        return "fold"
    if isinstance(e, Fallback):
        return f"fallback({e.comp})"
    if isinstance(e, DomConst):
        return f"const({e.name})"
    if isinstance(e, ArgRef):
        return f"arg({e.comp})"
    raise UsageError(f"unprintable terminal {e!r}")


# --- enumeration ---------------------------------------------------------------

_CTORS = {
    "neg": lambda a: Unary("neg", a),
    "add": lambda a, b: Binary("add", a, b),
    "sub": lambda a, b: Binary("sub", a, b),
    "min": lambda a, b: Binary("min", a, b),
    "max": lambda a, b: Binary("max", a, b),
    "interval": MkInterval,
    "branch": Branch,
    "alpha": Alpha,
    "meet": Meet,
}


def enumerate_exprs(g: Grammar, max_size: int, symbol: str | None = None,
                    unroll_depth: int = 3):
    """Every well-typed expression of the symbol (default: start) with node
    count <= max_size, recursive productions unrolled at most unroll_depth
    deep; nondecreasing size, deterministic production-order tiebreak, each
    structure once (commutative operands canonically ordered)."""
    symbol = symbol or g.start
    if symbol not in g.by_head:
        raise GrammarError(f"unknown symbol {symbol!r}")
    table = _EnumTable(g, unroll_depth)
    for size in range(1, max_size + 1):
        yield from (e for e, _ in table.of(symbol, size))


class _EnumTable:
    """Size-indexed bottom-up expression table (expr, depth) with the
    canonical enumeration order; shared by the spec-level stream and the
    search pipelines."""

    def __init__(self, g: Grammar, unroll_depth: int):
        self.g = g
        self.unroll = unroll_depth
        self._memo: dict[tuple[str, int], list] = {}

    def of(self, symbol: str, size: int) -> list:
        key = (symbol, size)
        got = self._memo.get(key)
        if got is None:
            got = self._build(symbol, size)
            self._memo[key] = got
        return got

    def _build(self, symbol, size):
        out = []
        recursive = symbol in self.g.recursive
        for p in self.g.by_head[symbol]:
            kind = p.shape[0]
            if kind == "term":
                if size == expr_size(p.shape[1]):
                    out.append((p.shape[1], 0))
                continue
            _, opname, children = p.shape
            fixed = sum(expr_size(c[1]) for c in children if c[0] == "term")
            nts = [c[1] for c in children if c[0] == "nt"]
            budget = size - 1 - fixed
            if budget < len(nts):
                continue
            if not nts:
                if budget == 0:
                    out.append((self._make(opname, [c[1] for c in children], []), 0))
                continue
            for sizes in _compositions(budget, len(nts)):
                pools = [self.of(nt, s) for nt, s in zip(nts, sizes)]
                if any(not pool for pool in pools):
                    continue
                canon = opname in COMMUTATIVE and len(nts) == 2 and nts[0] == nts[1]
                for combo in _product_indexed(pools):
                    if canon:
                        (ia, _), (ib, _) = combo
                        if (sizes[0], ia) > (sizes[1], ib):
                            continue
                    subs = [item for _, item in combo]
                    depth = max(d for _, d in subs)
                    if recursive:
                        depth += 1
                    if depth > self.unroll:
                        continue
                    args = iter(e for e, _ in subs)
                    kids = [c[1] if c[0] == "term" else next(args) for c in children]
                    out.append((self._make(opname, kids, []), depth))
        return out

    @staticmethod
    def _make(opname, kids, _):
        return _CTORS[opname](*kids)


def _compositions(total: int, parts: int):
    """All ways to write total as an ordered sum of `parts` positive ints."""
    if parts == 1:
        yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def _product_indexed(pools):
    """Cartesian product yielding (index, item) pairs per slot."""
    if not pools:
        yield ()
        return
    head, *tail = pools
    for i, item in enumerate(head):
        for rest in _product_indexed(tail):
            yield ((i, item),) + rest


# --- evaluation ------------------------------------------------------------------

class EvalContext:
    """Everything expression evaluation may touch besides the bare env:
    the problem (for pointwise/fallback semantics) and the target component."""

    def __init__(self, problem, k: int):
        self.problem = problem
        self.k = k


def eval_limit(e: Expr, env: dict):
    """Extended-integer limb evaluation; inf-inf stays indeterminate until
    interval assembly resolves it toward top."""
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise EvalError(f"unbound terminal {e.name!r}") from None
    if isinstance(e, Num):
        return e.value
    if isinstance(e, InfConst):
        return INF if e.sign > 0 else NINF
    if isinstance(e, Unary):
        return eneg(eval_limit(e.x, env))
    if isinstance(e, Binary):
        a, b = eval_limit(e.a, env), eval_limit(e.b, env)
        if e.op == "add":
            return eadd(a, b)
        if e.op == "sub":
            return esub(a, b)
        if e.op == "min":
            return emin(a, b)
        return emax(a, b)
    raise EvalError(f"not an integer limb: {e!r}")


def eval_expr(e: Expr, env: dict, ctx: EvalContext):
    """Evaluate a transformer expression for component ctx.k.

    env: interval problems bind field names to extended integers; string
    problems bind "args" to the input tuple(s) and "pos" to the index value.
    Total and deterministic; returns INVALID on parity-discipline violations.
    """
    dom = ctx.problem.out_domains[ctx.k]
    if isinstance(e, DirectRef):
        return ctx.problem.direct_component(ctx.k, env["args"], env.get("pos"))
    if isinstance(e, MkInterval):
        lo = eval_limit(e.lo, env)
        hi = eval_limit(e.hi, env)
        if is_nan(lo):
            lo = NINF
        if is_nan(hi):
            hi = INF
        if lo > hi:
            return dom.bot
        if not (dom.limit_ok(lo) and dom.limit_ok(hi)):
            return INVALID
        return dom.make(lo, hi)
    if isinstance(e, Branch):
        if _guard_holds(ctx.problem, env):
            return eval_expr(e.then, env, ctx)
        return eval_expr(e.els, env, ctx)
    if isinstance(e, Alpha):
        items = eval_expr(e.x, env, ctx)
        return dom.alpha(items)
    if isinstance(e, Pointwise):
        return _pointwise_set(ctx.problem, env)
    if isinstance(e, Fold):
        return _fold_bools(ctx.problem, env, dom)
    if isinstance(e, Fallback):
        j = ctx.problem.comp_index(e.comp)
        return ctx.problem.direct_component(j, env["args"], env.get("pos"))
    if isinstance(e, DomConst):
        return dom.parse_value([_const_head(dom), e.name] if e.name not in ("top", "bot")
                               else [e.name])
    if isinstance(e, ArgRef):
        j = ctx.problem.comp_index(e.comp)
        src = ctx.problem.product.domains[j]
        val = env["args"][0].components[j]
        if src is not dom and src.name != dom.name:
            raise EvalError(f"arg({e.comp}) is not a {dom.name} value")
        return val
    if isinstance(e, Meet):
        a = eval_expr(e.a, env, ctx)
        b = eval_expr(e.b, env, ctx)
        if a is INVALID or b is INVALID:
            return INVALID
        return dom.meet(a, b)
    # bare integer limb used as a transformer is a grammar mistake
    raise EvalError(f"expression {e!r} does not produce an abstract value")


def _const_head(dom) -> str:
    from .domains import ClassDomain, StringSetDomain
    if isinstance(dom, ClassDomain):
        return "class"
    if isinstance(dom, StringSetDomain):
        return dom.literal
    return "nat"


def _guard_holds(problem, env) -> bool:
    src = problem.product.set_source
    if src is None:
        raise EvalError("branch guard needs a finite-set component in the product")
    for pv in env["args"]:
        v = pv.components[src]
        if v.tag != "set":
            return False
    pos = env.get("pos")
    if problem.pos_domain is not None and (pos is None or pos.tag != "const"):
        return False
    return True


def _pointwise_set(problem, env):
    if not _guard_holds(problem, env):
        raise EvalError("pointwise evaluated with an unsatisfied finiteness guard")
    src = problem.product.set_source
    sets = [sorted(pv.components[src].items, key=lambda s: (len(s), s)) for pv in env["args"]]
    out = []
    from itertools import product as iproduct
    from .universe import op_eval
    pos = env.get("pos")
    for combo in iproduct(*sets):
        args = list(combo)
        if problem.pos_domain is not None:
            args.append(pos.value)
        out.append(op_eval(problem.op, args, problem.cfg))
    return out


def _fold_bools(problem, env, dom):
    results = _pointwise_set(problem, env)
    fa = all(results)
    ex = any(results)
    if fa:
        return frozenset({"true"})
    if ex:
        return dom.top
    return frozenset({"false"})


def format_limit(x) -> str:
    return efmt(x)


def parse_limit(tok: str):
    return eparse(tok)
