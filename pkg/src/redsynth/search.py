"""Candidate and witness search pipelines.

Interval transformers are pairs of extended-integer limbs, so synthesis and
witness search enumerate limb equivalence classes bottom-up (deduplicated by
their value vectors on the inputs the satisfaction predicates can observe)
and assemble them through the grammar's start productions in canonical
enumeration order. Representatives precede their duplicates, so the first
satisfying representative is exactly the first satisfying expression of the
spec-level enumeration.

String transformers are enumerated whole (their grammars are small).
"""

from __future__ import annotations

import time

import numpy as np

from . import dsl
from .domains import IntervalDomain, Problem
from .extint import INF, NINF
from .grid import Grid, eval_limit_columns, parity_valid_vec
from .universe import UsageError


class DeadlineExceeded(Exception):
    pass


class _Deadline:
    def __init__(self, seconds: float):
        self.t_end = time.monotonic() + seconds

    def check(self):
        if time.monotonic() > self.t_end:
            raise DeadlineExceeded()


# --- limb classes ----------------------------------------------------------------

class LimbClass:
    __slots__ = ("expr", "size", "seq", "min_depth", "vec", "level")

    def __init__(self, expr, size, seq, depth, vec, level=None):
        self.expr = expr
        self.size = size
        self.seq = seq
        self.min_depth = depth
        self.vec = vec
        self.level = level  # (nonterminal, size) within its table, or None


_LIMB_OPS = frozenset({"neg", "add", "sub", "min", "max"})


class ClassTable:
    """Bottom-up limb classes for one grammar over a fixed column basis.
    Two limbs with identical value vectors on the basis are interchangeable
    for every predicate evaluated on it; the earliest is kept."""

    def __init__(self, grammar: dsl.Grammar, cols: dict[str, np.ndarray], n: int,
                 unroll_depth: int):
        self.g = grammar
        self.cols = cols
        self.n = n
        self.unroll = unroll_depth
        self._levels: dict[tuple[str, int], list[LimbClass]] = {}
        self._seen: dict[str, dict[bytes, LimbClass]] = {nt: {} for nt in grammar.nonterminals}
        self._max_level = 0

    def of(self, nt: str, size: int) -> list[LimbClass]:
        while self._max_level < size:
            nxt = self._max_level + 1
            for sym in self.g.nonterminals:
                self._build_level(sym, nxt)
            self._max_level = nxt
        return self._levels.get((nt, size), [])

    def _build_level(self, nt: str, size: int):
        out: list[LimbClass] = []
        seen = self._seen[nt]
        recursive = nt in self.g.recursive
        for p in self.g.by_head[nt]:
            if p.shape[0] == "term":
                term = p.shape[1]
                if dsl.expr_size(term) == size:
                    self._admit(out, seen, term, size, 0, self._eval(term))
                continue
            _, opname, children = p.shape
            if opname not in _LIMB_OPS:
                continue  # start-symbol assembly forms are not limbs
            fixed = sum(dsl.expr_size(c[1]) for c in children if c[0] == "term")
            nts = [c[1] for c in children if c[0] == "nt"]
            budget = size - 1 - fixed
            if not nts:
                if budget == 0:
                    kids = [c[1] for c in children]
                    expr = dsl._CTORS[opname](*kids)
                    self._admit(out, seen, expr, size, 0, self._eval(expr))
                continue
            if budget < len(nts):
                continue
            for sizes in _compositions(budget, len(nts)):
                pools = [self._levels.get((sym, s), []) for sym, s in zip(nts, sizes)]
                if any(not pool for pool in pools):
                    continue
                canon = opname in dsl.COMMUTATIVE and len(nts) == 2 and nts[0] == nts[1]
                self._combine(out, seen, opname, children, sizes, pools, canon,
                              recursive, size)
        for seq, cls in enumerate(out):
            cls.seq = seq
            cls.level = (nt, size)
        self._levels[(nt, size)] = out

    def _combine(self, out, seen, opname, children, sizes, pools, canon, recursive, size):
        if len(pools) == 1:
            for cls in pools[0]:
                depth = cls.min_depth + (1 if recursive else 0)
                if depth > self.unroll:
                    continue
                kids, vecs = self._fill(children, [cls])
                expr = dsl._CTORS[opname](*kids)
                self._admit(out, seen, expr, size, depth, _apply_vec(opname, vecs))
            return
        for ia, ca in enumerate(pools[0]):
            for ib, cb in enumerate(pools[1]):
                if canon and (sizes[0], ia) > (sizes[1], ib):
                    continue
                depth = max(ca.min_depth, cb.min_depth) + (1 if recursive else 0)
                if depth > self.unroll:
                    continue
                kids, vecs = self._fill(children, [ca, cb])
                expr = dsl._CTORS[opname](*kids)
                self._admit(out, seen, expr, size, depth, _apply_vec(opname, vecs))

    def _fill(self, children, classes):
        it = iter(classes)
        kids, vecs = [], []
        for c in children:
            if c[0] == "term":
                kids.append(c[1])
                vecs.append(self._eval(c[1]))
            else:
                cls = next(it)
                kids.append(cls.expr)
                vecs.append(cls.vec)
        return kids, vecs

    def _eval(self, expr) -> np.ndarray:
        return eval_limit_columns(expr, self.cols, self.n)

    def _admit(self, out, seen, expr, size, depth, vec):
        key = vec.tobytes()
        got = seen.get(key)
        if got is not None:
            if depth < got.min_depth:
                got.min_depth = depth
            return
        cls = LimbClass(expr, size, len(out), depth, vec)
        seen[key] = cls
        out.append(cls)


def _apply_vec(opname, vecs):
    with np.errstate(invalid="ignore"):
        if opname == "neg":
            return -vecs[0]
        if opname == "add":
            return vecs[0] + vecs[1]
        if opname == "sub":
            return vecs[0] - vecs[1]
        if opname == "min":
            return np.minimum(vecs[0], vecs[1])
        if opname == "max":
            return np.maximum(vecs[0], vecs[1])
    raise UsageError(f"not a limb operator: {opname}")


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


# --- start productions of interval grammars ---------------------------------------

def interval_start_shapes(grammar: dsl.Grammar):
    """The start symbol's interval(...) productions as (lo_spec, hi_spec)
    pairs, each spec ('term', expr) or ('nt', name)."""
    shapes = []
    for p in grammar.by_head[grammar.start]:
        if p.shape[0] != "op" or p.shape[1] != "interval":
            raise dsl.GrammarError(
                "interval grammars must define the start symbol with interval(...) forms")
        shapes.append(p.shape[2])
    return shapes


def iter_interval_pairs(table: ClassTable, grammar: dsl.Grammar, side_cap: int):
    """Assembled interval candidates in canonical enumeration order:
    total size ascending, production order, then lo-size/lo-index/hi-index."""
    shapes = interval_start_shapes(grammar)
    max_total = 1 + 2 * side_cap
    for total in range(3, max_total + 1):
        for shape in shapes:
            fixed = sum(dsl.expr_size(c[1]) for c in shape if c[0] == "term")
            nts = [c[1] for c in shape if c[0] == "nt"]
            budget = total - 1 - fixed
            if len(nts) == 0:
                continue
            if len(nts) == 1:
                if budget < 1 or budget > side_cap:
                    continue
                pool = table.of(nts[0], budget)
                fixed_cls = [LimbClass(c[1], dsl.expr_size(c[1]), -1, 0, table._eval(c[1]))
                             for c in shape if c[0] == "term"]
                for cls in pool:
                    pair = []
                    it = iter([cls])
                    fx = iter(fixed_cls)
                    for c in shape:
                        pair.append(next(fx) if c[0] == "term" else next(it))
                    yield total, pair[0], pair[1]
                continue
            for s_lo in range(1, min(side_cap, budget - 1) + 1):
                s_hi = budget - s_lo
                if s_hi < 1 or s_hi > side_cap:
                    continue
                for lo in table.of(nts[0], s_lo):
                    for hi in table.of(nts[1], s_hi):
                        yield total, lo, hi


# --- role semantics ----------------------------------------------------------------

def effective_lo(vec: np.ndarray) -> np.ndarray:
    return np.where(np.isnan(vec), np.float32(NINF), vec)


def effective_hi(vec: np.ndarray) -> np.ndarray:
    return np.where(np.isnan(vec), np.float32(INF), vec)


class SideView:
    """A limb class seen in one role (lower or upper limit) for one
    component's parity: effective values, validity, and example facts."""

    __slots__ = ("cls", "eff", "valid", "ok_plus", "excl_bits", "valid_bits",
                 "improve_rows", "improve_any", "sound_all")

    def __init__(self, cls: LimbClass, role: str, parity: str):
        self.cls = cls
        self.eff = effective_lo(cls.vec) if role == "lo" else effective_hi(cls.vec)
        self.valid = parity_valid_vec(self.eff, parity)
        self.ok_plus = True
        self.excl_bits = 0
        self.valid_bits = 0
        self.improve_rows = None
        self.improve_any = False
        self.sound_all = True


def side_views(classes, role: str, parity: str, ex_cols, ex_n, eplus_idx, eminus_idx,
               ex_cprime, grid_ctx) -> list[SideView]:
    """Annotate classes with everything the pair tests need."""
    out = []
    for cls in classes:
        sv = SideView(cls, role, parity)
        if ex_n:
            vals = eval_limit_columns(cls.expr, ex_cols, ex_n)
            eff = effective_lo(vals) if role == "lo" else effective_hi(vals)
            valid = parity_valid_vec(eff, parity)
            if role == "lo":
                inside = eff <= ex_cprime
                outside = eff > ex_cprime
            else:
                inside = eff >= ex_cprime
                outside = eff < ex_cprime
            sv.ok_plus = bool(np.all(valid[eplus_idx] & inside[eplus_idx])) if len(eplus_idx) else True
            bits_v = 0
            bits_x = 0
            for j, i in enumerate(eminus_idx):
                if valid[i]:
                    bits_v |= 1 << j
                    if outside[i]:
                        bits_x |= 1 << j
            sv.valid_bits = bits_v
            sv.excl_bits = bits_x
        if grid_ctx is not None:
            tne, t_lo, t_hi, img_lo, img_hi, strict = grid_ctx
            if role == "lo":
                improve = tne & sv.valid & (sv.eff > t_lo)
                if strict:
                    sv.sound_all = bool(np.all(sv.valid & (sv.eff <= img_lo)))
            else:
                improve = tne & sv.valid & (sv.eff < t_hi)
                if strict:
                    sv.sound_all = bool(np.all(sv.valid & (sv.eff >= img_hi)))
            sv.improve_rows = improve
            sv.improve_any = bool(improve.any())
        out.append(sv)
    return out


def example_columns(problem: Problem, examples) -> tuple[dict, np.ndarray]:
    """Stack example environments into evaluation columns plus the c' vector."""
    names = problem.field_names()
    n = len(examples)
    cols = {name: np.empty(n, dtype=np.float32) for name in names}
    cpr = np.empty(n, dtype=np.float32)
    for i, ex in enumerate(examples):
        env = problem.env_for(ex.inputs, ex.pos)
        for name in names:
            cols[name][i] = env[name]
        cpr[i] = ex.output
    return cols, cpr


# --- string candidate streams --------------------------------------------------------

class StringCandidates:
    """Whole-expression stream for string-DSL grammars, with per-row output
    memoization (grids and grammars are small on the string side)."""

    def __init__(self, problem: Problem, grammar: dsl.Grammar, k: int, unroll: int):
        self.problem = problem
        self.grammar = grammar
        self.k = k
        self.ctx = dsl.EvalContext(problem, k)
        self.unroll = unroll
        self._outputs: dict = {}

    def stream(self, max_size: int):
        yield from dsl.enumerate_exprs(self.grammar, max_size, unroll_depth=self.unroll)

    def output(self, expr, inputs, pos):
        key = (expr, tuple(pv.components for pv in inputs), pos)
        got = self._outputs.get(key)
        if got is None:
            env = self.problem.env_for(inputs, pos)
            got = dsl.eval_expr(expr, env, self.ctx)
            self._outputs[key] = got
        return got
