"""Bounded-exhaustive implementations of the logical checks: soundness
counterexamples, 1-precision counterexamples with witness search, positive
example validation, and surely-negative classification.

Verdicts are 'sound'/'unsound', 'precise'/'imprecise', or 'indeterminate'
(budget exhausted; never treated as success by callers).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import dsl
from .domains import (
    ClassDomain, FlatVal, Interval, IntervalDomain, Problem, ProductValue,
    StringSetDomain, universe_index,
)
from .extint import INF, NINF, is_finite
from .grid import (
    CheckBudget, Grid, grid_for, parity_valid_vec, resolve_interval_vec,
)
from .search import (
    ClassTable, DeadlineExceeded, SideView, StringCandidates, _Deadline,
    effective_hi, effective_lo, example_columns, iter_interval_pairs, side_views,
)

SOUND = "sound"
UNSOUND = "unsound"
PRECISE = "precise"
IMPRECISE = "imprecise"
INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class Example:
    """<abstract input tuple, concrete output> with a polarity tag.
    Identity ignores polarity so promotion does not duplicate entries."""
    inputs: tuple[ProductValue, ...]
    pos: FlatVal | None
    output: object
    polarity: str = field(default="positive", compare=False)

    def with_polarity(self, polarity: str) -> "Example":
        return Example(self.inputs, self.pos, self.output, polarity)


def format_example(problem: Problem, ex: Example):
    from . import sexpr
    node = ["example", ["inputs"] + [problem.product.format_value(pv) for pv in ex.inputs]]
    if ex.pos is not None:
        node.append(["pos"] + problem.pos_domain.format_value(ex.pos)[1:]
                    if ex.pos.tag == "const" else ["pos", ex.pos.tag])
    out = ex.output
    if isinstance(out, bool):
        node.append(["output", "true" if out else "false"])
    elif isinstance(out, str):
        node.append(["output", sexpr.qstr(out)])
    else:
        node.append(["output", str(out)])
    return node


def parse_example(problem: Problem, node, polarity: str) -> Example:
    if not (isinstance(node, list) and node and node[0] == "example"):
        raise ValueError(f"bad example literal {node!r}")
    inputs = None
    pos = None
    output = None
    for part in node[1:]:
        if part[0] == "inputs":
            inputs = tuple(problem.product.parse_value(x) for x in part[1:])
        elif part[0] == "pos":
            pos = (problem.pos_domain.top if part[1] == "top"
                   else problem.pos_domain.make(int(part[1])))
        elif part[0] == "output":
            raw = part[1]
            if isinstance(raw, tuple):
                output = raw[1]
            elif raw in ("true", "false"):
                output = raw == "true"
            else:
                output = int(raw)
    if inputs is None or output is None:
        raise ValueError("example needs (inputs ...) and (output ...)")
    if len(inputs) != problem.arity:
        raise ValueError("example input arity mismatch")
    if problem.pos_domain is not None and pos is None:
        raise ValueError("example needs a (pos ...) argument for this operation")
    return Example(inputs, pos, output, polarity)


# --- example-level predicates -----------------------------------------------------

def check_pos(ex: Example, problem: Problem) -> bool:
    """True iff some concrete input in the gamma intersection maps to the
    example's output (the example is genuinely positive)."""
    img = problem.image(ex.inputs, ex.pos)
    if problem.product.kind == "int":
        return img is not None and img[0] <= ex.output <= img[1]
    return img.contains(ex.output)


def surely_negative(ex: Example, problem: Problem) -> bool:
    """True iff even the per-component direct transformers exclude the
    output for some component (hard negative territory)."""
    for k in range(problem.n):
        out = problem.direct_component(k, ex.inputs, ex.pos)
        if not problem.out_domains[k].contains(out, ex.output):
            return True
    return False


def example_on_grid(ex: Example, problem: Problem, budget: CheckBudget) -> bool:
    prod = problem.product
    for pv in ex.inputs:
        if prod.sigma(ProductValue(pv.components)).components != pv.components:
            return False
        if prod.kind == "int":
            bound = min(budget.grid_bound or problem.cfg.int_bound, problem.cfg.int_bound)
            for v in pv.components:
                for lim in (v.lo, v.hi):
                    if is_finite(lim) and abs(lim) > bound:
                        return False
    if isinstance(ex.output, bool):
        return True
    if isinstance(ex.output, int):
        return problem.cfg.in_out_int_universe(ex.output)
    return problem.cfg.in_out_str_universe(ex.output)


# --- component output evaluation ---------------------------------------------------

def direct_limits_vec(problem: Problem, k: int, grid: Grid, rows=None):
    """Vectorized closed form of the direct interval transformer."""
    dom: IntervalDomain = problem.out_domains[k]  # type: ignore[assignment]
    alias = problem.comp_names[k]

    def col(arg, side):
        suffix = str(arg + 1) if problem.arity > 1 else ""
        c = grid.cols[f"{alias}{suffix}.{side}"]
        return c if rows is None else c[rows]

    name = problem.op.name
    with np.errstate(invalid="ignore"):
        if name == "inc":
            lo, hi = col(0, "l") + 1, col(0, "r") + 1
        elif name == "add":
            lo, hi = col(0, "l") + col(1, "l"), col(0, "r") + col(1, "r")
        elif name == "sub":
            lo, hi = col(0, "l") - col(1, "r"), col(0, "r") - col(1, "l")
        elif name == "abs":
            l, r = col(0, "l"), col(0, "r")
            lo = np.where(l > 0, l, np.where(r < 0, -r, np.float32(0)))
            hi = np.maximum(-l, r)
        elif name == "zero":
            n = grid.n_rows if rows is None else len(rows)
            lo = np.zeros(n, dtype=np.float32)
            hi = np.zeros(n, dtype=np.float32)
        else:
            raise dsl.EvalError(f"no direct closed form for {name!r}")
    lo = _round_vec(lo, dom, down=True)
    hi = _round_vec(hi, dom, down=False)
    valid = np.ones(len(lo), dtype=bool)
    return lo, hi, valid


def _round_vec(x, dom: IntervalDomain, down: bool):
    if dom.parity == "any":
        return x
    bit = 1.0 if dom.parity == "odd" else 0.0
    finite = np.isfinite(x)
    mism = np.zeros(len(x), dtype=bool)
    mism[finite] = np.mod(x[finite], 2.0) != bit
    return np.where(mism, x - 1 if down else x + 1, x)


def component_limits_vec(problem: Problem, expr, k: int, grid: Grid, rows=None):
    """(lo, hi, valid) arrays for one component transformer; empty rows are
    lo > hi, parity violations drop the valid bit."""
    if isinstance(expr, dsl.DirectRef):
        return direct_limits_vec(problem, k, grid, rows)
    if not isinstance(expr, dsl.MkInterval):
        raise dsl.EvalError(f"not an interval transformer: {expr!r}")
    dom: IntervalDomain = problem.out_domains[k]  # type: ignore[assignment]
    lo = grid.eval_limit_vec(expr.lo, rows)
    hi = grid.eval_limit_vec(expr.hi, rows)
    lo, hi = resolve_interval_vec(lo, hi)
    valid = parity_valid_vec(lo, dom.parity) & parity_valid_vec(hi, dom.parity)
    return lo, hi, valid


def tuple_gamma_vec(problem: Problem, tup: dsl.TransformerTuple, grid: Grid, rows=None):
    """Product concretization bounds of the whole tuple's output per row,
    clipped to the output universe; rows with an invalid component are
    marked non-eligible."""
    out_b = float(problem.cfg.int_out_bound)
    n = grid.n_rows if rows is None else len(rows)
    t_lo = np.full(n, -out_b, dtype=np.float32)
    t_hi = np.full(n, out_b, dtype=np.float32)
    ok = np.ones(n, dtype=bool)
    for k, comp in enumerate(tup.components):
        lo, hi, valid = component_limits_vec(problem, comp, k, grid, rows)
        ok &= valid
        t_lo = np.maximum(t_lo, lo)
        t_hi = np.minimum(t_hi, hi)
    ne = ok & (t_lo <= t_hi)
    return t_lo, t_hi, ne


# --- soundness ---------------------------------------------------------------------

def check_soundness(expr, k: int, problem: Problem, budget: CheckBudget):
    """Exhaustive bounded soundness of component k's transformer: find the
    first grid input (deterministic order) whose image escapes the output's
    concretization."""
    grid = grid_for(problem, budget)
    deadline = _Deadline(budget.deadline_s)
    try:
        if problem.product.kind == "int":
            return _check_soundness_int(expr, k, problem, grid)
        return _check_soundness_str(expr, k, problem, grid, deadline)
    except DeadlineExceeded:
        return INDETERMINATE, None


def _check_soundness_int(expr, k, problem, grid):
    lo, hi, valid = component_limits_vec(problem, expr, k, grid)
    bad = ~valid | (lo > grid.img_lo) | (hi < grid.img_hi)
    idx = np.flatnonzero(bad)
    if len(idx) == 0:
        return SOUND, None
    r = int(idx[0])
    inputs, pos = grid.rows[r]
    img_lo = float(grid.img_lo[r])
    if not valid[r] or lo[r] > hi[r] or lo[r] > img_lo:
        c = int(img_lo)
    else:
        c = int(max(float(hi[r]) + 1, img_lo))
    return UNSOUND, Example(inputs, pos, c, "positive")


def _check_soundness_str(expr, k, problem, grid, deadline):
    dom = problem.out_domains[k]
    ctx = dsl.EvalContext(problem, k)
    for inputs, pos in grid.rows:
        deadline.check()
        img = problem.image(inputs, pos)
        out = dsl.eval_expr(expr, problem.env_for(inputs, pos), ctx)
        if out is dsl.INVALID:
            c = next(iter(img.members_ordered()), None)
            if c is not None:
                return UNSOUND, Example(inputs, pos, c, "positive")
            continue
        c = img.first_escaping(dom, out)
        if c is not None:
            return UNSOUND, Example(inputs, pos, c, "positive")
    return SOUND, None


# --- 1-precision -------------------------------------------------------------------

def check_precision_1(tup: dsl.TransformerTuple, k: int, eplus, eminus_k,
                      grammar: dsl.Grammar, problem: Problem, budget: CheckBudget,
                      strict: bool | None = None):
    """Search (witness expression, example) pairs: the witness satisfies all
    positives, excludes all of component k's negatives plus the new example,
    and the current tuple fails to exclude the new example. In strict mode
    the witness must additionally pass a bounded soundness check."""
    if strict is None:
        strict = budget.strict_witness
    grid = grid_for(problem, budget)
    deadline = _Deadline(budget.deadline_s)
    try:
        if problem.product.kind == "int":
            return _check_precision_int(tup, k, eplus, eminus_k, grammar, problem,
                                        grid, budget, strict, deadline)
        return _check_precision_str(tup, k, eplus, eminus_k, grammar, problem,
                                    grid, budget, strict, deadline)
    except DeadlineExceeded:
        return INDETERMINATE, None, None


_WITNESS_TABLES: dict = {}


def witness_table(problem: Problem, grammar: dsl.Grammar, grid: Grid,
                  budget: CheckBudget) -> ClassTable:
    key = (id(problem), id(grammar), budget.grid_key(), budget.witness_rows)
    got = _WITNESS_TABLES.get(key)
    if got is None:
        probe = grid.probe_indices()
        cols = {name: arr[probe] for name, arr in grid.cols.items()}
        got = ClassTable(grammar, cols, len(probe), budget.unroll_depth)
        _WITNESS_TABLES[key] = got
    return got


def _check_precision_int(tup, k, eplus, eminus_k, grammar, problem, grid, budget,
                         strict, deadline):
    dom: IntervalDomain = problem.out_domains[k]
    probe = grid.probe_indices()
    t_lo, t_hi, tne = tuple_gamma_vec(problem, tup, grid, probe)
    if not tne.any():
        return PRECISE, None, None
    img_lo = grid.img_lo[probe]
    img_hi = grid.img_hi[probe]
    grid_ctx = (tne, t_lo, t_hi, img_lo, img_hi, strict)

    examples = list(eplus) + list(eminus_k)
    ex_cols, ex_cpr = example_columns(problem, examples)
    ep_idx = np.arange(len(eplus))
    em_idx = np.arange(len(eplus), len(examples))
    full_mask = (1 << len(eminus_k)) - 1

    table = witness_table(problem, grammar, grid, budget)
    views: dict = {}

    def view_of(cls, role):
        if cls.level is None:
            key = (cls.expr, role)
            got = views.get(key)
            if got is None:
                got = side_views([cls], role, dom.parity, ex_cols, len(examples),
                                 ep_idx, em_idx, ex_cpr, grid_ctx)[0]
                views[key] = got
            return got
        key = (cls.level, role)
        got = views.get(key)
        if got is None:
            got = side_views(table.of(*cls.level), role, dom.parity, ex_cols,
                             len(examples), ep_idx, em_idx, ex_cpr, grid_ctx)
            views[key] = got
        return got[cls.seq]

    side_cap = budget.witness_cap
    counter = 0
    for total, lo_cls, hi_cls in iter_interval_pairs(table, grammar, side_cap):
        counter += 1
        if counter % 4096 == 0:
            deadline.check()
        lo_view = view_of(lo_cls, "lo")
        hi_view = view_of(hi_cls, "hi")
        if not (lo_view.ok_plus and hi_view.ok_plus):
            continue
        if strict and not (lo_view.sound_all and hi_view.sound_all):
            continue
        sat = lo_view.valid_bits & hi_view.valid_bits & (lo_view.excl_bits | hi_view.excl_bits)
        if sat != full_mask:
            continue
        if not (lo_view.improve_any or hi_view.improve_any):
            continue
        rows = (lo_view.improve_rows & hi_view.valid) | (hi_view.improve_rows & lo_view.valid)
        hit = np.flatnonzero(rows)
        if len(hit) == 0:
            continue
        r = int(hit[0])
        g = int(probe[r])
        inputs, pos = grid.rows[g]
        eff_lo = float(effective_lo(lo_cls.vec[r: r + 1])[0])
        eff_hi = float(effective_hi(hi_cls.vec[r: r + 1])[0])
        base = float(t_lo[r])
        if eff_lo > base or eff_hi < base:
            c = int(base)
        else:
            c = int(eff_hi) + 1
        witness = dsl.MkInterval(lo_cls.expr, hi_cls.expr)
        return IMPRECISE, Example(inputs, pos, c, "negative"), witness
    return PRECISE, None, None


def _check_precision_str(tup, k, eplus, eminus_k, grammar, problem, grid, budget,
                         strict, deadline):
    dom = problem.out_domains[k]
    cands = StringCandidates(problem, grammar, k, budget.unroll_depth)
    tuple_outs = []
    for inputs, pos in grid.rows:
        outs = []
        for j, comp in enumerate(tup.components):
            env = problem.env_for(inputs, pos)
            outs.append(dsl.eval_expr(comp, env, dsl.EvalContext(problem, j)))
        tuple_outs.append(outs)

    for h in cands.stream(budget.witness_cap):
        deadline.check()
        if not _sat_examples_str(h, cands, eplus, eminus_k, dom):
            continue
        if strict and not _witness_sound_str(h, cands, problem, dom, grid, deadline):
            continue
        for r, (inputs, pos) in enumerate(grid.rows):
            outs = tuple_outs[r]
            if any(o is dsl.INVALID for o in outs):
                continue
            hv = cands.output(h, inputs, pos)
            if hv is dsl.INVALID:
                break
            c = _first_excluded_output(problem, k, outs, hv)
            if c is not None:
                return IMPRECISE, Example(inputs, pos, c, "negative"), h
    return PRECISE, None, None


def _sat_examples_str(h, cands, eplus, eminus_k, dom) -> bool:
    for ex in eplus:
        out = cands.output(h, ex.inputs, ex.pos)
        if out is dsl.INVALID or not dom.contains(out, ex.output):
            return False
    for ex in eminus_k:
        out = cands.output(h, ex.inputs, ex.pos)
        if out is dsl.INVALID or dom.contains(out, ex.output):
            return False
    return True


def _witness_sound_str(h, cands, problem, dom, grid, deadline) -> bool:
    for inputs, pos in grid.rows:
        deadline.check()
        out = cands.output(h, inputs, pos)
        if out is dsl.INVALID:
            return False
        if not problem.image(inputs, pos).covered_by(dom, out):
            return False
    return True


def _first_excluded_output(problem, k, tuple_outs, h_val):
    """Smallest output-universe value inside the tuple's concretization but
    outside gamma_k(h)."""
    doms = problem.out_domains
    dom_k = doms[k]

    def in_tuple(c) -> bool:
        return all(d.contains(v, c) for d, v in zip(doms, tuple_outs))

    if problem.op.result_kind == "bool":
        for c in (False, True):
            if in_tuple(c) and not dom_k.contains(h_val, c):
                return c
        return None

    cfg = problem.cfg
    explicit = None
    for d, v in zip(doms, tuple_outs):
        if isinstance(d, StringSetDomain) and v.tag == "set":
            explicit = v.items if explicit is None else explicit & v.items
    if explicit is not None:
        for c in sorted(explicit, key=lambda s: (len(s), s)):
            if len(c) <= cfg.max_out_len and in_tuple(c) and not dom_k.contains(h_val, c):
                return c
        return None

    class_doms = [(d, v) for d, v in zip(doms, tuple_outs) if isinstance(d, ClassDomain)]
    atoms = None
    classifier_dom = None
    for d, v in class_doms:
        classifier_dom = d
        atoms = set(v) if atoms is None else atoms & set(v)
    if atoms is None:
        atoms = set(classifier_dom.atoms) if classifier_dom else None
    if classifier_dom is None:
        return None
    atoms = atoms & classifier_dom.realizable_atoms(cfg)
    if isinstance(dom_k, ClassDomain):
        atoms = atoms - set(h_val)
        exclude: frozenset = frozenset()
    else:
        exclude = h_val.items if h_val.tag == "set" else None
        if exclude is None and h_val.tag == "top":
            return None
        if h_val.tag == "bot":
            exclude = frozenset()
    if not atoms:
        return None
    for c in _atom_stream_first(classifier_dom, frozenset(atoms), exclude or frozenset(),
                                cfg, limit=len(exclude or ()) + 4):
        if in_tuple(c) and not dom_k.contains(h_val, c):
            return c
    return None


_ATOM_STREAMS: dict = {}


def _atom_stream_first(dom: ClassDomain, atoms: frozenset, exclude: frozenset, cfg,
                       limit: int):
    """First few output-universe strings whose class lies in `atoms`,
    skipping `exclude`; scans length-then-lex with a cached prefix."""
    key = (id(dom), tuple(sorted(atoms)), cfg.fingerprint_fields())
    prefix = _ATOM_STREAMS.setdefault(key, [])
    need = limit + len(exclude)
    if len(prefix) < need:
        gen = _out_universe_stream(cfg)
        seen = 0
        for s in gen:
            if dom.classify(s) in atoms:
                if seen >= len(prefix):
                    prefix.append(s)
                seen += 1
                if len(prefix) >= need:
                    break
    count = 0
    for s in prefix:
        if s not in exclude:
            yield s
            count += 1
            if count >= limit:
                return


def _out_universe_stream(cfg):
    yield ""
    frontier = [""]
    for _ in range(cfg.max_out_len):
        frontier = [s + c for s in frontier for c in cfg.alphabet]
        yield from frontier
