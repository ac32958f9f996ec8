"""Deterministic sigma-reduced abstract-input grids.

Every existential over abstract inputs in the checks is resolved by
enumerating these grids in a fixed order: ascending total interval width
(set cardinality for string domains), then lexicographic. Interval grids
carry numpy column matrices so candidate expressions can be evaluated over
the whole grid at once.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .domains import (
    ClassDomain, ConstStringDomain, FlatNumDomain, Interval, IntervalDomain,
    Problem, ProductValue, StringSetDomain, int_image_bounds, universe_index,
)
from .extint import INF, NINF


@dataclass(frozen=True)
class CheckBudget:
    """Finitization of the checks' existential quantifiers.

    grid_bound caps interval limits (None: the universe bound); witness_cap
    caps witness-expression size; witness_rows subsamples the rows scanned
    by the engine's internal precision checks (final validation always runs
    the full grid); deadline_s aborts a single check as indeterminate.
    """
    grid_bound: int | None = None
    witness_cap: int = 12
    unroll_depth: int = 3
    deadline_s: float = 600.0
    witness_rows: int = 8192
    str_grid_len: int = 2
    str_anchors: tuple[str, ...] = ()
    strict_witness: bool = False

    def __post_init__(self):
        if self.grid_bound is not None and self.grid_bound <= 0:
            raise ValueError("grid_bound must be positive")
        if self.witness_cap < 3 or self.witness_rows < 1 or self.deadline_s <= 0:
            raise ValueError("budget fields must be positive")

    def grid_key(self):
        return (self.grid_bound, self.str_grid_len, self.str_anchors)


def interval_grid_values(dom: IntervalDomain, bound: int) -> list[Interval]:
    """All non-bottom intervals with limits in [-bound, bound] U {-inf, +inf}."""
    finite = [v for v in range(-bound, bound + 1) if dom.limit_ok(v)]
    los = [NINF] + finite
    his = finite + [INF]
    return [Interval(lo, hi) for lo in los for hi in his if lo <= hi]


def string_grid_strings(cfg, budget: CheckBudget) -> list[str]:
    index = universe_index(cfg)
    out = [s for s in index.strings if len(s) <= budget.str_grid_len]
    for s in budget.str_anchors:
        if s not in index.pos:
            raise ValueError(f"grid anchor {s!r} is outside the string universe")
        if s not in out:
            out.append(s)
    return out


def product_grid_values(problem: Problem, budget: CheckBudget) -> list[ProductValue]:
    """Sigma-fixed points with non-empty bounded concretization, sorted by
    (total width, lexicographic shape). The all-bottom tuple is handled as a
    special case by the checks, never enumerated here."""
    prod = problem.product
    if prod.kind == "int":
        bound = budget.grid_bound or problem.cfg.int_bound
        bound = min(bound, problem.cfg.int_bound)
        pools = [interval_grid_values(d, bound) for d in prod.domains]
    else:
        strings = string_grid_strings(problem.cfg, budget)
        pools = [_string_domain_values(d, strings, problem.cfg.ssk_k) for d in prod.domains]
    out = []
    for combo in itertools.product(*pools):
        pv = ProductValue(tuple(combo))
        if prod.sigma(pv).components == pv.components:
            out.append(ProductValue(tuple(combo), reduced=True))
    out.sort(key=prod.sort_key)
    return out


def _string_domain_values(dom, strings: list[str], k: int) -> list:
    if isinstance(dom, ConstStringDomain):
        return [dom.make({s}) for s in strings] + [dom.top]
    if isinstance(dom, StringSetDomain):
        out = []
        for size in range(1, k + 1):
            out.extend(dom.make(c) for c in itertools.combinations(strings, size))
        out.append(dom.top)
        return out
    if isinstance(dom, ClassDomain):
        atoms = dom.atoms
        subsets = []
        for size in range(1, len(atoms) + 1):
            subsets.extend(frozenset(c) for c in itertools.combinations(atoms, size))
        return subsets
    raise TypeError(f"no grid enumeration for domain {dom.name!r}")


def pos_grid_values(dom: FlatNumDomain) -> list:
    return [dom.make(i) for i in range(dom.max_value + 1)] + [dom.top]


class Grid:
    """The check grid for one problem: ordered rows of abstract inputs, and
    (for interval products) numpy field columns plus exact image bounds."""

    def __init__(self, problem: Problem, budget: CheckBudget):
        self.problem = problem
        self.budget = budget
        arg_values = product_grid_values(problem, budget)
        self.arg_values = arg_values
        pos_values = pos_grid_values(problem.pos_domain) if problem.pos_domain else None
        self.pos_values = pos_values

        prod = problem.product
        keys = [prod.sort_key(v) for v in arg_values]
        pools = [list(range(len(arg_values))) for _ in range(problem.arity)]
        if pos_values is not None:
            pos_keys = [problem.pos_domain.sort_key(v) for v in pos_values]
            pools.append(list(range(len(pos_values))))
        combos = list(itertools.product(*pools))

        def row_key(idx):
            ks = [keys[i] for i in idx[:problem.arity]]
            if pos_values is not None:
                ks.append(pos_keys[idx[-1]])
            return (sum(k[0] for k in ks), tuple(k[1:] for k in ks))

        combos.sort(key=row_key)
        self.rows: list[tuple] = []
        for idx in combos:
            inputs = tuple(arg_values[i] for i in idx[:problem.arity])
            pos = pos_values[idx[-1]] if pos_values is not None else None
            self.rows.append((inputs, pos))
        self.n_rows = len(self.rows)

        if prod.kind == "int":
            self._build_int_matrix()
        self._probe = None

    # -- interval machinery ----------------------------------------------------

    def _build_int_matrix(self):
        p = self.problem
        cols: dict[str, np.ndarray] = {}
        names = p.field_names()
        data = np.empty((self.n_rows, len(names)), dtype=np.float32)
        for r, (inputs, _) in enumerate(self.rows):
            c = 0
            for pv in inputs:
                for v in pv.components:
                    data[r, c] = v.lo
                    data[r, c + 1] = v.hi
                    c += 2
        for j, name in enumerate(names):
            cols[name] = np.ascontiguousarray(data[:, j])
        self.cols = cols

        bound = p.cfg.int_bound
        lo_b, hi_b = [], []
        for inputs, _ in self.rows:
            bs = [p.product.gamma_bounds(pv) for pv in inputs]
            img = int_image_bounds(p.op, bs)
            lo_b.append(img[0])
            hi_b.append(img[1])
        self.img_lo = np.asarray(lo_b, dtype=np.float32)
        self.img_hi = np.asarray(hi_b, dtype=np.float32)
        out_b = p.cfg.int_out_bound
        assert float(self.img_lo.min()) >= -out_b and float(self.img_hi.max()) <= out_b

    def probe_indices(self) -> np.ndarray:
        """Deterministic witness-scan subsample: the small-width prefix plus a
        uniform stride over the rest."""
        if self._probe is None:
            cap = self.budget.witness_rows
            if self.n_rows <= cap:
                self._probe = np.arange(self.n_rows)
            else:
                head = cap // 2
                rest = self.n_rows - head
                stride = max(1, rest // (cap - head))
                tail = np.arange(head, self.n_rows, stride)[: cap - head]
                self._probe = np.concatenate([np.arange(head), tail])
        return self._probe

    def eval_limit_vec(self, expr, rows: np.ndarray | None = None) -> np.ndarray:
        """Evaluate an integer limb over all grid rows (or a row subset)."""
        cols = self.cols
        if rows is not None:
            cols = {k: v[rows] for k, v in cols.items()}
        return eval_limit_columns(expr, cols, self.n_rows if rows is None else len(rows))

    def env_of_row(self, r: int) -> dict:
        inputs, pos = self.rows[r]
        return self.problem.env_for(inputs, pos)


def eval_limit_columns(expr, cols: dict[str, np.ndarray], n: int) -> np.ndarray:
    """Vectorized extended-integer limb evaluation (IEEE inf/nan semantics,
    matching dsl.eval_limit pointwise)."""
    from . import dsl

    def rec(e):
        if isinstance(e, dsl.Var):
            return cols[e.name]
        if isinstance(e, dsl.Num):
            return np.full(n, float(e.value), dtype=np.float32)
        if isinstance(e, dsl.InfConst):
            return np.full(n, INF if e.sign > 0 else NINF, dtype=np.float32)
        if isinstance(e, dsl.Unary):
            return -rec(e.x)
        if isinstance(e, dsl.Binary):
            a, b = rec(e.a), rec(e.b)
            with np.errstate(invalid="ignore"):
                if e.op == "add":
                    return a + b
                if e.op == "sub":
                    return a - b
                if e.op == "min":
                    return np.minimum(a, b)
                return np.maximum(a, b)
        raise TypeError(f"not an integer limb: {e!r}")

    return rec(expr)


def resolve_interval_vec(lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Interval assembly: indeterminate limits resolve toward top."""
    lo = np.where(np.isnan(lo), np.float32(NINF), lo)
    hi = np.where(np.isnan(hi), np.float32(INF), hi)
    return lo, hi


def parity_valid_vec(x: np.ndarray, parity: str) -> np.ndarray:
    if parity == "any":
        return np.ones(len(x), dtype=bool)
    bit = 1.0 if parity == "odd" else 0.0
    finite = np.isfinite(x)
    out = np.ones(len(x), dtype=bool)
    vals = x[finite]
    out[finite] = np.mod(vals, 2.0) == bit
    return out


_GRIDS: dict = {}


def grid_for(problem: Problem, budget: CheckBudget) -> Grid:
    key = (id(problem), budget.grid_key(), budget.witness_rows)
    got = _GRIDS.get(key)
    if got is None:
        got = Grid(problem, budget)
        _GRIDS[key] = got
    return got
