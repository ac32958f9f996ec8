"""Example-consistent expression synthesis: exact Synthesize, and MaxSynth
which drops a minimal set of soft negative examples when synthesis is
infeasible (all positives and all surely-negative examples stay hard)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dsl
from .domains import IntervalDomain, Problem
from .grid import CheckBudget
from .search import (
    ClassTable, DeadlineExceeded, StringCandidates, _Deadline, example_columns,
    iter_interval_pairs, side_views,
)
from .verification import Example


@dataclass
class ExampleSets:
    """Shared positives, per-component private negatives, and the hard
    surely-negative subsets."""
    eplus: list[Example] = field(default_factory=list)
    eminus: list[list[Example]] = field(default_factory=list)
    hard: list[set[Example]] = field(default_factory=list)

    @classmethod
    def empty(cls, n: int) -> "ExampleSets":
        return cls([], [[] for _ in range(n)], [set() for _ in range(n)])

    def add_positive(self, ex: Example) -> bool:
        ex = ex.with_polarity("positive")
        if ex in self.eplus:
            return False
        self.eplus.append(ex)
        return True

    def add_negative(self, k: int, ex: Example, hard: bool) -> bool:
        ex = ex.with_polarity("surely-negative" if hard else "negative")
        if hard:
            self.hard[k].add(ex)
        if ex in self.eminus[k]:
            return False
        self.eminus[k].append(ex)
        return True

    def drop_negatives(self, k: int, dropped) -> None:
        assert not (set(dropped) & self.hard[k]), "hard negatives are never dropped"
        self.eminus[k] = [e for e in self.eminus[k] if e not in set(dropped)]

    def check_invariants(self) -> None:
        for k, hard in enumerate(self.hard):
            assert hard <= set(self.eminus[k])
            assert not (hard & set(self.eplus))


def synthesize(grammar: dsl.Grammar, problem: Problem, k: int, eplus, eminus_k,
               size_cap: int, budget: CheckBudget):
    """First expression in enumeration order satisfying every positive and
    excluding every negative; None when nothing within the cap qualifies."""
    got = _synth_search(grammar, problem, k, eplus, eminus_k, hard_k=None,
                        size_cap=size_cap, budget=budget, maximize=False)
    return got[0] if got else None


def max_synth(grammar: dsl.Grammar, problem: Problem, k: int, eplus, eminus_k,
              hard_k, size_cap: int, budget: CheckBudget):
    """Best effort variant: positives and surely-negatives are hard, other
    negatives soft; maximizes the number of satisfied soft constraints, so
    the dropped set delta is minimal. Ties: smaller size, then order."""
    return _synth_search(grammar, problem, k, eplus, eminus_k, hard_k=hard_k,
                         size_cap=size_cap, budget=budget, maximize=True)


def _synth_search(grammar, problem, k, eplus, eminus_k, hard_k, size_cap, budget,
                  maximize):
    deadline = _Deadline(budget.deadline_s)
    try:
        if problem.product.kind == "int":
            return _synth_int(grammar, problem, k, eplus, eminus_k, hard_k,
                              size_cap, budget, maximize, deadline)
        return _synth_str(grammar, problem, k, eplus, eminus_k, hard_k,
                          size_cap, budget, maximize, deadline)
    except DeadlineExceeded:
        return None


def _synth_int(grammar, problem, k, eplus, eminus_k, hard_k, size_cap, budget,
               maximize, deadline):
    dom: IntervalDomain = problem.out_domains[k]
    examples = list(eplus) + list(eminus_k)
    ex_cols, ex_cpr = example_columns(problem, examples)
    ep_idx = np.arange(len(eplus))
    em_idx = np.arange(len(eplus), len(examples))
    n_neg = len(eminus_k)
    full = (1 << n_neg) - 1
    hard_mask = 0
    if hard_k:
        for j, ex in enumerate(eminus_k):
            if ex in hard_k:
                hard_mask |= 1 << j

    table = ClassTable(grammar, ex_cols, len(examples), budget.unroll_depth)
    views: dict = {}

    def view_of(cls, role):
        if cls.level is None:
            key = (cls.expr, role)
        else:
            key = (cls.level, role)
        got = views.get(key)
        if got is None:
            src = [cls] if cls.level is None else table.of(*cls.level)
            got = side_views(src, role, dom.parity, ex_cols, len(examples),
                             ep_idx, em_idx, ex_cpr, None)
            views[key] = got
        return got[0] if cls.level is None else got[cls.seq]

    best = None  # (score, expr, sat_bits)
    counter = 0
    for total, lo_cls, hi_cls in iter_interval_pairs(table, grammar, size_cap):
        counter += 1
        if counter % 8192 == 0:
            deadline.check()
        lo_v = view_of(lo_cls, "lo")
        hi_v = view_of(hi_cls, "hi")
        if not (lo_v.ok_plus and hi_v.ok_plus):
            continue
        sat = lo_v.valid_bits & hi_v.valid_bits & (lo_v.excl_bits | hi_v.excl_bits)
        expr = dsl.MkInterval(lo_cls.expr, hi_cls.expr)
        if not maximize:
            if sat == full:
                return expr, ()
            continue
        if sat & hard_mask != hard_mask:
            continue
        score = bin(sat & ~hard_mask).count("1")
        if best is None or score > best[0]:
            best = (score, expr, sat)
            if sat == full:
                break
    if not maximize or best is None:
        return None
    _, expr, sat = best
    dropped = tuple(ex for j, ex in enumerate(eminus_k) if not (sat >> j) & 1)
    return expr, dropped


def _synth_str(grammar, problem, k, eplus, eminus_k, hard_k, size_cap, budget,
               maximize, deadline):
    dom = problem.out_domains[k]
    cands = StringCandidates(problem, grammar, k, budget.unroll_depth)
    hard_k = hard_k or set()
    best = None
    for expr in cands.stream(size_cap):
        deadline.check()
        ok_plus = True
        for ex in eplus:
            out = cands.output(expr, ex.inputs, ex.pos)
            if out is dsl.INVALID or not dom.contains(out, ex.output):
                ok_plus = False
                break
        if not ok_plus:
            continue
        sat = []
        for ex in eminus_k:
            out = cands.output(expr, ex.inputs, ex.pos)
            sat.append(out is not dsl.INVALID and not dom.contains(out, ex.output))
        if not maximize:
            if all(sat):
                return expr, ()
            continue
        if any(ex in hard_k and not s for ex, s in zip(eminus_k, sat)):
            continue
        score = sum(1 for ex, s in zip(eminus_k, sat) if s and ex not in hard_k)
        if best is None or score > best[0]:
            best = (score, expr, tuple(sat))
            if all(sat):
                break
    if not maximize or best is None:
        return None
    _, expr, sat = best
    dropped = tuple(ex for ex, s in zip(eminus_k, sat) if not s)
    return expr, dropped
