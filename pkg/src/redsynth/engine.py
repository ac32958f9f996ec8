"""The synthesis engine: direct-product initialization, the outer
changed-loop over components, per-component dual check loops with a
deterministic or seeded-fair scheduler, example triage, and independent
final validation.

Every inner iteration re-synthesizes the component from the current example
sets (falling back to MaxSynth with minimal drops), then the scheduler picks
a soundness or a 1-precision check. Soundness witnesses join the shared
positive set; precision witnesses are triaged (validated positives promoted,
surely-negative ones hardened) before joining the component's private
negatives, and every new negative invalidates all precision flags. A failed
precision check also clears the component's soundness flag, exactly as the
core algorithm states it.
"""

from __future__ import annotations

import json
import random
import time
from dataclasses import dataclass, field

import numpy as np

from . import dsl, sexpr
from .domains import Problem
from .grid import CheckBudget, grid_for
from .synthesis import ExampleSets, max_synth, synthesize
from .verification import (
    IMPRECISE, INDETERMINATE, PRECISE, SOUND, UNSOUND, Example, check_pos,
    check_precision_1, check_soundness, example_on_grid, format_example,
    surely_negative, tuple_gamma_vec,
)


class EngineError(Exception):
    pass


class InvariantViolation(EngineError):
    """A loop-head invariant failed under debug assertions."""


@dataclass
class EngineSettings:
    policy: str = "alternate"  # or "random"
    seed: int = 0
    max_size: int = 12         # per-limb / per-expression synthesis cap
    inner_cap: int = 10000
    outer_cap: int = 100
    drop_cap: int = 50
    resume_cap: int = 20
    debug_invariants: bool = False
    workers: int = 1           # reserved; the engine currently runs sequentially

    def __post_init__(self):
        if self.policy not in ("alternate", "random"):
            raise ValueError(f"unknown scheduler policy {self.policy!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


def schedule_check(policy: str, seed: int, k: int, iteration: int) -> str:
    """Deterministic scheduler: 'alternate' runs soundness on even inner
    iterations; 'random' shuffles each consecutive pair of iterations with a
    per-(seed, component, pair) PRNG, so neither check starves for more than
    one pair (the fairness the termination argument needs)."""
    if policy == "alternate":
        return "soundness" if iteration % 2 == 0 else "precision"
    pair = iteration // 2
    first = random.Random(f"{seed}:{k}:{pair}").choice(("soundness", "precision"))
    if iteration % 2 == 0:
        return first
    return "precision" if first == "soundness" else "soundness"


class EventLog:
    """Deterministic JSONL event stream; no wall-clock fields, so identical
    configs and seeds produce byte-identical logs."""

    def __init__(self, path=None):
        self.events: list[dict] = []
        self._fh = open(path, "w") if path else None

    def emit(self, **fields):
        self.events.append(fields)
        if self._fh:
            self._fh.write(json.dumps(fields, sort_keys=True) + "\n")

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = None


@dataclass
class ComponentVerdict:
    sound: bool
    precise: bool
    soundness_witness: Example | None = None
    precision_witness: Example | None = None
    witness_expr: dsl.Expr | None = None
    ideal_gap_rows: int = 0


@dataclass
class ValidationReport:
    components: list[ComponentVerdict]
    product_gap_rows: int = 0
    golden_mismatch_rows: int | None = None
    grid_rows: int = 0

    @property
    def all_sound(self) -> bool:
        return all(c.sound for c in self.components)

    @property
    def all_precise(self) -> bool:
        return all(c.precise for c in self.components)


@dataclass
class EngineReport:
    status: str  # "success" | "fail" | "nontermination" | "indeterminate"
    transformer: dsl.TransformerTuple | None
    examples: ExampleSets | None
    iterations: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    counterexamples: list = field(default_factory=list)
    validation: ValidationReport | None = None
    detail: str = ""


class EngineState:
    """Mutable Algorithm-1 state."""

    def __init__(self, problem: Problem, tup: dsl.TransformerTuple, sets: ExampleSets):
        self.problem = problem
        self.tuple = tup
        self.sets = sets
        n = problem.n
        self.is_sound = [True] * n
        self.is_precise = [False] * n
        self.changed = True
        self.inner_iterations = [0] * n
        self.drop_cycles = [0] * n
        self.synth_calls = 0


def initialize_examples(problem: Problem, bootstrap, budget: CheckBudget) -> ExampleSets:
    """Validated bootstrap sets: positives must pass the positivity check,
    negatives must fail it; everything must lie on the check grid."""
    sets = ExampleSets.empty(problem.n)
    for item in bootstrap or []:
        ex, component = item if isinstance(item, tuple) else (item, 0)
        if not example_on_grid(ex, problem, budget):
            raise EngineError(f"bootstrap example off the grid: {ex}")
        if ex.polarity == "positive":
            if not check_pos(ex, problem):
                raise EngineError(f"bootstrap positive fails the positivity check: {ex}")
            sets.add_positive(ex)
        else:
            if check_pos(ex, problem):
                raise EngineError(f"bootstrap negative is actually positive: {ex}")
            sets.add_negative(component, ex, hard=surely_negative(ex, problem))
    return sets


def direct_tuple_expr(problem: Problem) -> dsl.TransformerTuple:
    comps = tuple(dsl.DirectRef(problem.comp_names[k]) for k in range(problem.n))
    return dsl.TransformerTuple(comps, tuple("direct" for _ in comps))


class _Abort(Exception):
    def __init__(self, status: str, detail: str):
        self.status = status
        self.detail = detail
        super().__init__(detail)


_MISSING = object()


class Engine:
    def __init__(self, problem: Problem, grammars, budget: CheckBudget,
                 settings: EngineSettings, log: EventLog | None = None):
        self.problem = problem
        self.grammars = grammars
        self.budget = budget
        self.settings = settings
        self.log = log or EventLog()
        self._synth_memo: dict = {}
        self._sound_memo: dict = {}
        self._precise_memo: dict = {}
        self.timings: dict[str, float] = {}

    def _timed(self, phase: str, fn, *args, **kw):
        t0 = time.perf_counter()
        out = fn(*args, **kw)
        self.timings[phase] = self.timings.get(phase, 0.0) + time.perf_counter() - t0
        return out

    def run(self, bootstrap=None) -> EngineReport:
        sets = initialize_examples(self.problem, bootstrap, self.budget)
        state = EngineState(self.problem, direct_tuple_expr(self.problem), sets)
        report = EngineReport("success", None, sets)
        try:
            for _ in range(self.settings.resume_cap):
                self._main_loop(state, report)
                if self._final_feedback(state, report):
                    break
            else:
                raise _Abort("nontermination",
                             "final validation kept producing counterexamples")
        except _Abort as abort:
            report.status = abort.status
            report.detail = abort.detail
            report.transformer = None
            report.timings = self.timings
            self.log.emit(event="engine_end", status=abort.status, detail=abort.detail)
            return report
        report.transformer = state.tuple
        report.iterations["inner"] = list(state.inner_iterations)
        report.iterations["synth_calls"] = state.synth_calls
        report.timings = self.timings
        self.log.emit(event="engine_end", status="success",
                      transformer=[dsl.print_expr(c) for c in state.tuple.components])
        return report

    # -- Algorithm-1 loops --------------------------------------------------------

    def _main_loop(self, state: EngineState, report: EngineReport):
        outer = 0
        state.changed = True
        while state.changed:
            outer += 1
            if outer > self.settings.outer_cap:
                raise _Abort("nontermination",
                             f"outer sweep cap {self.settings.outer_cap} exceeded")
            state.changed = False
            for k in range(self.problem.n):
                self._component_loop(state, report, k)
        self.log.emit(event="sweep_done", outer_sweeps=outer)

    def _component_loop(self, state: EngineState, report: EngineReport, k: int):
        it = 0
        while not (state.is_sound[k] and state.is_precise[k]):
            if it >= self.settings.inner_cap:
                raise _Abort("nontermination",
                             f"inner cap {self.settings.inner_cap} exceeded for component {k}")
            if self.settings.debug_invariants:
                self._assert_invariants(state, k)
            self._resynthesize(state, k)
            which = schedule_check(self.settings.policy, self.settings.seed, k,
                                   state.inner_iterations[k])
            if which == "soundness":
                self._soundness_step(state, report, k)
            else:
                self._precision_step(state, report, k)
            state.inner_iterations[k] += 1
            it += 1

    def _resynthesize(self, state: EngineState, k: int):
        sets = state.sets
        key = (k, len(sets.eplus), tuple(sets.eminus[k]))
        got = self._synth_memo.get(key, _MISSING)
        if got is _MISSING:
            state.synth_calls += 1
            got = self._timed("synthesize", synthesize, self.grammars[k], self.problem,
                              k, sets.eplus, sets.eminus[k], self.settings.max_size,
                              self.budget)
            self._synth_memo[key] = got
            self.log.emit(event="synthesize", component=k,
                          candidate=dsl.print_expr(got) if got is not None else None,
                          candidate_size=dsl.expr_size(got) if got is not None else None,
                          eplus=len(sets.eplus), eminus=len(sets.eminus[k]))
        if got is None:
            got = self._max_synth(state, k)
        if got != state.tuple.components[k]:
            state.tuple = state.tuple.replace(k, got, "synthesized")

    def _max_synth(self, state: EngineState, k: int):
        sets = state.sets
        if state.drop_cycles[k] >= self.settings.drop_cap:
            raise _Abort("nontermination",
                         f"drop-cycle cap {self.settings.drop_cap} exceeded for component {k}")
        out = self._timed("max_synth", max_synth, self.grammars[k], self.problem, k,
                          sets.eplus, sets.eminus[k], sets.hard[k],
                          self.settings.max_size, self.budget)
        if out is None:
            self.log.emit(event="max_synth", component=k, result="fail")
            raise _Abort("fail", f"synthesis infeasible for component {k} "
                                 "(hard constraints unsatisfiable)")
        expr, dropped = out
        state.drop_cycles[k] += 1
        sets.drop_negatives(k, dropped)
        self._synth_memo.clear()
        self._precise_memo.clear()
        self.log.emit(event="max_synth", component=k,
                      candidate=dsl.print_expr(expr), dropped=len(dropped),
                      dropped_examples=[sexpr.dumps(format_example(self.problem, e))
                                        for e in dropped])
        return expr

    def _soundness_step(self, state: EngineState, report: EngineReport, k: int):
        expr = state.tuple.components[k]
        verdict, ex = self._check_sound_memo(expr, k)
        self.log.emit(event="check", check="soundness", component=k, verdict=verdict,
                      inputs=self._fmt_example(ex))
        if verdict == INDETERMINATE:
            raise _Abort("indeterminate", f"soundness check budget exhausted (component {k})")
        if verdict == SOUND:
            state.is_sound[k] = True
            return
        state.is_sound[k] = False
        state.is_precise[k] = False
        report.counterexamples.append(("soundness", k, ex))
        state.sets.add_positive(ex)
        self._precise_memo.clear()

    def _precision_step(self, state: EngineState, report: EngineReport, k: int):
        sets = state.sets
        verdict, ex, witness = self._check_precise_memo(state.tuple, k, sets)
        self.log.emit(event="check", check="precision", component=k, verdict=verdict,
                      inputs=self._fmt_example(ex),
                      witness=dsl.print_expr(witness) if witness is not None else None)
        if verdict == INDETERMINATE:
            raise _Abort("indeterminate", f"precision check budget exhausted (component {k})")
        if verdict == PRECISE:
            state.is_precise[k] = True
            return
        state.is_precise[k] = False
        state.is_sound[k] = False  # as the core algorithm writes it
        report.counterexamples.append(("precision", k, ex))
        self._triage_negative(state, k, ex)
        for j in range(self.problem.n):
            state.is_precise[j] = False
        state.changed = True
        self._precise_memo.clear()

    def _triage_negative(self, state: EngineState, k: int, ex: Example):
        """Promote validated positives, harden surely-negative examples,
        otherwise keep the negative soft and private to component k."""
        if check_pos(ex, self.problem):
            state.sets.add_positive(ex)
            self.log.emit(event="triage", component=k, outcome="promoted_positive")
            return
        hard = surely_negative(ex, self.problem)
        state.sets.add_negative(k, ex, hard=hard)
        self.log.emit(event="triage", component=k,
                      outcome="hard_negative" if hard else "soft_negative")

    # -- memoized checks ------------------------------------------------------------

    def _check_sound_memo(self, expr, k):
        key = (expr, k)
        got = self._sound_memo.get(key)
        if got is None:
            got = self._timed("check_soundness", check_soundness, expr, k,
                              self.problem, self.budget)
            self._sound_memo[key] = got
        return got

    def _check_precise_memo(self, tup, k, sets: ExampleSets):
        key = (tup.components, k, len(sets.eplus), tuple(sets.eminus[k]))
        got = self._precise_memo.get(key)
        if got is None:
            got = self._timed("check_precision", check_precision_1, tup, k,
                              sets.eplus, sets.eminus[k], self.grammars[k],
                              self.problem, self.budget)
            self._precise_memo[key] = got
        return got

    # -- invariants -------------------------------------------------------------------

    def _assert_invariants(self, state: EngineState, k: int):
        """Loop-head invariants: every other component is sound, and every
        raised precision flag is confirmed by a (memoized) fresh check."""
        for j in range(self.problem.n):
            if j == k or isinstance(state.tuple.components[j], dsl.DirectRef):
                continue
            verdict, _ = self._check_sound_memo(state.tuple.components[j], j)
            if verdict == UNSOUND:
                raise InvariantViolation(
                    f"invariant 1 violated: component {j} unsound at head of {k}'s loop")
        for i in range(self.problem.n):
            if not state.is_precise[i]:
                continue
            verdict, _, _ = self._check_precise_memo(state.tuple, i, state.sets)
            if verdict == IMPRECISE:
                raise InvariantViolation(
                    f"invariant 2 violated: component {i} flagged precise but is not")

    # -- final validation + feedback -----------------------------------------------------

    def _final_feedback(self, state: EngineState, report: EngineReport) -> bool:
        validation = self._timed("validate_final", validate_final, state.tuple,
                                 self.problem, self.grammars, self.budget)
        report.validation = validation
        self.log.emit(event="final_validation",
                      sound=[c.sound for c in validation.components],
                      precise=[c.precise for c in validation.components])
        if validation.all_sound and validation.all_precise:
            return True
        for k, comp in enumerate(validation.components):
            if not comp.sound and comp.soundness_witness is not None:
                state.sets.add_positive(comp.soundness_witness)
                state.is_sound[k] = False
            if not comp.precise and comp.precision_witness is not None:
                self._triage_negative(state, k, comp.precision_witness)
                state.is_sound[k] = False
                for j in range(self.problem.n):
                    state.is_precise[j] = False
        state.changed = True
        self._synth_memo.clear()
        self._precise_memo.clear()
        return False

    def _fmt_example(self, ex: Example | None):
        if ex is None:
            return None
        return sexpr.dumps(format_example(self.problem, ex))


def synthesize_reduced_transformer(problem: Problem, grammars, budget: CheckBudget,
                                   settings: EngineSettings,
                                   log: EventLog | None = None,
                                   bootstrap=None) -> EngineReport:
    return Engine(problem, grammars, budget, settings, log=log).run(bootstrap)


# --- final validation ---------------------------------------------------------------

def validate_final(tup: dsl.TransformerTuple, problem: Problem, grammars,
                   budget: CheckBudget,
                   golden: dsl.TransformerTuple | None = None) -> ValidationReport:
    """Independent re-verification on a fresh budget: exhaustive soundness,
    strict-witness 1-precision with empty example sets (the witness
    constraint then reduces to bounded soundness plus strict improvement),
    ideal-gap statistics, and an optional golden comparison."""
    comps = []
    for k in range(problem.n):
        verdict, wit = check_soundness(tup.components[k], k, problem, budget)
        sound = verdict == SOUND
        pverdict, pex, pwit = check_precision_1(tup, k, [], [], grammars[k], problem,
                                                budget, strict=True)
        comps.append(ComponentVerdict(sound, pverdict == PRECISE, wit, pex, pwit))
    report = ValidationReport(comps)
    report.grid_rows, report.product_gap_rows, per_comp = ideal_gap(tup, problem, budget)
    for k, c in enumerate(comps):
        c.ideal_gap_rows = per_comp[k]
    if golden is not None:
        _, mism = compare_tuples_gamma(tup, golden, problem, budget)
        report.golden_mismatch_rows = mism
    return report


def ideal_gap(tup: dsl.TransformerTuple, problem: Problem, budget: CheckBudget):
    """(grid rows, product-gamma gap rows, per-component gamma gap rows)
    of the tuple against the pointwise ideal."""
    grid = grid_for(problem, budget)
    out_b = float(problem.cfg.int_out_bound)
    if problem.product.kind == "int":
        from .verification import _round_vec, component_limits_vec
        t_lo, t_hi, tne = tuple_gamma_vec(problem, tup, grid)
        ideal_lo = np.full(grid.n_rows, -out_b, dtype=np.float32)
        ideal_hi = np.full(grid.n_rows, out_b, dtype=np.float32)
        per_comp = []
        for k, dom in enumerate(problem.out_domains):
            lo_k = _round_vec(grid.img_lo, dom, down=True)
            hi_k = _round_vec(grid.img_hi, dom, down=False)
            c_lo, c_hi, c_valid = component_limits_vec(problem, tup.components[k], k, grid)
            c_lo_cl = np.maximum(c_lo, -out_b)
            c_hi_cl = np.minimum(c_hi, out_b)
            gap = (~c_valid) | (c_lo_cl != np.maximum(lo_k, -out_b)) \
                | (c_hi_cl != np.minimum(hi_k, out_b))
            per_comp.append(int(np.count_nonzero(gap)))
            ideal_lo = np.maximum(ideal_lo, lo_k)
            ideal_hi = np.minimum(ideal_hi, hi_k)
        prod_gap = int(np.count_nonzero(tne & ((np.maximum(t_lo, ideal_lo) != ideal_lo)
                                               | (np.minimum(t_hi, ideal_hi) != ideal_hi)
                                               | (t_lo != ideal_lo) | (t_hi != ideal_hi))))
        return grid.n_rows, prod_gap, per_comp
    per_comp = [0] * problem.n
    prod_gap = 0
    for inputs, pos in grid.rows:
        env = problem.env_for(inputs, pos)
        outs = [dsl.eval_expr(tup.components[k], env, dsl.EvalContext(problem, k))
                for k in range(problem.n)]
        ideal = [problem.ideal_component(k, inputs, pos) for k in range(problem.n)]
        for k in range(problem.n):
            if outs[k] is dsl.INVALID or outs[k] != ideal[k]:
                per_comp[k] += 1
        if any(o is dsl.INVALID for o in outs):
            prod_gap += 1
            continue
        if _product_gamma_str(problem, outs) != _product_gamma_str(problem, ideal):
            prod_gap += 1
    return grid.n_rows, prod_gap, per_comp


def _product_gamma_str(problem: Problem, outs):
    """Canonical descriptor of the product output's concretization over the
    output universe: ('bools', set), ('set', frozenset) or ('classes',
    atoms) — explicit whenever any set-family component is finite."""
    from .domains import ClassDomain, StringSetDomain
    if problem.op.result_kind == "bool":
        return ("bools", frozenset(c for c in (False, True)
                                   if all(d.contains(v, c)
                                          for d, v in zip(problem.out_domains, outs))))
    explicit = None
    atoms = None
    for d, v in zip(problem.out_domains, outs):
        if isinstance(d, StringSetDomain):
            if v.tag == "bot":
                return ("set", frozenset())
            if v.tag == "set":
                items = frozenset(s for s in v.items if len(s) <= problem.cfg.max_out_len)
                explicit = items if explicit is None else explicit & items
        elif isinstance(d, ClassDomain):
            if d.is_bot(v):
                return ("set", frozenset())
            cur = frozenset((d.name, a) for a in v & d.realizable_atoms(problem.cfg))
            atoms = cur if atoms is None else atoms & cur
    if explicit is not None:
        if atoms is not None:
            class_doms = [d for d in problem.out_domains if isinstance(d, ClassDomain)]
            explicit = frozenset(s for s in explicit
                                 if all((d.name, d.classify(s)) in atoms
                                        for d in class_doms))
        return ("set", explicit)
    return ("classes", atoms if atoms is not None else frozenset())


def compare_tuples_gamma(tup_a: dsl.TransformerTuple, tup_b: dsl.TransformerTuple,
                         problem: Problem, budget: CheckBudget):
    """(rows, mismatching rows) of pointwise product-concretization equality
    over the whole grid."""
    grid = grid_for(problem, budget)
    if problem.product.kind == "int":
        a_lo, a_hi, a_ne = tuple_gamma_vec(problem, tup_a, grid)
        b_lo, b_hi, b_ne = tuple_gamma_vec(problem, tup_b, grid)
        same = (a_ne == b_ne) & (~a_ne | ((a_lo == b_lo) & (a_hi == b_hi)))
        return grid.n_rows, int(np.count_nonzero(~same))
    mism = 0
    for inputs, pos in grid.rows:
        env = problem.env_for(inputs, pos)
        outs_a = [dsl.eval_expr(tup_a.components[k], env, dsl.EvalContext(problem, k))
                  for k in range(problem.n)]
        outs_b = [dsl.eval_expr(tup_b.components[k], env, dsl.EvalContext(problem, k))
                  for k in range(problem.n)]
        if any(o is dsl.INVALID for o in outs_a + outs_b):
            mism += 1
            continue
        if _product_gamma_str(problem, outs_a) != _product_gamma_str(problem, outs_b):
            mism += 1
    return grid.n_rows, mism
