"""Bounded finite concrete universes and the exact semantics of every
concrete operation a transformer can be synthesized for.

Integers range over [-B, B] on the input side and [-B_out, B_out] on the
output side; strings are drawn from a finite alphabet up to a length cap.
Every operation is total and pure on its universe, and closed into the
output universe (checked by tests, relied on everywhere else).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

# JavaScript keywords treated as special strings by the NOS classifier.
DEFAULT_SPECIAL_KEYWORDS = (
    "length", "concat", "join", "pop", "push", "shift", "sort", "splice",
    "reverse", "valueOf", "toString", "indexOf", "lastIndexOf", "constructor",
    "isPrototypeOf", "toLocaleString", "hasOwnProperty", "propertyIsEnumerable",
)

DEFAULT_ALPHABET = "aN123 -"

NUM_STR = "numstr"
SPECIAL_STR = "specialstr"
OTHER_STR = "otherstr"


class UsageError(Exception):
    """Caller broke an operation's contract (bad arity, bad argument kind)."""


@dataclass(frozen=True)
class UniverseConfig:
    int_bound: int = 16
    int_out_bound: int = 34
    alphabet: str = DEFAULT_ALPHABET
    max_len: int = 6
    max_out_len: int = 12
    ssk_k: int = 1
    special_keywords: tuple[str, ...] = DEFAULT_SPECIAL_KEYWORDS
    whitespace: str = " "

    def __post_init__(self):
        if self.int_bound < 0 or self.int_out_bound < 2 * self.int_bound + 2:
            raise ValueError("int_out_bound must be >= 2*int_bound + 2")
        if not self.alphabet:
            raise ValueError("alphabet must be non-empty")
        if len(set(self.alphabet)) != len(self.alphabet):
            raise ValueError("alphabet has duplicate characters")
        if self.max_out_len < 2 * self.max_len:
            raise ValueError("max_out_len must be >= 2*max_len")
        if self.ssk_k < 1:
            raise ValueError("ssk_k must be >= 1")

    def in_int_universe(self, x: int) -> bool:
        return -self.int_bound <= x <= self.int_bound

    def in_out_int_universe(self, x: int) -> bool:
        return -self.int_out_bound <= x <= self.int_out_bound

    def in_str_universe(self, s: str) -> bool:
        return len(s) <= self.max_len and all(c in self.alphabet for c in s)

    def in_out_str_universe(self, s: str) -> bool:
        return len(s) <= self.max_out_len and all(c in self.alphabet for c in s)

    def int_values(self) -> list[int]:
        return list(range(-self.int_bound, self.int_bound + 1))

    def str_values(self) -> list[str]:
        return _strings_up_to(self.alphabet, self.max_len)

    def fingerprint_fields(self) -> tuple:
        return (self.int_bound, self.int_out_bound, self.alphabet, self.max_len,
                self.max_out_len, self.ssk_k, self.special_keywords, self.whitespace)


@lru_cache(maxsize=32)
def _strings_up_to(alphabet: str, max_len: int) -> list[str]:
    # Length-then-lexicographic, lexicographic in configured alphabet order.
    out = [""]
    frontier = [""]
    for _ in range(max_len):
        frontier = [s + c for s in frontier for c in alphabet]
        out.extend(frontier)
    return out


def enumerate_universe(cfg: UniverseConfig, kind: str):
    """Deterministic stream of concrete values: 'int' ascending,
    'str' length-then-lexicographic."""
    if kind == "int":
        yield from cfg.int_values()
    elif kind == "str":
        yield from cfg.str_values()
    else:
        raise UsageError(f"unknown value kind {kind!r}")


def classify_numeric(s: str) -> str:
    """NumStr iff optional '-' followed by digits, or the literal NaN."""
    if s == "NaN":
        return NUM_STR
    body = s[1:] if s.startswith("-") else s
    if body and body.isdigit():
        return NUM_STR
    return OTHER_STR


def classify_special(s: str, keywords: tuple[str, ...] = DEFAULT_SPECIAL_KEYWORDS) -> str:
    if s in keywords:
        return SPECIAL_STR
    return classify_numeric(s)


# --- concrete operations ----------------------------------------------------

@dataclass(frozen=True)
class ConcreteOp:
    """An operation the engine can synthesize transformers for.

    ``arg_kinds`` lists the main argument kinds ('int' or 'str');
    ``aux_pos`` marks the trailing natural-number index argument of charAt.
    """
    name: str
    arg_kinds: tuple[str, ...]
    result_kind: str  # 'int' | 'str' | 'bool'
    aux_pos: bool = False

    @property
    def arity(self) -> int:
        return len(self.arg_kinds) + (1 if self.aux_pos else 0)


OPS: dict[str, ConcreteOp] = {
    "inc": ConcreteOp("inc", ("int",), "int"),
    "add": ConcreteOp("add", ("int", "int"), "int"),
    "sub": ConcreteOp("sub", ("int", "int"), "int"),
    "abs": ConcreteOp("abs", ("int",), "int"),
    "concat": ConcreteOp("concat", ("str", "str"), "str"),
    "trim": ConcreteOp("trim", ("str",), "str"),
    "toLower": ConcreteOp("toLower", ("str",), "str"),
    "toUpper": ConcreteOp("toUpper", ("str",), "str"),
    "contains": ConcreteOp("contains", ("str", "str"), "bool"),
    "charAt": ConcreteOp("charAt", ("str",), "str", aux_pos=True),
    # Fixture op for the constant-zero synthesis scenario; not part of the
    # user-facing corpus but handy for exercising MaxSynth.
    "zero": ConcreteOp("zero", ("int",), "int"),
}


def get_op(name: str) -> ConcreteOp:
    try:
        return OPS[name]
    except KeyError:
        raise UsageError(f"unknown operation {name!r}") from None


def int_op_eval(op: ConcreteOp, args: list[int]) -> int:
    if op.result_kind != "int" or any(k != "int" for k in op.arg_kinds):
        raise UsageError(f"{op.name} is not an integer operation")
    if len(args) != len(op.arg_kinds):
        raise UsageError(f"{op.name} expects {len(op.arg_kinds)} args, got {len(args)}")
    if op.name == "inc":
        return args[0] + 1
    if op.name == "add":
        return args[0] + args[1]
    if op.name == "sub":
        return args[0] - args[1]
    if op.name == "abs":
        return abs(args[0])
    if op.name == "zero":
        return 0
    raise UsageError(f"unhandled integer op {op.name!r}")


def str_op_eval(op: ConcreteOp, args: list, cfg: UniverseConfig):
    """Evaluate a string operation; total on the universe."""
    if op.name == "concat":
        return args[0] + args[1]
    if op.name == "trim":
        return args[0].strip(cfg.whitespace)
    if op.name == "toLower":
        return args[0].lower()
    if op.name == "toUpper":
        return args[0].upper()
    if op.name == "contains":
        return args[1] in args[0]
    if op.name == "charAt":
        s, pos = args
        if not isinstance(pos, int) or pos < 0:
            raise UsageError("charAt index must be a non-negative integer")
        return s[pos] if pos < len(s) else ""
    raise UsageError(f"unhandled string op {op.name!r}")


def op_eval(op: ConcreteOp, args: list, cfg: UniverseConfig):
    if op.arg_kinds[0] == "int" and not op.aux_pos:
        return int_op_eval(op, list(args))
    return str_op_eval(op, list(args), cfg)
