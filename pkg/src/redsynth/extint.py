"""Extended-integer arithmetic: integers plus -inf/+inf, with an explicit
indeterminate for inf - inf.

Scalar semantics here must mirror IEEE float behaviour so that the
numpy-vectorized evaluator and this module never disagree: inf + 1 = inf,
inf - inf = indeterminate (nan), and min/max absorb the indeterminate.
"""

from __future__ import annotations

import math

INF = math.inf
NINF = -math.inf
NAN = math.nan

Ext = float | int


def is_nan(x: Ext) -> bool:
    return x != x


def is_finite(x: Ext) -> bool:
    return not is_nan(x) and x != INF and x != NINF


def eneg(x: Ext) -> Ext:
    return NAN if is_nan(x) else -x


def eadd(a: Ext, b: Ext) -> Ext:
    if is_nan(a) or is_nan(b):
        return NAN
    if a in (INF, NINF) or b in (INF, NINF):
        return float(a) + float(b)  # inf + -inf -> nan, matching IEEE
    return a + b


def esub(a: Ext, b: Ext) -> Ext:
    return eadd(a, eneg(b))


def emin(a: Ext, b: Ext) -> Ext:
    if is_nan(a) or is_nan(b):
        return NAN
    return a if a <= b else b


def emax(a: Ext, b: Ext) -> Ext:
    if is_nan(a) or is_nan(b):
        return NAN
    return a if a >= b else b


def is_odd(x: Ext) -> bool:
    return is_finite(x) and int(x) % 2 != 0


def is_even(x: Ext) -> bool:
    return is_finite(x) and int(x) % 2 == 0


def fmt(x: Ext) -> str:
    if is_nan(x):
        return "nan"
    if x == INF:
        return "+inf"
    if x == NINF:
        return "-inf"
    return str(int(x))


def parse(tok: str) -> Ext:
    if tok in ("+inf", "inf", "+oo"):
        return INF
    if tok in ("-inf", "-oo"):
        return NINF
    return int(tok)
