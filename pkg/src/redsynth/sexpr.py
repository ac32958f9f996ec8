"""Tiny s-expression reader/printer used for transformer artifacts,
abstract-value literals, and bootstrap examples."""

from __future__ import annotations


class SexprError(Exception):
    pass


def tokenize(text: str):
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
        elif c in "()":
            yield c
            i += 1
        elif c == '"':
            j = i + 1
            buf = []
            while j < n and text[j] != '"':
                if text[j] == "\\" and j + 1 < n:
                    buf.append(text[j + 1])
                    j += 2
                else:
                    buf.append(text[j])
                    j += 1
            if j >= n:
                raise SexprError("unterminated string literal")
            yield ("str", "".join(buf))
            i = j + 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in '()"':
                j += 1
            yield text[i:j]
            i = j


def parse(text: str):
    """Parse one s-expression; atoms are str, quoted strings become
    ('str', value) pairs so "123" and the symbol 123 stay distinct."""
    toks = list(tokenize(text))
    node, rest = _read(toks, 0)
    if rest != len(toks):
        raise SexprError("trailing tokens after s-expression")
    return node


def parse_all(text: str) -> list:
    toks = list(tokenize(text))
    out, i = [], 0
    while i < len(toks):
        node, i = _read(toks, i)
        out.append(node)
    return out


def _read(toks, i):
    if i >= len(toks):
        raise SexprError("unexpected end of input")
    t = toks[i]
    if t == "(":
        items = []
        i += 1
        while True:
            if i >= len(toks):
                raise SexprError("unbalanced parentheses")
            if toks[i] == ")":
                return items, i + 1
            node, i = _read(toks, i)
            items.append(node)
    if t == ")":
        raise SexprError("unbalanced parentheses")
    return t, i + 1


def dumps(node) -> str:
    if isinstance(node, list):
        return "(" + " ".join(dumps(x) for x in node) + ")"
    if isinstance(node, tuple) and len(node) == 2 and node[0] == "str":
        escaped = node[1].replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    return str(node)


def qstr(s: str):
    return ("str", s)


def is_qstr(node) -> bool:
    return isinstance(node, tuple) and len(node) == 2 and node[0] == "str"
