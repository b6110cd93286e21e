"""Reading and writing the line-oriented model format, and JSON reports.

Grammar::

    model     := header line*
    header    := "pmc" ident? "dimension" INT
    line      := "state" ident | rule | pvassrule
    rule      := "rule" ident "->" ident "delta" vec "zero" set "weight" INT label?
    pvassrule := "pvass" "rule" ident "->" ident "delta" vec "weight" INT label?
    vec       := "[" INT ("," INT)* "]"
    set       := "{" (INT ("," INT)*)? "}"
    label     := "label" STRING

``#`` starts a comment that runs to the end of the line.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Any

from .model import ModelError, Pmc, Rule, all_subsets

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#.*)
  | (?P<arrow>->)
  | (?P<int>-?\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_.']*)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<punct>[\[\]{},])
    """,
    re.VERBOSE,
)


class ParseError(ValueError):
    def __init__(self, line: int, column: int, message: str, expected: str | None = None):
        self.line = line
        self.column = column
        self.message = message
        self.expected = expected
        hint = f" (expected {expected})" if expected else ""
        super().__init__(f"line {line}, column {column}: {message}{hint}")


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(line: str, lineno: int) -> list[_Tok]:
    toks, pos = [], 0
    while pos < len(line):
        m = _TOKEN.match(line, pos)
        if not m:
            raise ParseError(lineno, pos + 1, f"unexpected character {line[pos]!r}")
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            toks.append(_Tok(kind, m.group(), lineno, pos + 1))
        pos = m.end()
    return toks


class _Cursor:
    def __init__(self, toks: list[_Tok], lineno: int, eol_col: int):
        self.toks, self.k, self.lineno, self.eol_col = toks, 0, lineno, eol_col

    def peek(self) -> _Tok | None:
        return self.toks[self.k] if self.k < len(self.toks) else None

    def fail(self, message: str, expected: str | None = None):
        t = self.peek()
        col = t.col if t else self.eol_col
        raise ParseError(self.lineno, col, message, expected)

    def take(self, kind: str, text: str | None = None) -> _Tok:
        t = self.peek()
        want = repr(text) if text else kind
        if t is None:
            self.fail("unexpected end of line", want)
        if t.kind != kind or (text is not None and t.text != text):
            self.fail(f"unexpected token {t.text!r}", want)
        self.k += 1
        return t

    def int_(self) -> tuple[int, _Tok]:
        t = self.take("int")
        return int(t.text), t

    def done(self):
        if self.peek() is not None:
            self.fail(f"trailing token {self.peek().text!r}", "end of line")


def _vec(c: _Cursor, d: int) -> tuple[int, ...]:
    c.take("punct", "[")
    out = []
    while True:
        v, t = c.int_()
        if v not in (-1, 0, 1):
            raise ParseError(t.line, t.col, f"delta entry {v} outside {{-1,0,1}}")
        out.append(v)
        if c.peek() is not None and c.peek().text == ",":
            c.take("punct", ",")
            continue
        break
    c.take("punct", "]")
    if len(out) != d:
        c.k -= 1
        c.fail(f"delta has {len(out)} entries but the dimension is {d}")
    return tuple(out)


def _set(c: _Cursor, d: int) -> frozenset[int]:
    c.take("punct", "{")
    out = set()
    if c.peek() is not None and c.peek().text == "}":
        c.take("punct", "}")
        return frozenset()
    while True:
        v, t = c.int_()
        if not 1 <= v <= d:
            raise ParseError(t.line, t.col, f"zero-test index {v} out of range 1..{d}")
        out.add(v)
        if c.peek() is not None and c.peek().text == ",":
            c.take("punct", ",")
            continue
        break
    c.take("punct", "}")
    return frozenset(out)


def _label(c: _Cursor) -> str | None:
    if c.peek() is None:
        return None
    c.take("ident", "label")
    t = c.take("string")
    return json.loads(t.text)


def _weight(c: _Cursor) -> int:
    c.take("ident", "weight")
    w, t = c.int_()
    if w <= 0:
        raise ParseError(t.line, t.col, f"weight {w} must be positive")
    return w


def parse_pmc(text: str) -> Pmc:
    header = None
    states: list[str] = []
    rules: list[Rule] = []
    state_lines: dict[str, int] = {}
    rule_pos: list[tuple[_Tok, _Tok]] = []
    n_plain = n_pvass = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        toks = _tokenize(raw, lineno)
        if not toks:
            continue
        c = _Cursor(toks, lineno, len(raw.rstrip()) + 1)
        if header is None:
            c.take("ident", "pmc")
            name = None
            if c.peek() is not None and c.peek().kind == "ident" and c.peek().text != "dimension":
                name = c.take("ident").text
            c.take("ident", "dimension")
            d, t = c.int_()
            if d < 1:
                raise ParseError(t.line, t.col, "dimension must be at least 1")
            c.done()
            header = (name, d)
            continue
        d = header[1]
        head = c.peek()
        if head.kind == "ident" and head.text == "state":
            c.take("ident")
            name_tok = c.take("ident")
            c.done()
            if name_tok.text in state_lines:
                raise ParseError(lineno, name_tok.col, f"state {name_tok.text!r} declared twice")
            state_lines[name_tok.text] = lineno
            states.append(name_tok.text)
        elif head.kind == "ident" and head.text in ("rule", "pvass"):
            pv = head.text == "pvass"
            if pv:
                c.take("ident", "pvass")
            c.take("ident", "rule")
            src = c.take("ident")
            c.take("arrow")
            dst = c.take("ident")
            c.take("ident", "delta")
            delta = _vec(c, d)
            if pv:
                w = _weight(c)
                lab = _label(c)
                c.done()
                new = [Rule(src.text, delta, z, w, dst.text, lab) for z in all_subsets(d)]
                n_pvass += 1
            else:
                c.take("ident", "zero")
                zt = _set(c, d)
                w = _weight(c)
                lab = _label(c)
                c.done()
                new = [Rule(src.text, delta, zt, w, dst.text, lab)]
                n_plain += 1
            rules.extend(new)
            rule_pos.extend([(src, dst)] * len(new))
        else:
            c.fail(f"unexpected token {head.text!r}", "'state', 'rule' or 'pvass'")
    if header is None:
        raise ParseError(1, 1, "missing header", "'pmc ... dimension N'")
    known = set(states)
    for (src, dst) in rule_pos:
        for t in (src, dst):
            if t.text not in known:
                raise ParseError(t.line, t.col, f"undeclared state {t.text!r}")
    kind = "pvass" if n_pvass and not n_plain else "general"
    try:
        return Pmc(header[1], tuple(states), tuple(rules), kind, name=header[0])
    except ModelError as e:
        raise ParseError(1, 1, str(e)) from e


def _fmt_rule_tail(r: Rule) -> str:
    lab = f" label {json.dumps(r.label, ensure_ascii=False)}" if r.label is not None else ""
    return f"weight {r.weight}{lab}"


def serialize_pmc(pmc: Pmc) -> str:
    lines = []
    name = f" {pmc.name}" if pmc.name else ""
    lines.append(f"pmc{name} dimension {pmc.dimension}")
    for q in pmc.states:
        lines.append(f"state {q}")
    if pmc.kind == "pvass":
        seen = set()
        for r in pmc.rules:
            key = (r.src, r.delta, r.dst, r.weight, r.label)
            if key in seen:
                continue
            seen.add(key)
            vec = ",".join(str(x) for x in r.delta)
            lines.append(f"pvass rule {r.src} -> {r.dst} delta [{vec}] {_fmt_rule_tail(r)}")
    else:
        for r in pmc.rules:
            vec = ",".join(str(x) for x in r.delta)
            zt = ",".join(str(k) for k in sorted(r.zero_test))
            lines.append(f"rule {r.src} -> {r.dst} delta [{vec}] zero {{{zt}}} {_fmt_rule_tail(r)}")
    return "\n".join(lines) + "\n"


def model_hash(pmc: Pmc) -> str:
    return "sha256:" + hashlib.sha256(serialize_pmc(pmc).encode()).hexdigest()


# --- JSON reports ----------------------------------------------------------------

REPORT_KEYS = ("query", "model", "initial", "result", "witnesses", "constants", "diagnostics", "version")


def _encode(x: Any) -> str:
    if x is None or isinstance(x, bool):
        return json.dumps(x)
    if isinstance(x, Fraction):
        return f'{{"num": {x.numerator}, "den": {x.denominator}}}'
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isinf(x):
            return '"inf"' if x > 0 else '"-inf"'
        if math.isnan(x):
            return '"nan"'
        s = format(x, ".17g")
        if not any(ch in s for ch in ".en"):
            s += ".0"
        return s
    if hasattr(x, "item") and not isinstance(x, (str, bytes)):  # numpy scalars
        return _encode(x.item())
    if isinstance(x, str):
        return json.dumps(x, ensure_ascii=False)
    if isinstance(x, dict):
        return "{" + ", ".join(f"{json.dumps(str(k), ensure_ascii=False)}: {_encode(v)}" for k, v in x.items()) + "}"
    if isinstance(x, (list, tuple, set, frozenset)):
        items = sorted(x, key=repr) if isinstance(x, (set, frozenset)) else x
        return "[" + ", ".join(_encode(v) for v in items) + "]"
    if hasattr(x, "tolist"):
        return _encode(x.tolist())
    return json.dumps(str(x), ensure_ascii=False)


def write_report(report: dict) -> str:
    """Serialise a report with the stable top-level key order."""
    missing = [k for k in REPORT_KEYS if k not in report]
    if missing:
        raise ValueError(f"report lacks keys {missing}")
    ordered = {k: report[k] for k in REPORT_KEYS}
    return _encode(ordered)


def read_fraction(obj) -> Fraction | Any:
    if isinstance(obj, dict) and set(obj) == {"num", "den"}:
        return Fraction(obj["num"], obj["den"])
    return obj
