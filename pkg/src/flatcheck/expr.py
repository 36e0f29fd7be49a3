"""Symbolic scalar expressions over exact rationals.

Nodes: rational constants (unbounded integers), symbols, sums, products,
integer powers (quotients are negative powers), and unary sin/cos/tan/exp/
log/sqrt.  Every constructor canonicalizes: sums and products are flattened
and argument-sorted, rational constants folded, like terms and like powers
collected, x^0 -> 1, x^1 -> x, 0*e -> 0, e+0 -> e.  Values are immutable and
hashable, hence safe to share across threads.

Zero-testing is a semi-decision procedure: rational expressions (no
transcendental leaves) are decided exactly through a fraction-of-polynomials
normal form; expressions with trig/exp/log/sqrt leaves fall back to seeded
sampling in IEEE doubles, with the single rewrite sin^2+cos^2 = 1 applied
during the normal-form attempt.  |value| > 1e-9 at a sample is a NonZero
witness, all samples below 1e-12 is a (probabilistic) Zero, anything in the
gray zone is Unknown.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Optional, Union

__all__ = [
    "Expr",
    "ExprError",
    "ParseError",
    "UnknownSymbolError",
    "EvalDomainError",
    "ZeroVerdict",
    "Point",
    "FUNCTIONS",
    "NONZERO_TOL",
    "ZERO_TOL",
    "num",
    "sym",
    "add",
    "mul",
    "sub",
    "div",
    "neg",
    "pw",
    "fn",
    "parse_expr",
    "to_str",
    "differentiate",
    "substitute",
    "evaluate_float",
    "evaluate_exact",
    "free_symbols",
    "is_zero",
    "is_zero_cached",
    "compile_float_fn",
    "degree_in",
]

FUNCTIONS = ("cos", "exp", "log", "sin", "sqrt", "tan")

NONZERO_TOL = 1e-9
ZERO_TOL = 1e-12

_NUM, _SYM, _CALL, _POW, _MUL, _ADD = range(6)
_KIND_NAME = {_NUM: "num", _SYM: "sym", _CALL: "call", _POW: "pow", _MUL: "mul", _ADD: "add"}

Rat = Union[int, Fraction]

# A point binds symbol names to exact rational values; partial points (some
# symbols left free) are permitted.
Point = Mapping[str, Fraction]


class ExprError(ValueError):
    pass


class EvalDomainError(ArithmeticError):
    """Evaluation left the real domain (log of non-positive, sqrt of negative,
    division by zero, overflow)."""


class Expr:
    """Immutable canonical expression tree."""

    __slots__ = ("kind", "data", "args", "_hash")

    def __init__(self, kind: int, data, args: tuple):
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "args", args)
        object.__setattr__(self, "_hash", hash((kind, data, args)))

    def __setattr__(self, *a):  # pragma: no cover - guards immutability
        raise AttributeError("Expr is immutable")

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Expr):
            return NotImplemented
        return (
            self._hash == other._hash
            and self.kind == other.kind
            and self.data == other.data
            and self.args == other.args
        )

    # Arithmetic sugar so geometric code reads like the formulas it encodes.
    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __truediv__(self, other):
        return div(self, _coerce(other))

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __pow__(self, e: int):
        return pw(self, e)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Expr({to_str(self)!r})"

    def __str__(self):
        return to_str(self)

    @property
    def is_rational_const(self) -> bool:
        return self.kind == _NUM

    def sort_key(self):
        return _sort_key(self)


def _coerce(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, Fraction)):
        return num(v)
    raise TypeError(f"cannot coerce {type(v).__name__} into Expr")


_SORT_MEMO: dict = {}


def _sort_key(e: Expr):
    k = _SORT_MEMO.get(e)
    if k is not None:
        return k
    if e.kind == _NUM:
        k = (0, e.data)
    elif e.kind == _SYM:
        k = (1, e.data)
    elif e.kind == _CALL:
        k = (2, e.data, _sort_key(e.args[0]))
    elif e.kind == _POW:
        k = (3, _sort_key(e.args[0]), e.data)
    elif e.kind == _MUL:
        k = (4, tuple(_sort_key(a) for a in e.args))
    else:
        k = (5, tuple(_sort_key(a) for a in e.args))
    _SORT_MEMO[e] = k
    return k


_NUM_CACHE: dict = {}


def num(v: Rat) -> Expr:
    v = Fraction(v)
    e = _NUM_CACHE.get(v)
    if e is None:
        e = Expr(_NUM, v, ())
        if len(_NUM_CACHE) < 4096:
            _NUM_CACHE[v] = e
    return e


ZERO = num(0)
ONE = num(1)
MINUS_ONE = num(-1)

_SYM_CACHE: dict = {}


def sym(name: str) -> Expr:
    e = _SYM_CACHE.get(name)
    if e is None:
        e = Expr(_SYM, name, ())
        _SYM_CACHE[name] = e
    return e


def fn(name: str, arg) -> Expr:
    arg = _coerce(arg)
    if name not in FUNCTIONS:
        raise ExprError(f"unknown function {name!r}")
    if arg.kind == _NUM:
        v = arg.data
        if v == 0:
            folded = {"sin": ZERO, "tan": ZERO, "cos": ONE, "exp": ONE, "sqrt": ZERO}.get(name)
            if folded is not None:
                return folded
        if name == "log" and v == 1:
            return ZERO
        if name == "sqrt" and v >= 0:
            rn = _isqrt_exact(v.numerator)
            rd = _isqrt_exact(v.denominator)
            if rn is not None and rd is not None:
                return num(Fraction(rn, rd))
        if name == "sqrt" and v < 0:
            raise ExprError("sqrt of negative constant")
        if name == "log" and v <= 0:
            raise ExprError("log of non-positive constant")
    return Expr(_CALL, name, (arg,))


def _isqrt_exact(n: int) -> Optional[int]:
    r = math.isqrt(n)
    return r if r * r == n else None


def pw(base, exp: int) -> Expr:
    base = _coerce(base)
    if not isinstance(exp, int):
        raise ExprError("power exponent must be a Python int")
    if exp == 0:
        return ONE
    if exp == 1:
        return base
    if base.kind == _NUM:
        if base.data == 0 and exp < 0:
            raise ExprError("division by zero constant")
        return num(base.data**exp)
    if base.kind == _POW:
        return pw(base.args[0], base.data * exp)
    if base.kind == _MUL:
        return mul(*[pw(f, exp) for f in base.args])
    return Expr(_POW, exp, (base,))


def mul(*factors) -> Expr:
    coeff = Fraction(1)
    powers: dict = {}
    order: list = []

    def feed(f: Expr):
        nonlocal coeff
        if f.kind == _NUM:
            coeff *= f.data
        elif f.kind == _MUL:
            for g in f.args:
                feed(g)
        elif f.kind == _POW:
            _bump(f.args[0], f.data)
        else:
            _bump(f, 1)

    def _bump(base: Expr, e: int):
        if base in powers:
            powers[base] += e
        else:
            powers[base] = e
            order.append(base)

    for f in factors:
        feed(_coerce(f))
    if coeff == 0:
        return ZERO
    parts = []
    for base in order:
        e = powers[base]
        if e == 0:
            continue
        parts.append(pw(base, e) if e != 1 else base)
    parts.sort(key=_sort_key)
    if not parts:
        return num(coeff)
    if coeff != 1:
        parts.insert(0, num(coeff))
    if len(parts) == 1:
        return parts[0]
    return Expr(_MUL, None, tuple(parts))


def _split_coeff(t: Expr) -> tuple[Fraction, Optional[Expr]]:
    """Split a canonical term into (rational coefficient, rest-or-None)."""
    if t.kind == _NUM:
        return t.data, None
    if t.kind == _MUL and t.args[0].kind == _NUM:
        rest = t.args[1:]
        rest_e = rest[0] if len(rest) == 1 else Expr(_MUL, None, rest)
        return t.args[0].data, rest_e
    return Fraction(1), t


def add(*terms) -> Expr:
    const = Fraction(0)
    coeffs: dict = {}
    order: list = []

    def feed(t: Expr):
        nonlocal const
        if t.kind == _NUM:
            const += t.data
        elif t.kind == _ADD:
            for u in t.args:
                feed(u)
        else:
            c, rest = _split_coeff(t)
            if rest is None:
                const += c
            elif rest in coeffs:
                coeffs[rest] += c
            else:
                coeffs[rest] = c
                order.append(rest)

    for t in terms:
        feed(_coerce(t))
    parts = []
    for rest in order:
        c = coeffs[rest]
        if c == 0:
            continue
        parts.append(rest if c == 1 else mul(num(c), rest))
    if const != 0:
        parts.append(num(const))
    parts.sort(key=_sort_key)
    if not parts:
        return ZERO
    if len(parts) == 1:
        return parts[0]
    return Expr(_ADD, None, tuple(parts))


def sub(a, b) -> Expr:
    return add(_coerce(a), mul(MINUS_ONE, _coerce(b)))


def neg(a) -> Expr:
    return mul(MINUS_ONE, _coerce(a))


def div(a, b) -> Expr:
    return mul(_coerce(a), pw(_coerce(b), -1))


# ---------------------------------------------------------------------------
# Printing (re-parsable under the shared grammar)
# ---------------------------------------------------------------------------


def _pow_str(base: Expr, e: int) -> str:
    bs = to_str(base)
    if base.kind in (_ADD, _MUL) or (base.kind == _NUM and (base.data < 0 or base.data.denominator != 1)):
        bs = f"({bs})"
    return bs if e == 1 else f"{bs}^{e}"


def _factor_strs(t: Expr) -> tuple[Fraction, list[str], list[str]]:
    """Decompose a product into (coefficient, numerator items, denominator items)."""
    if t.kind == _MUL:
        factors = list(t.args)
    else:
        factors = [t]
    coeff = Fraction(1)
    top: list[str] = []
    bot: list[str] = []
    for f in factors:
        if f.kind == _NUM:
            coeff *= f.data
        elif f.kind == _POW and f.data < 0:
            bot.append(_pow_str(f.args[0], -f.data))
        elif f.kind == _POW:
            top.append(_pow_str(f.args[0], f.data))
        elif f.kind == _ADD:
            top.append(f"({to_str(f)})")
        else:
            top.append(to_str(f))
    return coeff, top, bot


def _term_str(t: Expr) -> tuple[int, str]:
    """Render a term; returns (sign, unsigned string).

    A leading '-' binds inside the grammar's base, so '-x^2' would reparse
    as (-x)^2; negative terms whose first factor carries an exponent get an
    explicit numeric head ('-1*x^2')."""
    coeff, top, bot = _factor_strs(t)
    sign = -1 if coeff < 0 else 1
    coeff = abs(coeff)
    if coeff.numerator != 1 or not top or (sign < 0 and "^" in top[0]):
        top.insert(0, str(coeff.numerator))
    if coeff.denominator != 1:
        bot.insert(0, str(coeff.denominator))
    s = "*".join(top)
    for b in bot:
        if "*" in b and not b.startswith("("):
            b = f"({b})"
        s += "/" + b
    return sign, s


def to_str(e: Expr) -> str:
    if e.kind == _NUM:
        v = e.data
        s = str(abs(v.numerator))
        if v.denominator != 1:
            s += f"/{v.denominator}"
        return "-" + s if v < 0 else s
    if e.kind == _SYM:
        return e.data
    if e.kind == _CALL:
        return f"{e.data}({to_str(e.args[0])})"
    if e.kind == _POW:
        if e.data < 0:
            return f"1/{_pow_str(e.args[0], -e.data)}"
        return _pow_str(e.args[0], e.data)
    if e.kind == _MUL:
        sign, s = _term_str(e)
        return ("-" + s) if sign < 0 else s
    # sum
    out = []
    for i, t in enumerate(e.args):
        if t.kind == _NUM:
            sign, s = (-1 if t.data < 0 else 1), to_str(num(abs(t.data)))
        else:
            sign, s = _term_str(t)
        if i == 0:
            out.append(("-" if sign < 0 else "") + s)
        else:
            out.append((" - " if sign < 0 else " + ") + s)
    return "".join(out)


# ---------------------------------------------------------------------------
# Parsing: recursive descent over the shared grammar
#   expr   := term (('+'|'-') term)*
#   term   := factor (('*'|'/') factor)*
#   factor := base ('^' integer)?
#   base   := number | symbol | func '(' expr ')' | '(' expr ')' | '-' base
#   number := integer ('/' integer)? | decimal
# ---------------------------------------------------------------------------


class ParseError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnknownSymbolError(ParseError):
    def __init__(self, name: str, offset: int):
        ParseError.__init__(self, f"unknown symbol {name!r}", offset)
        self.name = name


class _Parser:
    def __init__(self, text: str, symbols: Optional[Iterable[str]]):
        self.text = text
        self.pos = 0
        self.symbols = None if symbols is None else frozenset(symbols)

    def error(self, msg: str):
        raise ParseError(msg, self.pos)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos] in " \t":
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def take(self, ch: str):
        if self.peek() != ch:
            self.error(f"expected {ch!r}")
        self.pos += 1

    def parse(self) -> Expr:
        e = self.expr()
        self.skip_ws()
        if self.pos != len(self.text):
            self.error("unexpected trailing input")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while True:
            c = self.peek()
            if c == "+":
                self.pos += 1
                e = add(e, self.term())
            elif c == "-":
                self.pos += 1
                e = sub(e, self.term())
            else:
                return e

    def term(self) -> Expr:
        e = self.factor()
        while True:
            c = self.peek()
            if c == "*":
                self.pos += 1
                e = mul(e, self.factor())
            elif c == "/":
                self.pos += 1
                rhs = self.factor()
                if rhs == ZERO:
                    self.error("division by zero constant")
                e = div(e, rhs)
            else:
                return e

    def factor(self) -> Expr:
        b = self.base()
        if self.peek() == "^":
            self.pos += 1
            e = self.integer()
            if b == ZERO and e < 0:
                self.error("division by zero constant")
            return pw(b, e)
        return b

    def integer(self) -> int:
        self.skip_ws()
        start = self.pos
        if self.pos < len(self.text) and self.text[self.pos] in "+-":
            self.pos += 1
        digits = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self.pos += 1
        if self.pos == digits:
            self.error("expected integer")
        return int(self.text[start : self.pos])

    def base(self) -> Expr:
        c = self.peek()
        if c == "-":
            self.pos += 1
            return neg(self.base())
        if c == "(":
            self.pos += 1
            e = self.expr()
            self.take(")")
            return e
        if c.isdigit() or c == ".":
            return self.number()
        if c.isalpha() or c == "_":
            return self.name()
        self.error("expected a number, symbol, function call, or '('")

    def number(self) -> Expr:
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self.pos += 1
        if self.pos < len(self.text) and self.text[self.pos] == ".":
            self.pos += 1
            frac_start = self.pos
            while self.pos < len(self.text) and self.text[self.pos].isdigit():
                self.pos += 1
            if self.pos == frac_start and frac_start - 1 == start:
                self.error("malformed decimal")
            return num(Fraction(self.text[start : self.pos]))
        if self.pos == start:
            self.error("expected number")
        return num(int(self.text[start : self.pos]))

    def name(self) -> Expr:
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and (self.text[self.pos].isalnum() or self.text[self.pos] == "_"):
            self.pos += 1
        ident = self.text[start : self.pos]
        if ident in FUNCTIONS:
            self.take("(")
            arg = self.expr()
            self.take(")")
            return fn(ident, arg)
        if self.peek() == "(":
            raise ParseError(f"unknown function {ident!r}", start)
        if self.symbols is not None and ident not in self.symbols:
            raise UnknownSymbolError(ident, start)
        return sym(ident)


def parse_expr(text: str, symbols: Optional[Iterable[str]] = None) -> Expr:
    """Parse `text`; if `symbols` is given, every identifier must be in it."""
    return _Parser(text, symbols).parse()


# ---------------------------------------------------------------------------
# Calculus and evaluation
# ---------------------------------------------------------------------------


_DIFF_MEMO: dict = {}


def differentiate(e: Expr, var: str) -> Expr:
    if e.kind == _NUM:
        return ZERO
    if e.kind == _SYM:
        return ONE if e.data == var else ZERO
    if var not in free_symbols(e):
        return ZERO
    key = (e, var)
    got = _DIFF_MEMO.get(key)
    if got is None:
        got = _differentiate(e, var)
        if len(_DIFF_MEMO) > 200_000:
            _DIFF_MEMO.clear()
        _DIFF_MEMO[key] = got
    return got


def _differentiate(e: Expr, var: str) -> Expr:
    if e.kind == _ADD:
        return add(*[differentiate(a, var) for a in e.args])
    if e.kind == _MUL:
        terms = []
        args = e.args
        for i, a in enumerate(args):
            da = differentiate(a, var)
            if da == ZERO:
                continue
            terms.append(mul(*(args[:i] + (da,) + args[i + 1 :])))
        return add(*terms)
    if e.kind == _POW:
        b = e.args[0]
        db = differentiate(b, var)
        if db == ZERO:
            return ZERO
        return mul(num(e.data), pw(b, e.data - 1), db)
    # call
    u = e.args[0]
    du = differentiate(u, var)
    if du == ZERO:
        return ZERO
    name = e.data
    if name == "sin":
        outer = fn("cos", u)
    elif name == "cos":
        outer = neg(fn("sin", u))
    elif name == "tan":
        outer = add(ONE, pw(fn("tan", u), 2))
    elif name == "exp":
        outer = e
    elif name == "log":
        outer = pw(u, -1)
    else:  # sqrt
        outer = div(ONE, mul(num(2), e))
    return mul(outer, du)


def substitute(e: Expr, bindings: Mapping[str, Union[Expr, Rat]]) -> Expr:
    if not bindings:
        return e
    table = {k: _coerce(v) for k, v in bindings.items()}

    memo: dict = {}

    def go(x: Expr) -> Expr:
        if x.kind == _NUM:
            return x
        if x.kind == _SYM:
            return table.get(x.data, x)
        got = memo.get(x)
        if got is not None:
            return got
        if x.kind == _CALL:
            out = fn(x.data, go(x.args[0]))
        elif x.kind == _POW:
            out = pw(go(x.args[0]), x.data)
        elif x.kind == _MUL:
            out = mul(*[go(a) for a in x.args])
        else:
            out = add(*[go(a) for a in x.args])
        memo[x] = out
        return out

    return go(e)


_FREE_MEMO: dict = {}
_EMPTY_FS = frozenset()


def free_symbols(e: Expr) -> frozenset:
    if e.kind == _NUM:
        return _EMPTY_FS
    if e.kind == _SYM:
        return frozenset((e.data,))
    got = _FREE_MEMO.get(e)
    if got is None:
        got = frozenset().union(*[free_symbols(a) for a in e.args])
        if len(_FREE_MEMO) > 400_000:
            _FREE_MEMO.clear()
        _FREE_MEMO[e] = got
    return got


def evaluate_float(e: Expr, point: Mapping[str, float]) -> float:
    if e.kind == _NUM:
        return float(e.data)
    if e.kind == _SYM:
        try:
            return float(point[e.data])
        except KeyError:
            raise EvalDomainError(f"unbound symbol {e.data!r}") from None
    if e.kind == _CALL:
        v = evaluate_float(e.args[0], point)
        try:
            if e.data == "log":
                if v <= 0.0:
                    raise EvalDomainError("log of non-positive value")
                return math.log(v)
            if e.data == "sqrt":
                if v < 0.0:
                    raise EvalDomainError("sqrt of negative value")
                return math.sqrt(v)
            return getattr(math, e.data)(v)
        except OverflowError:
            raise EvalDomainError("overflow") from None
    if e.kind == _POW:
        v = evaluate_float(e.args[0], point)
        if e.data < 0 and v == 0.0:
            raise EvalDomainError("division by zero")
        try:
            return v**e.data
        except (OverflowError, ZeroDivisionError):
            raise EvalDomainError("overflow") from None
    if e.kind == _MUL:
        out = 1.0
        for a in e.args:
            out *= evaluate_float(a, point)
        return out
    out = 0.0
    for a in e.args:
        out += evaluate_float(a, point)
    return out


def evaluate_exact(e: Expr, point: Point) -> Fraction:
    """Exact rational evaluation; raises ExprError on transcendental leaves."""
    if e.kind == _NUM:
        return e.data
    if e.kind == _SYM:
        try:
            return Fraction(point[e.data])
        except KeyError:
            raise ExprError(f"unbound symbol {e.data!r}") from None
    if e.kind == _CALL:
        raise ExprError(f"cannot evaluate {e.data} exactly")
    if e.kind == _POW:
        v = evaluate_exact(e.args[0], point)
        if e.data < 0 and v == 0:
            raise EvalDomainError("division by zero")
        return v**e.data
    if e.kind == _MUL:
        out = Fraction(1)
        for a in e.args:
            out *= evaluate_exact(a, point)
        return out
    out = Fraction(0)
    for a in e.args:
        out += evaluate_exact(a, point)
    return out


# ---------------------------------------------------------------------------
# Polynomial normal form over atoms (symbols + transcendental subterms)
# ---------------------------------------------------------------------------

# A polynomial is a dict {exponent tuple: Fraction}; the exponent tuple is
# indexed by an atom table fixed per conversion.

_PolyT = dict


def _poly_add(a: _PolyT, b: _PolyT) -> _PolyT:
    out = dict(a)
    for m, c in b.items():
        nc = out.get(m, 0) + c
        if nc:
            out[m] = nc
        else:
            out.pop(m, None)
    return out


def _poly_mul(a: _PolyT, b: _PolyT) -> _PolyT:
    out: _PolyT = {}
    if len(a) > len(b):
        a, b = b, a
    for ma, ca in a.items():
        for mb, cb in b.items():
            m = tuple(x + y for x, y in zip(ma, mb))
            nc = out.get(m, 0) + ca * cb
            if nc:
                out[m] = nc
            else:
                out.pop(m, None)
    return out


def _poly_pow(a: _PolyT, e: int) -> _PolyT:
    out = None
    base = a
    while e:
        if e & 1:
            out = base if out is None else _poly_mul(out, base)
        e >>= 1
        if e:
            base = _poly_mul(base, base)
    return out if out is not None else {}


def _poly_scale(a: _PolyT, c: Fraction) -> _PolyT:
    if c == 0:
        return {}
    return {m: v * c for m, v in a.items()}


_ATOMS_MEMO: dict = {}


def _atoms_of(e: Expr) -> frozenset:
    if e.kind in (_SYM, _CALL):
        return frozenset((e,))
    if e.kind == _NUM:
        return _EMPTY_FS
    got = _ATOMS_MEMO.get(e)
    if got is None:
        got = frozenset().union(*[_atoms_of(a) for a in e.args])
        if len(_ATOMS_MEMO) > 400_000:
            _ATOMS_MEMO.clear()
        _ATOMS_MEMO[e] = got
    return got


def _collect_atoms(e: Expr, acc: set):
    acc |= _atoms_of(e)


class AtomTable:
    """Deterministically ordered table of the atoms (symbols and
    transcendental subterms) appearing in an expression."""

    def __init__(self, exprs: Iterable[Expr]):
        acc: set = set()
        for e in exprs:
            _collect_atoms(e, acc)
        self.atoms: list[Expr] = sorted(acc, key=_sort_key)
        self.index = {a: i for i, a in enumerate(self.atoms)}
        self.n = len(self.atoms)
        self._zero_mono = (0,) * self.n

    def const(self, c: Rat) -> _PolyT:
        c = Fraction(c)
        return {self._zero_mono: c} if c else {}

    def var(self, a: Expr) -> _PolyT:
        m = [0] * self.n
        m[self.index[a]] = 1
        return {tuple(m): Fraction(1)}


def _remap_poly(p: _PolyT, src_atoms: tuple, dst_index: Mapping, dst_len: int) -> _PolyT:
    if not src_atoms:
        zero = (0,) * dst_len
        return {zero: c for _, c in p.items()} if p else {}
    positions = [dst_index[a] for a in src_atoms]
    out = {}
    for m, c in p.items():
        t = [0] * dst_len
        for i, e in enumerate(m):
            if e:
                t[positions[i]] = e
        out[tuple(t)] = c
    return out


_CONV_MEMO: dict = {}


def _convert_canonical(e: Expr) -> tuple[tuple, _PolyT, _PolyT]:
    """(atoms, num, den) of e over its own deterministically sorted atoms;
    memoized globally so shared subtrees are expanded once."""
    got = _CONV_MEMO.get(e)
    if got is not None:
        return got
    F1 = Fraction(1)
    if e.kind == _NUM:
        res = ((), ({(): e.data} if e.data else {}), {(): F1})
    elif e.kind in (_SYM, _CALL):
        res = ((e,), {(1,): F1}, {(0,): F1})
    elif e.kind == _POW:
        atoms, n, d = _convert_canonical(e.args[0])
        if e.data < 0:
            res = (atoms, _poly_pow(d, -e.data), _poly_pow(n, -e.data))
        else:
            res = (atoms, _poly_pow(n, e.data), _poly_pow(d, e.data))
    else:
        parts = [_convert_canonical(a) for a in e.args]
        merged: list = sorted({a for at, _, _ in parts for a in at}, key=_sort_key)
        index = {a: i for i, a in enumerate(merged)}
        w = len(merged)
        ren = [
            (_remap_poly(n, at, index, w), _remap_poly(d, at, index, w))
            for at, n, d in parts
        ]
        if e.kind == _MUL:
            n, d = ren[0]
            for na, da in ren[1:]:
                n = _poly_mul(n, na)
                d = _poly_mul(d, da)
        else:
            n, d = ren[0]
            for na, da in ren[1:]:
                n = _poly_add(_poly_mul(n, da), _poly_mul(na, d))
                d = _poly_mul(d, da)
        res = (tuple(merged), n, d)
    if len(_CONV_MEMO) > 100_000:
        _CONV_MEMO.clear()
    _CONV_MEMO[e] = res
    return res


def to_fraction_of_polys(e: Expr, at) -> tuple[_PolyT, _PolyT]:
    """Rewrite e as num/den with num, den expanded polynomials in the atoms
    of `at` (which must cover e's atoms)."""
    atoms, n, d = _convert_canonical(e)
    w = len(at.atoms)
    return _remap_poly(n, atoms, at.index, w), _remap_poly(d, atoms, at.index, w)


def _pythagorean_pairs(at: AtomTable) -> list[tuple[int, int]]:
    """Indices (sin_i, cos_i) of sin/cos atoms sharing the same argument."""
    sin_by_arg = {}
    cos_by_arg = {}
    for i, a in enumerate(at.atoms):
        if a.kind == _CALL and a.data == "sin":
            sin_by_arg[a.args[0]] = i
        elif a.kind == _CALL and a.data == "cos":
            cos_by_arg[a.args[0]] = i
    return [(si, cos_by_arg[arg]) for arg, si in sin_by_arg.items() if arg in cos_by_arg]


def _reduce_pythagorean(p: _PolyT, pairs: list[tuple[int, int]]) -> _PolyT:
    """Reduce sin-exponents below 2 using sin^2 = 1 - cos^2, per angle."""
    for si, ci in pairs:
        changed = True
        while changed:
            changed = False
            for m in list(p.keys()):
                if m[si] >= 2:
                    c = p.pop(m)
                    lower = list(m)
                    lower[si] -= 2
                    m_low = tuple(lower)
                    lower[ci] += 2
                    m_swap = tuple(lower)
                    nc = p.get(m_low, 0) + c
                    if nc:
                        p[m_low] = nc
                    else:
                        p.pop(m_low, None)
                    nc = p.get(m_swap, 0) - c
                    if nc:
                        p[m_swap] = nc
                    else:
                        p.pop(m_swap, None)
                    changed = True
    return p


def poly_to_expr(p: _PolyT, at: AtomTable) -> Expr:
    terms = []
    for m, c in p.items():
        fs = [num(c)]
        for i, e in enumerate(m):
            if e:
                fs.append(pw(at.atoms[i], e))
        terms.append(mul(*fs))
    return add(*terms)


# ---------------------------------------------------------------------------
# Zero-testing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ZeroVerdict:
    """Outcome of a zero test: 'zero', 'nonzero', or 'unknown'.

    `mode` records how it was decided ('structural', 'normal-form' for exact
    cancellation, 'exact-eval' for rational witness search, 'sampled').
    NonZero always carries a witness point whose |value| exceeds 1e-9.
    """

    status: str
    mode: str
    witness: Optional[dict] = None
    value: Optional[float] = None
    samples: tuple = ()
    note: str = ""

    @property
    def is_zero(self) -> bool:
        return self.status == "zero"

    @property
    def is_nonzero(self) -> bool:
        return self.status == "nonzero"

    @property
    def is_unknown(self) -> bool:
        return self.status == "unknown"


def _draw_point(rng: random.Random, names: list[str]) -> dict:
    pt = {}
    for s in names:
        n = rng.randint(-8, 8)
        if n == 0:
            n = rng.choice((-9, 9, 1))
        pt[s] = Fraction(n, rng.randint(1, 6))
    return pt


def is_zero(e: Expr, budget: int = 8, seed: int = 0) -> ZeroVerdict:
    """Semi-decide whether e vanishes identically (see module docstring)."""
    if budget < 1:
        raise ExprError("budget must be >= 1")
    if e.kind == _NUM:
        if e.data == 0:
            return ZeroVerdict("zero", "structural")
        v = float(e.data)
        if abs(v) > NONZERO_TOL:
            return ZeroVerdict("nonzero", "structural", witness={}, value=v)
        return ZeroVerdict("nonzero", "exact-eval", witness={}, value=v,
                           note="nonzero rational constant below display tolerance")

    at = AtomTable([e])
    nump, denp = to_fraction_of_polys(e, at)
    if not denp:
        return ZeroVerdict("unknown", "normal-form", note="identically zero denominator")
    nump = _reduce_pythagorean(dict(nump), _pythagorean_pairs(at))
    if not nump:
        return ZeroVerdict("zero", "normal-form")

    transcendental = any(a.kind == _CALL for a in at.atoms)
    names = sorted(free_symbols(e))
    rng = random.Random((seed, budget, 0x5EED))

    if not transcendental:
        # Nonzero as a polynomial identity over Q => nonzero rational function.
        # Find a witness point with |value| above the reporting tolerance.
        for _ in range(64 * budget):
            pt = _draw_point(rng, names)
            try:
                dv = evaluate_exact(poly_to_expr(denp, at), pt)
                if dv == 0:
                    continue
                nv = evaluate_exact(poly_to_expr(nump, at), pt)
            except EvalDomainError:
                continue
            if nv == 0:
                continue
            v = float(nv / dv)
            if abs(v) > NONZERO_TOL:
                return ZeroVerdict("nonzero", "exact-eval", witness=pt, value=v)
        return ZeroVerdict("unknown", "exact-eval",
                           note="nonzero polynomial but no witness above tolerance found")

    samples = []
    attempts = 0
    while len(samples) < budget and attempts < 10 * budget:
        attempts += 1
        pt = _draw_point(rng, names)
        try:
            v = evaluate_float(e, {k: float(x) for k, x in pt.items()})
        except EvalDomainError:
            continue
        if not math.isfinite(v):
            continue
        samples.append((pt, v))
        if abs(v) > NONZERO_TOL:
            return ZeroVerdict("nonzero", "sampled", witness=pt, value=v, samples=tuple(samples))
    if len(samples) < budget:
        return ZeroVerdict("unknown", "sampled", samples=tuple(samples),
                           note=f"domain errors exhausted redraws ({attempts} attempts)")
    if all(abs(v) < ZERO_TOL for _, v in samples):
        return ZeroVerdict("zero", "sampled", samples=tuple(samples))
    return ZeroVerdict("unknown", "sampled", samples=tuple(samples),
                       note="samples fall in the gray zone between 1e-12 and 1e-9")


_IZ_MEMO: dict = {}


def is_zero_cached(e: Expr, budget: int = 8, seed: int = 0) -> ZeroVerdict:
    key = (e, budget, seed)
    v = _IZ_MEMO.get(key)
    if v is None:
        v = is_zero(e, budget, seed)
        if len(_IZ_MEMO) > 200_000:
            _IZ_MEMO.clear()
        _IZ_MEMO[key] = v
    return v


# ---------------------------------------------------------------------------
# Compilation to fast float evaluators, structural degree
# ---------------------------------------------------------------------------


def _py_src(e: Expr, ix: Mapping[str, int]) -> str:
    if e.kind == _NUM:
        if e.data.denominator == 1:
            return f"({e.data.numerator})" if e.data >= 0 else f"({e.data.numerator})"
        return f"({e.data.numerator}/{e.data.denominator})"
    if e.kind == _SYM:
        return f"s[{ix[e.data]}]"
    if e.kind == _CALL:
        return f"_m.{e.data}({_py_src(e.args[0], ix)})"
    if e.kind == _POW:
        return f"({_py_src(e.args[0], ix)})**({e.data})"
    if e.kind == _MUL:
        return "(" + "*".join(_py_src(a, ix) for a in e.args) + ")"
    return "(" + "+".join(_py_src(a, ix) for a in e.args) + ")"


def compile_float_fn(e: Expr, var_order: list[str]) -> Callable:
    """Compile to a float evaluator f(values_list) following var_order."""
    ix = {s: i for i, s in enumerate(var_order)}
    missing = free_symbols(e) - set(var_order)
    if missing:
        raise ExprError(f"unbound symbols in compiled expression: {sorted(missing)}")
    src = f"lambda s: {_py_src(e, ix)}"
    return eval(src, {"_m": math})  # noqa: S307 - source generated from our own AST


def degree_in(e: Expr, names: Iterable[str]) -> int:
    """Total structural degree of e in the given symbols (-1 for absent);
    exact for polynomial dependence, raises if e is non-polynomial in them."""
    names = frozenset(names)

    def go(x: Expr) -> int:
        if x.kind == _NUM:
            return 0
        if x.kind == _SYM:
            return 1 if x.data in names else 0
        if x.kind == _CALL:
            if free_symbols(x) & names:
                raise ExprError("non-polynomial dependence")
            return 0
        if x.kind == _POW:
            d = go(x.args[0])
            if d == 0:
                return 0
            if x.data < 0:
                raise ExprError("non-polynomial dependence")
            return d * x.data
        if x.kind == _MUL:
            return sum(go(a) for a in x.args)
        return max(go(a) for a in x.args)

    return go(e)
