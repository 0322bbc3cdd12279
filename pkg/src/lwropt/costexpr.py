"""A tiny expression language for cost functions and velocity laws.

Grammar (one free variable, ``t`` or ``rho``, fixed by the caller)::

    sum     := product (('+' | '-') product)*
    product := power (('*' | '/') power)*
    power   := unary (('^' | '**') power)?
    unary   := '-' unary | atom
    atom    := NUMBER | VAR | '(' sum ')' | FUNC '(' sum (',' sum)? ')'
    FUNC    := exp | log | pow

Unary minus binds tighter than ``^``, so ``-t^2`` is ``(-t)^2``.
Expressions evaluate elementwise on numpy arrays.
"""
from dataclasses import dataclass, field
import re

import numpy as np


class ExprError(ValueError):
    pass


class ParseError(ExprError):
    def __init__(self, message, offset, expected=()):
        self.offset = offset
        self.expected = tuple(sorted(expected))
        detail = f" (expected one of: {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"{message} at byte {offset}{detail}")


class EvalError(ExprError):
    def __init__(self, message, span=None):
        self.span = span
        where = f" at bytes {span[0]}..{span[1]}" if span else ""
        super().__init__(f"{message}{where}")


# -- AST ---------------------------------------------------------------------
# Spans are carried for error reporting but excluded from equality.

@dataclass(frozen=True)
class Num:
    value: float
    span: tuple = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Var:
    name: str
    span: tuple = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Neg:
    arg: object
    span: tuple = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: object
    right: object
    span: tuple = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Pow:
    base: object
    exponent: object
    span: tuple = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Call:
    func: str  # exp or log
    arg: object
    span: tuple = field(default=None, compare=False, repr=False)


def Add(a, b):
    return BinOp("+", a, b)


def Sub(a, b):
    return BinOp("-", a, b)


def Mul(a, b):
    return BinOp("*", a, b)


def Div(a, b):
    return BinOp("/", a, b)


def Exp(a):
    return Call("exp", a)


def Log(a):
    return Call("log", a)


# -- lexer / parser ----------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\*\*|[-+*/^(),])
""", re.VERBOSE)

FUNCS = {"exp": 1, "log": 1, "pow": 2}


def _tokenize(src):
    data = src.encode("utf-8")
    text = src
    tokens = []
    pos = 0
    # byte offsets: track via prefix encoding
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}",
                             len(text[:pos].encode("utf-8")),
                             ("number", "variable", "function", "operator"))
        kind = m.lastgroup
        if kind != "ws":
            start = len(text[:m.start()].encode("utf-8"))
            end = len(text[:m.end()].encode("utf-8"))
            tokens.append((kind, m.group(), start, end))
        pos = m.end()
    tokens.append(("eof", "", len(data), len(data)))
    return tokens


class _Parser:
    def __init__(self, src, variables):
        self.toks = _tokenize(src)
        self.i = 0
        self.variables = variables

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        tok = self.peek()
        if tok[1] != value or tok[0] == "eof":
            raise ParseError(f"unexpected {tok[1] or 'end of input'!r}", tok[2], (repr(value),))
        return self.take()

    def parse(self):
        node = self.sum()
        tok = self.peek()
        if tok[0] != "eof":
            raise ParseError(f"unexpected {tok[1]!r}", tok[2],
                             ("'+'", "'-'", "'*'", "'/'", "'^'", "end of input"))
        return node

    def sum(self):
        node = self.product()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.product()
            node = BinOp(op, node, rhs, span=(node.span[0], rhs.span[1]))
        return node

    def product(self):
        node = self.power()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.power()
            node = BinOp(op, node, rhs, span=(node.span[0], rhs.span[1]))
        return node

    def power(self):
        base = self.unary()
        if self.peek()[1] in ("^", "**"):
            self.take()
            exponent = self.power()
            return Pow(base, exponent, span=(base.span[0], exponent.span[1]))
        return base

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "-":
            self.take()
            arg = self.unary()
            return Neg(arg, span=(tok[2], arg.span[1]))
        return self.atom()

    def atom(self):
        tok = self.take()
        kind, text, start, end = tok
        if kind == "num":
            return Num(float(text), span=(start, end))
        if kind == "name":
            if text in FUNCS:
                self.expect("(")
                args = [self.sum()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.sum())
                close = self.expect(")")
                if len(args) != FUNCS[text]:
                    raise ParseError(f"{text} takes {FUNCS[text]} argument(s)", start)
                span = (start, close[3])
                if text == "pow":
                    return Pow(args[0], args[1], span=span)
                return Call(text, args[0], span=span)
            if text in self.variables:
                return Var(text, span=(start, end))
            raise ParseError(f"unknown identifier {text!r}", start,
                             tuple(self.variables) + tuple(FUNCS))
        if kind == "op" and text == "(":
            node = self.sum()
            close = self.expect(")")
            # keep the inner node; spans only matter for diagnostics
            return _respan(node, (start, close[3]))
        expected = ("number", "variable", "function", "'('", "'-'")
        raise ParseError(f"unexpected {text or 'end of input'!r}", start, expected)


def _respan(node, span):
    return type(node)(*[getattr(node, f) for f in node.__dataclass_fields__ if f != "span"], span=span)


def parse(src, variables=("t",)):
    """Parse ``src`` into an AST over the given variable name(s)."""
    if isinstance(variables, str):
        variables = (variables,)
    return _Parser(src, tuple(variables)).parse()


# -- evaluation --------------------------------------------------------------

def evaluate(e, x):
    """Evaluate ``e`` at ``x`` (scalar or array) with IEEE double arithmetic."""
    arr = np.asarray(x, dtype=float)
    out = _eval(e, arr)
    out = np.broadcast_to(out, arr.shape) * 1.0 if np.ndim(out) < arr.ndim else out
    return float(out) if arr.ndim == 0 else out


# `eval` is the name used throughout the docs; keep both spellings.
eval = evaluate


def _eval(e, x):
    if isinstance(e, Num):
        return np.float64(e.value)
    if isinstance(e, Var):
        return x
    if isinstance(e, Neg):
        return -_eval(e.arg, x)
    if isinstance(e, BinOp):
        a = _eval(e.left, x)
        b = _eval(e.right, x)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if np.any(np.asarray(b) == 0.0):
            raise EvalError("division by zero", e.span)
        return a / b
    if isinstance(e, Pow):
        a = _eval(e.base, x)
        b = _eval(e.exponent, x)
        with np.errstate(all="ignore"):
            out = np.power(a, b)
        if np.any(np.isnan(out) & ~np.isnan(a) & ~np.isnan(b)):
            raise EvalError("pow of a negative base with a fractional exponent", e.span)
        if np.any(np.isinf(out) & np.isfinite(a) & np.isfinite(b) & (np.asarray(a) == 0.0)):
            raise EvalError("pow of zero with a negative exponent", e.span)
        return out
    if isinstance(e, Call):
        a = _eval(e.arg, x)
        if e.func == "exp":
            with np.errstate(over="ignore"):
                return np.exp(a)
        if np.any(np.asarray(a) <= 0.0):
            raise EvalError("log of a non-positive value", e.span)
        return np.log(a)
    raise TypeError(f"not an expression node: {e!r}")


# -- symbolic derivative -----------------------------------------------------

def _is_num(e, value=None):
    return isinstance(e, Num) and (value is None or e.value == value)


def _add(a, b):
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    if _is_num(a) and _is_num(b):
        return Num(a.value + b.value)
    return BinOp("+", a, b)


def _sub(a, b):
    if _is_num(b, 0.0):
        return a
    if _is_num(a, 0.0):
        return _neg(b)
    if _is_num(a) and _is_num(b) and a.value >= b.value:
        return Num(a.value - b.value)
    return BinOp("-", a, b)


def _neg(a):
    if _is_num(a, 0.0):
        return a
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _mul(a, b):
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return Num(0.0)
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    if _is_num(a) and _is_num(b):
        return Num(a.value * b.value)
    return BinOp("*", a, b)


def _div(a, b):
    if _is_num(a, 0.0):
        return Num(0.0)
    if _is_num(b, 1.0):
        return a
    return BinOp("/", a, b)


def _depends(e):
    if isinstance(e, Var):
        return True
    if isinstance(e, Num):
        return False
    if isinstance(e, (Neg, Call)):
        return _depends(e.arg)
    if isinstance(e, BinOp):
        return _depends(e.left) or _depends(e.right)
    if isinstance(e, Pow):
        return _depends(e.base) or _depends(e.exponent)
    raise TypeError(e)


def derivative(e):
    """Symbolic d/dx of ``e`` with light constant folding."""
    if isinstance(e, Num):
        return Num(0.0)
    if isinstance(e, Var):
        return Num(1.0)
    if isinstance(e, Neg):
        return _neg(derivative(e.arg))
    if isinstance(e, BinOp):
        da, db = derivative(e.left), derivative(e.right)
        if e.op == "+":
            return _add(da, db)
        if e.op == "-":
            return _sub(da, db)
        if e.op == "*":
            return _add(_mul(da, e.right), _mul(e.left, db))
        # (a/b)' = a'/b - a b' / b^2
        return _sub(_div(da, e.right), _div(_mul(e.left, db), Pow(e.right, Num(2.0))))
    if isinstance(e, Pow):
        a, b = e.base, e.exponent
        da = derivative(a)
        if not _depends(b):
            # b a^(b-1) a'
            if _is_num(b):
                lowered = Num(b.value - 1.0) if b.value >= 1.0 else _sub(b, Num(1.0))
            else:
                lowered = _sub(b, Num(1.0))
            return _mul(_mul(b, Pow(a, lowered)), da)
        db = derivative(b)
        # a^b (b' log a + b a'/a)
        return _mul(e, _add(_mul(db, Log(a)), _div(_mul(b, da), a)))
    if isinstance(e, Call):
        da = derivative(e.arg)
        if e.func == "exp":
            return _mul(e, da)
        return _div(da, e.arg)
    raise TypeError(f"not an expression node: {e!r}")


# -- printing ----------------------------------------------------------------

def to_source(e):
    """Render ``e`` so that ``parse(to_source(e)) == e``."""
    if isinstance(e, Num):
        if e.value < 0:
            raise ExprError("negative literals have no source form; use Neg")
        return repr(float(e.value))
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_source(e.arg)})"
    if isinstance(e, BinOp):
        return f"({to_source(e.left)} {e.op} {to_source(e.right)})"
    if isinstance(e, Pow):
        return f"pow({to_source(e.base)}, {to_source(e.exponent)})"
    if isinstance(e, Call):
        return f"{e.func}({to_source(e.arg)})"
    raise TypeError(f"not an expression node: {e!r}")


def variables_of(e):
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Num):
        return set()
    if isinstance(e, (Neg, Call)):
        return variables_of(e.arg)
    if isinstance(e, BinOp):
        return variables_of(e.left) | variables_of(e.right)
    return variables_of(e.base) | variables_of(e.exponent)


class Function:
    """A parsed univariate expression bundled with its derivatives."""

    def __init__(self, src, var="t"):
        self.src = src
        self.var = var
        self.expr = parse(src, (var,))
        self.dexpr = derivative(self.expr)
        self._d2expr = None

    def __call__(self, x):
        return evaluate(self.expr, x)

    def d(self, x):
        return evaluate(self.dexpr, x)

    def d2(self, x):
        if self._d2expr is None:
            self._d2expr = derivative(self.dexpr)
        return evaluate(self._d2expr, x)

    def __eq__(self, other):
        return isinstance(other, Function) and self.expr == other.expr and self.var == other.var

    def __hash__(self):
        return hash((self.expr, self.var))

    def __repr__(self):
        return f"Function({self.src!r}, var={self.var!r})"
