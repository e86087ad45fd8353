"""Expression language for scalar coefficient functions of one variable x.

Supports numeric literals (decimal / scientific), the variable ``x``, the
binary operators ``+ - * / ^`` (``^`` right-associative, binding tighter
than unary minus), unary negation, and the functions ``exp log sqrt abs
sign sin cos tanh pow``.  Expressions parse to an immutable AST that can be
evaluated, differentiated symbolically, rendered back to text, and compiled
to a small stack program for the numeric backends.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class ExprError(Exception):
    """Base class for expression-language errors."""


class ParseError(ExprError):
    """Syntax or name error, carrying the byte offset into the source text."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class DomainError(ExprError):
    """Evaluation outside a function's domain (log/sqrt of a negative, etc.)."""

    def __init__(self, message: str, x: float):
        super().__init__(f"{message} at x={x!r}")
        self.x = x


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Expr:
    def __call__(self, x: float) -> float:
        return evaluate(self, x)


@dataclass(frozen=True)
class Num(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    pass


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class Bin(Expr):
    op: str  # one of + - * / ^
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Call(Expr):
    name: str
    args: tuple


X = Var()

_FUNCTIONS = {
    "exp": 1,
    "log": 1,
    "sqrt": 1,
    "abs": 1,
    "sign": 1,
    "sin": 1,
    "cos": 1,
    "tanh": 1,
    "pow": 2,
}


# ---------------------------------------------------------------------------
# Tokenizer / parser (recursive descent)

_TOKEN_OPS = set("+-*/^(),")


def _tokenize(text: str):
    tokens = []  # (kind, value, offset)
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c in _TOKEN_OPS:
            tokens.append(("op", c, i))
            i += 1
            continue
        if c.isdigit() or c == ".":
            j = i
            seen_dot = False
            while j < n and (text[j].isdigit() or (text[j] == "." and not seen_dot)):
                seen_dot = seen_dot or text[j] == "."
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    while k < n and text[k].isdigit():
                        k += 1
                    j = k
            try:
                value = float(text[i:j])
            except ValueError:
                raise ParseError(f"bad numeric literal {text[i:j]!r}", i) from None
            tokens.append(("num", value, i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("name", text[i:j], i))
            i = j
            continue
        raise ParseError(f"unexpected character {c!r}", i)
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def take(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op: str):
        kind, value, offset = self.peek()
        if kind != "op" or value != op:
            raise ParseError(f"expected {op!r}", offset)
        return self.take()

    # expr := term (('+'|'-') term)*
    def parse_expr(self) -> Expr:
        node = self.parse_term()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "+-":
                self.take()
                rhs = self.parse_term()
                node = Bin(value, node, rhs)
            else:
                return node

    # term := factor (('*'|'/') factor)*
    def parse_term(self) -> Expr:
        node = self.parse_factor()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "*/":
                self.take()
                rhs = self.parse_factor()
                node = Bin(value, node, rhs)
            else:
                return node

    # factor := '-' factor | power     (so -x^2 == -(x^2))
    def parse_factor(self) -> Expr:
        kind, value, _ = self.peek()
        if kind == "op" and value == "-":
            self.take()
            return Neg(self.parse_factor())
        if kind == "op" and value == "+":
            self.take()
            return self.parse_factor()
        return self.parse_power()

    # power := atom ('^' factor)?     (right-associative, allows x^-2)
    def parse_power(self) -> Expr:
        node = self.parse_atom()
        kind, value, _ = self.peek()
        if kind == "op" and value == "^":
            self.take()
            exponent = self.parse_factor()
            return Bin("^", node, exponent)
        return node

    def parse_atom(self) -> Expr:
        kind, value, offset = self.take()
        if kind == "num":
            return Num(value)
        if kind == "name":
            if value == "x":
                return X
            if value in _FUNCTIONS:
                self.expect_op("(")
                args = [self.parse_expr()]
                while True:
                    k, v, o = self.peek()
                    if k == "op" and v == ",":
                        self.take()
                        args.append(self.parse_expr())
                    else:
                        break
                self.expect_op(")")
                arity = _FUNCTIONS[value]
                if len(args) != arity:
                    raise ParseError(
                        f"{value} takes {arity} argument(s), got {len(args)}", offset
                    )
                return Call(value, tuple(args))
            if value in ("pi", "e"):
                return Num(math.pi if value == "pi" else math.e)
            raise ParseError(f"unknown identifier {value!r}", offset)
        if kind == "op" and value == "(":
            node = self.parse_expr()
            self.expect_op(")")
            return node
        raise ParseError("expected a value", offset)


def parse(text: str) -> Expr:
    """Parse an expression string into an AST.

    Raises ParseError (with byte offset) on malformed input.
    """
    if not text or not text.strip():
        raise ParseError("empty expression", 0)
    p = _Parser(text)
    node = p.parse_expr()
    kind, _, offset = p.peek()
    if kind != "end":
        raise ParseError("unexpected trailing input", offset)
    return node


# ---------------------------------------------------------------------------
# Rendering

_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def render(e: Expr) -> str:
    """Render an AST back to parseable text; parse(render(e)) evaluates like e."""
    return _render(e, 0)


def _render(e: Expr, parent_prec: int) -> str:
    if isinstance(e, Num):
        v = e.value
        if v < 0 or (v == 0 and math.copysign(1.0, v) < 0):
            s = repr(v)
            return f"({s})" if parent_prec > 0 else s
        return repr(v)
    if isinstance(e, Var):
        return "x"
    if isinstance(e, Neg):
        inner = _render(e.arg, _PRECEDENCE["neg"])
        s = f"-{inner}"
        return f"({s})" if parent_prec > _PRECEDENCE["neg"] else s
    if isinstance(e, Bin):
        prec = _PRECEDENCE[e.op]
        if e.op == "^":
            # right-associative; the left side must bind tighter than ^
            left = _render(e.left, prec + 1)
            right = _render(e.right, prec)
        else:
            left = _render(e.left, prec)
            right = _render(e.right, prec + 1)
        s = f"{left} {e.op} {right}" if e.op in "+-" else f"{left}{e.op}{right}"
        return f"({s})" if parent_prec > prec else s
    if isinstance(e, Call):
        return f"{e.name}({', '.join(_render(a, 0) for a in e.args)})"
    raise TypeError(f"not an Expr: {e!r}")


# ---------------------------------------------------------------------------
# Evaluation (single semantics shared with the numeric backends via programs)


def evaluate(e: Expr, x: float) -> float:
    """Evaluate at a point.  IEEE semantics; overflow returns a signed infinity,
    log/sqrt of a negative (and log 0, and negative base with fractional power)
    raise DomainError rather than producing a silent NaN."""
    prog = compile_program(e)
    from . import _backend  # deferred: backends import numpy only

    return _backend.eval_program_scalar(prog.code, prog.consts, float(x))


def evaluate_vec(e: Expr, xs: np.ndarray) -> np.ndarray:
    prog = compile_program(e)
    from . import _backend

    return _backend.eval_program(prog.code, prog.consts, np.asarray(xs, dtype=np.float64))


# ---------------------------------------------------------------------------
# Differentiation

_ZERO = Num(0.0)
_ONE = Num(1.0)


def _mul(a: Expr, b: Expr) -> Expr:
    if a == _ONE:
        return b
    if b == _ONE:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return Bin("*", a, b)


def _add(a: Expr, b: Expr) -> Expr:
    if a == _ZERO:
        return b
    if b == _ZERO:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return Bin("+", a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if b == _ZERO:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    return Bin("-", a, b)


def _div(a: Expr, b: Expr) -> Expr:
    if a == _ZERO:
        return _ZERO
    if b == _ONE:
        return a
    return Bin("/", a, b)


def differentiate(e: Expr) -> Expr:
    """Symbolic derivative d e/dx by structural rules.

    sign' is 0 and abs' is sign(arg)*arg', so for trees containing sign/abs
    the result is valid piecewise, away from the points listed by
    breakpoints().
    """
    if isinstance(e, Num):
        return _ZERO
    if isinstance(e, Var):
        return _ONE
    if isinstance(e, Neg):
        d = differentiate(e.arg)
        return _ZERO if d == _ZERO else Neg(d)
    if isinstance(e, Bin):
        dl, dr = differentiate(e.left), differentiate(e.right)
        if e.op == "+":
            return _add(dl, dr)
        if e.op == "-":
            return _sub(dl, dr)
        if e.op == "*":
            return _add(_mul(dl, e.right), _mul(e.left, dr))
        if e.op == "/":
            num = _sub(_mul(dl, e.right), _mul(e.left, dr))
            return _div(num, Bin("^", e.right, Num(2.0)))
        if e.op == "^":
            return _d_pow(e.left, e.right, dl, dr)
    if isinstance(e, Call):
        if e.name == "pow":
            base, expo = e.args
            return _d_pow(base, expo, differentiate(base), differentiate(expo))
        (arg,) = e.args
        da = differentiate(arg)
        if e.name == "exp":
            outer = Call("exp", (arg,))
        elif e.name == "log":
            return _div(da, arg)
        elif e.name == "sqrt":
            return _div(da, _mul(Num(2.0), Call("sqrt", (arg,))))
        elif e.name == "abs":
            outer = Call("sign", (arg,))
        elif e.name == "sign":
            return _ZERO
        elif e.name == "sin":
            outer = Call("cos", (arg,))
        elif e.name == "cos":
            outer = Neg(Call("sin", (arg,)))
        elif e.name == "tanh":
            outer = _sub(_ONE, Bin("^", Call("tanh", (arg,)), Num(2.0)))
        else:
            raise ExprError(f"no derivative rule for {e.name}")
        return _mul(outer, da)
    raise TypeError(f"not an Expr: {e!r}")


def _d_pow(base: Expr, expo: Expr, dbase: Expr, dexpo: Expr) -> Expr:
    if dexpo == _ZERO and isinstance(expo, Num):
        # c * base^(c-1) * base'
        c = expo.value
        return _mul(_mul(Num(c), Bin("^", base, Num(c - 1.0))), dbase)
    # general rule: base^expo * (expo' log base + expo base'/base)
    term = _add(_mul(dexpo, Call("log", (base,))), _mul(expo, _div(dbase, base)))
    return _mul(Bin("^", base, expo), term)


# ---------------------------------------------------------------------------
# Breakpoints: non-smooth abscissae from sign/abs arguments linear in x


def _affine(e: Expr):
    """Return (c, d) with e == c*x + d when e is affine in x, else None."""
    if isinstance(e, Num):
        return (0.0, e.value)
    if isinstance(e, Var):
        return (1.0, 0.0)
    if isinstance(e, Neg):
        inner = _affine(e.arg)
        return None if inner is None else (-inner[0], -inner[1])
    if isinstance(e, Bin):
        left, right = _affine(e.left), _affine(e.right)
        if e.op in "+-" and left is not None and right is not None:
            sgn = 1.0 if e.op == "+" else -1.0
            return (left[0] + sgn * right[0], left[1] + sgn * right[1])
        if e.op == "*" and left is not None and right is not None:
            if left[0] == 0.0:
                return (left[1] * right[0], left[1] * right[1])
            if right[0] == 0.0:
                return (right[1] * left[0], right[1] * left[1])
        if e.op == "/" and left is not None and right is not None and right[0] == 0.0:
            if right[1] != 0.0:
                return (left[0] / right[1], left[1] / right[1])
    return None


def breakpoints(e: Expr) -> tuple:
    """Sorted, duplicate-free roots of sign/abs arguments of the form c*x+d."""
    found = set()

    def walk(node: Expr):
        if isinstance(node, Call):
            if node.name in ("sign", "abs"):
                aff = _affine(node.args[0])
                if aff is not None and aff[0] != 0.0:
                    found.add(-aff[1] / aff[0])
            for a in node.args:
                walk(a)
        elif isinstance(node, Neg):
            walk(node.arg)
        elif isinstance(node, Bin):
            walk(node.left)
            walk(node.right)

    walk(e)
    return tuple(sorted(found))


def is_constant(e: Expr) -> bool:
    """True when the tree contains no occurrence of x."""
    if isinstance(e, (Num,)):
        return True
    if isinstance(e, Var):
        return False
    if isinstance(e, Neg):
        return is_constant(e.arg)
    if isinstance(e, Bin):
        return is_constant(e.left) and is_constant(e.right)
    if isinstance(e, Call):
        return all(is_constant(a) for a in e.args)
    raise TypeError(f"not an Expr: {e!r}")


# ---------------------------------------------------------------------------
# Stack programs for the numeric backends

OP_CONST = 0
OP_X = 1
OP_ADD = 2
OP_SUB = 3
OP_MUL = 4
OP_DIV = 5
OP_POW = 6
OP_NEG = 7
OP_EXP = 8
OP_LOG = 9
OP_SQRT = 10
OP_ABS = 11
OP_SIGN = 12
OP_SIN = 13
OP_COS = 14
OP_TANH = 15
OP_POWI = 16  # small integer power, strength-reduced to repeated multiplies

_CALL_OPS = {
    "exp": OP_EXP,
    "log": OP_LOG,
    "sqrt": OP_SQRT,
    "abs": OP_ABS,
    "sign": OP_SIGN,
    "sin": OP_SIN,
    "cos": OP_COS,
    "tanh": OP_TANH,
}


@dataclass(frozen=True)
class Program:
    """Flat post-order encoding of an Expr: rows of (opcode, argument)."""

    code: np.ndarray  # int32, shape (n, 2), read-only
    consts: np.ndarray  # float64, read-only
    stack_need: int


@lru_cache(maxsize=512)
def compile_program(e: Expr) -> Program:
    code: list = []
    consts: list = []

    def emit(node: Expr) -> int:
        if isinstance(node, Num):
            try:
                idx = consts.index(node.value)
            except ValueError:
                idx = len(consts)
                consts.append(node.value)
            code.append((OP_CONST, idx))
            return 1
        if isinstance(node, Var):
            code.append((OP_X, 0))
            return 1
        if isinstance(node, Neg):
            d = emit(node.arg)
            code.append((OP_NEG, 0))
            return d
        if isinstance(node, Bin):
            if node.op == "^" and isinstance(node.right, Num):
                p = node.right.value
                if p in (2.0, 3.0, 4.0):
                    d = emit(node.left)
                    code.append((OP_POWI, int(p)))
                    return d
            dl = emit(node.left)
            dr = emit(node.right)
            op = {"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV, "^": OP_POW}[node.op]
            code.append((op, 0))
            return max(dl, dr + 1)
        if isinstance(node, Call):
            if node.name == "pow":
                dl = emit(node.args[0])
                dr = emit(node.args[1])
                code.append((OP_POW, 0))
                return max(dl, dr + 1)
            d = emit(node.args[0])
            code.append((_CALL_OPS[node.name], 0))
            return d
        raise TypeError(f"not an Expr: {node!r}")

    depth = emit(e)
    code_arr = np.asarray(code, dtype=np.int32).reshape(len(code), 2)
    consts_arr = np.asarray(consts, dtype=np.float64)
    code_arr.setflags(write=False)
    consts_arr.setflags(write=False)
    return Program(code_arr, consts_arr, depth)
