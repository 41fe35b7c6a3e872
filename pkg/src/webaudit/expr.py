"""Closed-form expressions: parsing, evaluation, differentiation, light simplification.

Grammar (whitespace insignificant)::

    sum     := product (('+' | '-') product)*
    product := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' unary)?
    atom    := NUMBER | NAME | FUNC '(' sum ')' | '(' sum ')'

so ``-x^2`` is ``-(x^2)`` and ``x^y^z`` is ``x^(y^z)``.  A minus sign directly
in front of a numeric literal (and not followed by ``^``) produces a negative
constant.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from webaudit.errors import DomainError, ExprError, UnboundVariableError

FUNCTIONS = ("exp", "ln", "sqrt")
UNARY_OPS = ("neg",) + FUNCTIONS
BINARY_OPS = ("add", "sub", "mul", "div", "pow")

_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}
_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}
_ATOM_PREC = 5


class Expression:
    """Immutable expression node.  Structural equality, cached hash."""

    __slots__ = ("_hash",)

    def __hash__(self):
        return self._hash

    def __add__(self, other):
        return Binary("add", self, as_expr(other))

    def __radd__(self, other):
        return Binary("add", as_expr(other), self)

    def __sub__(self, other):
        return Binary("sub", self, as_expr(other))

    def __rsub__(self, other):
        return Binary("sub", as_expr(other), self)

    def __mul__(self, other):
        return Binary("mul", self, as_expr(other))

    def __rmul__(self, other):
        return Binary("mul", as_expr(other), self)

    def __truediv__(self, other):
        return Binary("div", self, as_expr(other))

    def __rtruediv__(self, other):
        return Binary("div", as_expr(other), self)

    def __pow__(self, other):
        return Binary("pow", self, as_expr(other))

    def __rpow__(self, other):
        return Binary("pow", as_expr(other), self)

    def __neg__(self):
        return Unary("neg", self)

    def __str__(self):
        return unparse(self)


class Const(Expression):
    __hash__ = Expression.__hash__
    __slots__ = ("value",)

    def __init__(self, value):
        self.value = float(value)
        self._hash = hash(("const", self.value))

    def __eq__(self, other):
        return isinstance(other, Const) and self.value == other.value

    def __repr__(self):
        return f"Const({self.value!r})"


class Var(Expression):
    __hash__ = Expression.__hash__
    __slots__ = ("name",)

    def __init__(self, name):
        self.name = name
        self._hash = hash(("var", name))

    def __eq__(self, other):
        return isinstance(other, Var) and self.name == other.name

    def __repr__(self):
        return f"Var({self.name!r})"


class Unary(Expression):
    __hash__ = Expression.__hash__
    __slots__ = ("op", "arg")

    def __init__(self, op, arg):
        if op not in UNARY_OPS:
            raise ValueError(f"unknown unary op {op!r}")
        self.op = op
        self.arg = arg
        self._hash = hash((op, arg._hash))

    def __eq__(self, other):
        if self is other:
            return True
        return (
            isinstance(other, Unary)
            and self._hash == other._hash
            and self.op == other.op
            and self.arg == other.arg
        )

    def __repr__(self):
        return f"Unary({self.op!r}, {self.arg!r})"


class Binary(Expression):
    __hash__ = Expression.__hash__
    __slots__ = ("op", "left", "right")

    def __init__(self, op, left, right):
        if op not in BINARY_OPS:
            raise ValueError(f"unknown binary op {op!r}")
        self.op = op
        self.left = left
        self.right = right
        self._hash = hash((op, left._hash, right._hash))

    def __eq__(self, other):
        if self is other:
            return True
        return (
            isinstance(other, Binary)
            and self._hash == other._hash
            and self.op == other.op
            and self.left == other.left
            and self.right == other.right
        )

    def __repr__(self):
        return f"Binary({self.op!r}, {self.left!r}, {self.right!r})"


ZERO = Const(0.0)
ONE = Const(1.0)


def as_expr(value):
    if isinstance(value, Expression):
        return value
    if isinstance(value, str):
        return parse(value)
    return Const(value)


def is_const(e, value=None):
    return isinstance(e, Const) and (value is None or e.value == value)


# ----------------------------------------------------------------------------
# parsing


@dataclass(frozen=True)
class ParseDiagnostic:
    offset: int
    message: str
    expected: str = ""

    def __str__(self):
        tail = f" (expected {self.expected})" if self.expected else ""
        return f"offset {self.offset}: {self.message}{tail}"


class ParseError(ExprError, ValueError):
    """Raised by :func:`parse`; carries a :class:`ParseDiagnostic`."""

    def __init__(self, diagnostic):
        super().__init__(str(diagnostic))
        self.diagnostic = diagnostic

    @property
    def offset(self):
        return self.diagnostic.offset


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[^\W\d]\w*)"
    r"|(?P<op>[-+*/^()]))"
)


@dataclass(frozen=True)
class _Token:
    kind: str  # "num" | "name" | "op" | "end"
    text: str
    offset: int  # byte offset


def _tokenize(text):
    tokens = []
    pos = 0
    byte_pos = 0
    n = len(text)
    while pos < n:
        if text[pos:].strip() == "":
            byte_pos += len(text[pos:].encode())
            pos = n
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            lead = len(text[pos:]) - len(text[pos:].lstrip())
            off = byte_pos + len(text[pos : pos + lead].encode())
            raise ParseError(
                ParseDiagnostic(off, f"unexpected character {text[pos + lead]!r}", "number, name, operator or '('")
            )
        kind = m.lastgroup
        start = m.start(kind)
        tok_off = byte_pos + len(text[pos:start].encode())
        tokens.append(_Token(kind, m.group(kind), tok_off))
        byte_pos = tok_off + len(m.group(kind).encode())
        pos = m.end()
    tokens.append(_Token("end", "", byte_pos))
    return tokens


class _Parser:
    def __init__(self, text, variables):
        self.tokens = _tokenize(text)
        self.i = 0
        self.variables = None if variables is None else frozenset(variables)

    @property
    def tok(self):
        return self.tokens[self.i]

    def peek(self, k=1):
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def fail(self, message, expected=""):
        raise ParseError(ParseDiagnostic(self.tok.offset, message, expected))

    def accept(self, op):
        if self.tok.kind == "op" and self.tok.text == op:
            self.i += 1
            return True
        return False

    def parse(self):
        if self.tok.kind == "end":
            self.fail("empty input", "expression")
        e = self.sum()
        if self.tok.kind != "end":
            self.fail(f"unexpected token {self.tok.text!r}", "operator or end of input")
        return e

    def sum(self):
        e = self.product()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = "add" if self.tok.text == "+" else "sub"
            self.i += 1
            e = Binary(op, e, self.product())
        return e

    def product(self):
        e = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = "mul" if self.tok.text == "*" else "div"
            self.i += 1
            e = Binary(op, e, self.unary())
        return e

    def unary(self):
        if self.accept("-"):
            nxt = self.peek(1)
            if self.tok.kind == "num" and not (nxt.kind == "op" and nxt.text == "^"):
                value = float(self.tok.text)
                self.i += 1
                return Const(-value)
            return Unary("neg", self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.accept("^"):
            return Binary("pow", base, self.unary())
        return base

    def atom(self):
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Const(float(tok.text))
        if tok.kind == "name":
            nxt = self.peek(1)
            if tok.text in FUNCTIONS:
                self.i += 1
                if not self.accept("("):
                    self.fail(f"function {tok.text!r} needs an argument", "'('")
                arg = self.sum()
                if not self.accept(")"):
                    self.fail("unbalanced parenthesis", "')'")
                return Unary(tok.text, arg)
            if nxt.kind == "op" and nxt.text == "(":
                self.fail(f"unknown function {tok.text!r}", "one of exp, ln, sqrt")
            if self.variables is not None and tok.text not in self.variables:
                allowed = ", ".join(sorted(self.variables))
                self.fail(f"unknown identifier {tok.text!r}", f"one of {allowed}")
            self.i += 1
            return Var(tok.text)
        if self.accept("("):
            e = self.sum()
            if not self.accept(")"):
                self.fail("unbalanced parenthesis", "')'")
            return e
        if tok.kind == "end":
            self.fail("unexpected end of input", "expression")
        self.fail(f"unexpected token {tok.text!r}", "number, name or '('")


def parse(text, variables=None):
    """Parse infix text into an :class:`Expression`.

    ``variables``, when given, is the set of admissible free variable names;
    any other identifier is reported.  Raises :class:`ParseError`.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    return _Parser(text, variables).parse()


def _format_number(v):
    if v == 0.0 and math.copysign(1.0, v) < 0:
        return "-0"
    if v.is_integer() and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def _prec(e):
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Unary):
        return _PREC["neg"] if e.op == "neg" else _ATOM_PREC
    if isinstance(e, Const) and (e.value < 0 or math.copysign(1.0, e.value) < 0):
        return _PREC["neg"]
    return _ATOM_PREC


def unparse(e):
    """Render with the minimal parentheses that make ``parse(unparse(e)) == e``."""
    if isinstance(e, Const):
        return _format_number(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Unary):
        if e.op != "neg":
            return f"{e.op}({unparse(e.arg)})"
        inner = unparse(e.arg)
        if _prec(e.arg) < _PREC["neg"] or isinstance(e.arg, Const) and _prec(e.arg) == _ATOM_PREC:
            inner = f"({inner})"
        return "-" + inner
    p = _PREC[e.op]
    left, right = unparse(e.left), unparse(e.right)
    if e.op == "pow":
        if _prec(e.left) <= p:
            left = f"({left})"
        if _prec(e.right) < p:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(e.left) < p:
        left = f"({left})"
    if _prec(e.right) <= p:
        right = f"({right})"
    return f"{left} {_SYMBOL[e.op]} {right}"


# ----------------------------------------------------------------------------
# evaluation


def _ln(a):
    if a <= 0.0:
        raise DomainError(f"ln of non-positive argument {a!r}")
    return math.log(a)


def _sqrt(a):
    if a < 0.0:
        raise DomainError(f"sqrt of negative argument {a!r}")
    return math.sqrt(a)


def _exp(a):
    try:
        return math.exp(a)
    except OverflowError:
        raise DomainError(f"exp overflow at {a!r}") from None


def _div(a, b):
    if b == 0.0:
        raise DomainError("division by zero")
    return a / b


def _pow(a, b):
    try:
        r = a**b
    except ZeroDivisionError:
        raise DomainError("zero raised to a negative power") from None
    except OverflowError:
        raise DomainError(f"overflow in {a!r}^{b!r}") from None
    if isinstance(r, complex):
        raise DomainError(f"negative base {a!r} with non-integer exponent {b!r}")
    return r


def _neg(a):
    return -a


_UNARY_FN = {"neg": _neg, "exp": _exp, "ln": _ln, "sqrt": _sqrt}
_BINARY_FN = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": _div,
    "pow": _pow,
}


def evaluate(e, bindings):
    """Evaluate ``e`` with every free variable bound to a real in ``bindings``."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return float(bindings[e.name])
        except KeyError:
            raise UnboundVariableError(e.name) from None
    if isinstance(e, Unary):
        return _UNARY_FN[e.op](evaluate(e.arg, bindings))
    return _BINARY_FN[e.op](evaluate(e.left, bindings), evaluate(e.right, bindings))


def free_variables(e):
    out = set()
    stack = [e]
    seen = set()
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if isinstance(node, Var):
            out.add(node.name)
        elif isinstance(node, Unary):
            stack.append(node.arg)
        elif isinstance(node, Binary):
            stack.extend((node.left, node.right))
    return frozenset(out)


def lambdify(e, names):
    """Compile ``e`` to a Python function of positional reals in ``names`` order.

    Structurally equal subtrees are computed once.  Domain violations raise
    :class:`DomainError` exactly as :func:`evaluate` does.
    """
    names = tuple(names)
    missing = free_variables(e) - set(names)
    if missing:
        raise UnboundVariableError(sorted(missing)[0])
    temps = {}
    lines = []

    def emit(node):
        if node in temps:
            return temps[node]
        if isinstance(node, Const):
            ref = repr(node.value)
            if not math.isfinite(node.value):
                ref = f"float({ref!r})"
            return ref
        if isinstance(node, Var):
            return f"v{names.index(node.name)}"
        if isinstance(node, Unary):
            a = emit(node.arg)
            code = f"-{a}" if node.op == "neg" else f"_{node.op}({a})"
        elif node.op in ("add", "sub", "mul"):
            a, b = emit(node.left), emit(node.right)
            code = f"{a} {_SYMBOL[node.op]} {b}"
        else:
            a, b = emit(node.left), emit(node.right)
            code = f"_{node.op}({a}, {b})"
        ref = f"t{len(temps)}"
        temps[node] = ref
        lines.append(f"    {ref} = {code}")
        return ref

    result = emit(e)
    args = ", ".join(f"v{i}" for i in range(len(names)))
    src = f"def _f({args}):\n" + "\n".join(lines) + f"\n    return float({result})\n"
    env = {"_exp": _exp, "_ln": _ln, "_sqrt": _sqrt, "_div": _div, "_pow": _pow}
    exec(compile(src, "<webaudit.expr>", "exec"), env)
    fn = env["_f"]
    fn.names = names
    fn.expression = e
    return fn


# ----------------------------------------------------------------------------
# simplification


def _fold(e):
    try:
        v = evaluate(e, {})
    except DomainError:
        return e
    return Const(v) if math.isfinite(v) else e


def make_unary(op, a):
    if op == "neg":
        if isinstance(a, Const):
            return Const(-a.value)
        if isinstance(a, Unary) and a.op == "neg":
            return a.arg
        return Unary("neg", a)
    e = Unary(op, a)
    return _fold(e) if isinstance(a, Const) else e


def make_binary(op, a, b):
    if isinstance(a, Const) and isinstance(b, Const):
        return _fold(Binary(op, a, b))
    if op == "add":
        if is_const(a, 0.0):
            return b
        if is_const(b, 0.0):
            return a
    elif op == "sub":
        if is_const(b, 0.0):
            return a
        if is_const(a, 0.0):
            return make_unary("neg", b)
    elif op == "mul":
        if is_const(a, 0.0) or is_const(b, 0.0):
            return ZERO
        if is_const(a, 1.0):
            return b
        if is_const(b, 1.0):
            return a
        if is_const(a, -1.0):
            return make_unary("neg", b)
        if is_const(b, -1.0):
            return make_unary("neg", a)
    elif op == "div":
        if is_const(b, 1.0):
            return a
        if is_const(a, 0.0):
            return ZERO
    elif op == "pow":
        if is_const(b, 1.0):
            return a
        if is_const(b, 0.0) or is_const(a, 1.0):
            return ONE
    return Binary(op, a, b)


def simplify(e):
    """Constant folding, 0/1 identities and double negation, bottom-up.

    The value is preserved at every binding where ``e`` itself evaluates.
    No cancellation is attempted (``x/x`` stays as it is).
    """
    memo = {}

    def go(node):
        key = id(node)
        if key in memo:
            return memo[key]
        if isinstance(node, Unary):
            out = make_unary(node.op, go(node.arg))
        elif isinstance(node, Binary):
            out = make_binary(node.op, go(node.left), go(node.right))
        else:
            out = node
        memo[key] = out
        return out

    return go(e)


# ----------------------------------------------------------------------------
# differentiation and substitution


def differentiate(e, var):
    """Partial derivative of ``e`` with respect to the variable named ``var``."""
    memo = {}
    add = lambda a, b: make_binary("add", a, b)  # noqa: E731
    sub = lambda a, b: make_binary("sub", a, b)  # noqa: E731
    mul = lambda a, b: make_binary("mul", a, b)  # noqa: E731
    div = lambda a, b: make_binary("div", a, b)  # noqa: E731

    def d(node):
        if node in memo:
            return memo[node]
        if isinstance(node, Const):
            out = ZERO
        elif isinstance(node, Var):
            out = ONE if node.name == var else ZERO
        elif isinstance(node, Unary):
            da = d(node.arg)
            if is_const(da, 0.0):
                out = ZERO
            elif node.op == "neg":
                out = make_unary("neg", da)
            elif node.op == "exp":
                out = mul(node, da)
            elif node.op == "ln":
                out = div(da, node.arg)
            else:  # sqrt
                out = div(da, mul(Const(2.0), node))
        else:
            a, b = node.left, node.right
            if node.op in ("add", "sub"):
                out = make_binary(node.op, d(a), d(b))
            elif node.op == "mul":
                out = add(mul(d(a), b), mul(a, d(b)))
            elif node.op == "div":
                da, db = d(a), d(b)
                if is_const(db, 0.0):
                    out = div(da, b)
                else:
                    out = div(sub(mul(da, b), mul(a, db)), make_binary("pow", b, Const(2.0)))
            elif var not in free_variables(b):
                da = d(a)
                if is_const(da, 0.0):
                    out = ZERO
                else:
                    lowered = make_binary("pow", a, make_binary("sub", b, ONE))
                    out = mul(mul(b, lowered), da)
            else:
                # a^b with b depending on var: differentiate exp(b ln a)
                out = d(make_unary("exp", mul(b, make_unary("ln", a))))
        memo[node] = out
        return out

    return d(simplify(e))


def substitute(e, mapping):
    """Replace variables by expressions (``mapping``: name -> Expression or number)."""
    repl = {k: as_expr(v) for k, v in mapping.items()}
    memo = {}

    def go(node):
        key = id(node)
        if key in memo:
            return memo[key]
        if isinstance(node, Var):
            out = repl.get(node.name, node)
        elif isinstance(node, Unary):
            out = make_unary(node.op, go(node.arg))
        elif isinstance(node, Binary):
            out = make_binary(node.op, go(node.left), go(node.right))
        else:
            out = node
        memo[key] = out
        return out

    return go(e)


def node_count(e):
    seen = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if node in seen:
            continue
        seen.add(node)
        if isinstance(node, Unary):
            stack.append(node.arg)
        elif isinstance(node, Binary):
            stack.extend((node.left, node.right))
    return len(seen)


def apply_vector_field(e, field):
    """Directional derivative sum(coeff * de/dvar) for ``field``: var -> Expression."""
    out = ZERO
    for var in sorted(field):
        if var not in free_variables(e):
            continue
        out = make_binary("add", out, make_binary("mul", field[var], differentiate(e, var)))
    return out


def exp(a):
    return Unary("exp", as_expr(a))


def ln(a):
    return Unary("ln", as_expr(a))


def sqrt(a):
    return Unary("sqrt", as_expr(a))
