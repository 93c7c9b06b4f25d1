"""The restricted Solidity fragment grammar.

Covers exactly what the snippet library emits: state variable declarations
with an optional literal initializer, and parameterless public functions whose
bodies use local declarations, assignments, ``balances[k] += / -= e``,
``if``/``else``, ``require`` and integer expressions (casts, ``+ - * /``,
comparisons, ternaries).

Type checking follows Solidity 0.8 rules closely enough for width choices to
matter: no implicit narrowing, no implicit signed/unsigned conversion, and an
explicit cast may change signedness or width but not both. The interpreter
evaluates checked arithmetic in the operand width and meters gas per opcode
class. Any value that does not fit its type marks the frame as overflowed:
checked arithmetic also reverts, an explicit conversion truncates.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Callable

TYPE_MISMATCH = "TypeMismatch"
UNDECLARED = "UndeclaredIdentifier"
WIDTH_CONFLICT = "WidthConflict"
DUPLICATE = "DuplicateDeclaration"
MALFORMED = "MalformedFragment"

BALANCES = "balances"

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>//[^\n]*)
  | (?P<hex>0x[0-9a-fA-F]+)
  | (?P<num>\d+)
  | (?P<str>"(?:[^"\\]|\\.)*")
  | (?P<id>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>\+=|-=|>=|<=|==|!=|=>|[-+*/<>=?:;(){}\[\],])
    """,
    re.X,
)


class FragmentSyntaxError(ValueError):
    pass


# -- types --------------------------------------------------------------------

@dataclass(frozen=True)
class SolType:
    kind: str  # uint | int | address | bool | string | bytes | literal | error
    bits: int = 0

    @property
    def numeric(self) -> bool:
        return self.kind in ("uint", "int")

    def __str__(self) -> str:
        if self.kind in ("uint", "int"):
            return f"{self.kind}{self.bits}"
        if self.kind == "bytes":
            return f"bytes{self.bits // 8}"
        return self.kind

    def fits(self, value: int) -> bool:
        if self.kind == "uint":
            return 0 <= value < (1 << self.bits)
        if self.kind == "int":
            half = 1 << (self.bits - 1)
            return -half <= value < half
        return False

    def wrap(self, value: int) -> int:
        value &= (1 << self.bits) - 1
        if self.kind == "int" and value >= 1 << (self.bits - 1):
            value -= 1 << self.bits
        return value


LITERAL = SolType("literal")
ERROR = SolType("error")
BOOL = SolType("bool")
ADDRESS = SolType("address")
INT256 = SolType("int", 256)
UINT256 = SolType("uint", 256)

_TYPE_NAME = re.compile(r"^(uint|int)(\d*)$|^bytes(\d+)$|^(address|bool|string)$")


def parse_type(name: str) -> SolType | None:
    m = _TYPE_NAME.match(name)
    if not m:
        return None
    if m.group(1):
        bits = int(m.group(2) or 256)
        if bits % 8 or not 8 <= bits <= 256:
            return None
        return SolType(m.group(1), bits)
    if m.group(3):
        n = int(m.group(3))
        return SolType("bytes", 8 * n) if 1 <= n <= 32 else None
    return SolType(m.group(4))


def storage_bits(t: SolType) -> int:
    """Bits a value of this type occupies in a storage slot."""
    if t.numeric or t.kind == "bytes":
        return t.bits
    if t.kind == "address":
        return 160
    if t.kind == "bool":
        return 8
    return 256


# -- lexing and parsing -------------------------------------------------------

def tokenize(text: str) -> list[tuple[str, str]]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise FragmentSyntaxError(f"unexpected character {text[pos]!r} at offset {pos}")
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            out.append((kind, m.group()))
        pos = m.end()
    return out


@dataclass(frozen=True)
class VarDecl:
    type_name: str
    name: str
    literal: tuple[str, str] | None  # (token kind, token text)


@dataclass(frozen=True)
class FunctionDef:
    name: str
    body: tuple


# expression / statement AST: plain tuples tagged by their first element
#   ("num", int) ("name", str) ("cast", type_name, expr) ("bin", op, l, r)
#   ("cond", c, a, b)
#   ("decl", type_name, name, expr|None) ("assign", name, expr)
#   ("bal", key, op, expr) ("if", cond, body, orelse) ("require", cond)

_CMP = (">", "<", ">=", "<=", "==", "!=")


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    def peek(self, k: int = 0) -> tuple[str, str] | None:
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else None

    def take(self, text: str | None = None, kind: str | None = None) -> tuple[str, str]:
        tok = self.peek()
        if tok is None:
            raise FragmentSyntaxError(f"unexpected end of fragment, expected {text or kind}")
        if (text is not None and tok[1] != text) or (kind is not None and tok[0] != kind):
            raise FragmentSyntaxError(f"expected {text or kind}, got {tok[1]!r}")
        self.i += 1
        return tok

    def at(self, text: str) -> bool:
        tok = self.peek()
        return tok is not None and tok[1] == text

    def done(self) -> None:
        if self.peek() is not None:
            raise FragmentSyntaxError(f"trailing tokens from {self.peek()[1]!r}")

    # -- declarations
    def var_decl(self) -> VarDecl:
        type_name = self.take(kind="id")[1]
        self.take("public")
        name = self.take(kind="id")[1]
        literal = None
        if self.at("="):
            self.take("=")
            tok = self.peek()
            if tok is None or tok[0] not in ("num", "hex", "str"):
                raise FragmentSyntaxError("initializer must be a literal")
            literal = self.take()
        self.take(";")
        self.done()
        return VarDecl(type_name, name, literal)

    def function(self) -> FunctionDef:
        self.take("function")
        name = self.take(kind="id")[1]
        self.take("(")
        self.take(")")
        self.take("public")
        body = self.block()
        self.done()
        return FunctionDef(name, body)

    def block(self) -> tuple:
        self.take("{")
        stmts = []
        while not self.at("}"):
            stmts.append(self.statement())
        self.take("}")
        return tuple(stmts)

    def statement(self) -> tuple:
        tok = self.peek()
        if tok is None:
            raise FragmentSyntaxError("unexpected end of block")
        word = tok[1]
        if word == "if":
            self.take("if")
            self.take("(")
            cond = self.expr()
            self.take(")")
            body = self.block()
            orelse: tuple = ()
            if self.at("else"):
                self.take("else")
                orelse = (self.statement(),) if self.at("if") else self.block()
            return ("if", cond, body, orelse)
        if word == "require":
            self.take("require")
            self.take("(")
            cond = self.expr()
            self.take(")")
            self.take(";")
            return ("require", cond)
        if word == BALANCES and self.peek(1) and self.peek(1)[1] == "[":
            self.take(BALANCES)
            self.take("[")
            key = self.expr()
            self.take("]")
            op = self.take(kind="op")[1]
            if op not in ("+=", "-="):
                raise FragmentSyntaxError(f"balances supports += and -=, got {op!r}")
            value = self.expr()
            self.take(";")
            return ("bal", key, op, value)
        if tok[0] == "id" and parse_type(word) is not None and self.peek(1) and self.peek(1)[0] == "id":
            self.take()
            name = self.take(kind="id")[1]
            value = None
            if self.at("="):
                self.take("=")
                value = self.expr()
            self.take(";")
            return ("decl", word, name, value)
        if tok[0] == "id" and self.peek(1) and self.peek(1)[1] == "=":
            self.take()
            self.take("=")
            value = self.expr()
            self.take(";")
            return ("assign", word, value)
        raise FragmentSyntaxError(f"cannot parse statement starting at {word!r}")

    def expr(self) -> tuple:
        cond = self.comparison()
        if self.at("?"):
            self.take("?")
            a = self.expr()
            self.take(":")
            b = self.expr()
            return ("cond", cond, a, b)
        return cond

    def comparison(self) -> tuple:
        left = self.additive()
        tok = self.peek()
        if tok is not None and tok[1] in _CMP:
            self.take()
            return ("bin", tok[1], left, self.additive())
        return left

    def additive(self) -> tuple:
        left = self.multiplicative()
        while self.peek() is not None and self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            left = ("bin", op, left, self.multiplicative())
        return left

    def multiplicative(self) -> tuple:
        left = self.primary()
        while self.peek() is not None and self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            left = ("bin", op, left, self.primary())
        return left

    def primary(self) -> tuple:
        tok = self.take()
        if tok[0] == "num":
            return ("num", int(tok[1]))
        if tok[1] == "(":
            inner = self.expr()
            self.take(")")
            return inner
        if tok[0] == "id":
            if self.at("(") and parse_type(tok[1]) is not None:
                self.take("(")
                inner = self.expr()
                self.take(")")
                return ("cast", tok[1], inner)
            return ("name", tok[1])
        raise FragmentSyntaxError(f"unexpected token {tok[1]!r} in expression")


def parse_var_decl(text: str) -> VarDecl:
    return _Parser(text).var_decl()


def parse_function(text: str) -> FunctionDef:
    return _Parser(text).function()


def referenced_names(fn: FunctionDef) -> set[str]:
    """Identifiers a function reads that are not its own locals."""
    locals_: set[str] = set()
    names: set[str] = set()

    def expr(e):
        tag = e[0]
        if tag == "name":
            names.add(e[1])
        elif tag == "cast":
            expr(e[2])
        elif tag == "bin":
            expr(e[2]); expr(e[3])
        elif tag == "cond":
            expr(e[1]); expr(e[2]); expr(e[3])

    def stmts(body):
        for s in body:
            tag = s[0]
            if tag == "decl":
                locals_.add(s[2])
                if s[3] is not None:
                    expr(s[3])
            elif tag == "assign":
                expr(s[2])
            elif tag == "bal":
                expr(s[1]); expr(s[3])
            elif tag == "if":
                expr(s[1]); stmts(s[2]); stmts(s[3])
            elif tag == "require":
                expr(s[1])

    stmts(fn.body)
    return names - locals_


# -- runtime ------------------------------------------------------------------

class Revert(Exception):
    def __init__(self, overflow: bool, reason: str):
        super().__init__(reason)
        self.overflow = overflow


class Frame:
    """Mutable execution state for one function call."""

    __slots__ = ("state", "tainted", "locals", "balances", "counts", "overflow")

    def __init__(self, state: dict, tainted: frozenset, balances: dict):
        self.state = state
        self.tainted = tainted
        self.locals: dict[str, Any] = {}
        self.balances = balances
        self.counts: dict[str, int] = {}
        self.overflow = False

    def charge(self, op: str, n: int = 1) -> None:
        self.counts[op] = self.counts.get(op, 0) + n


# typed nodes: built by the checker, executed by the interpreter

class _Lit:
    __slots__ = ("value",)

    def __init__(self, value):
        self.value = value

    def ev(self, f: Frame):
        return self.value


class _State:
    __slots__ = ("name",)

    def __init__(self, name):
        self.name = name

    def ev(self, f: Frame):
        f.charge("storage_read")
        if self.name in f.tainted:
            f.overflow = True
        return f.state[self.name]


class _Local:
    __slots__ = ("name",)

    def __init__(self, name):
        self.name = name

    def ev(self, f: Frame):
        f.charge("memory_op")
        return f.locals[self.name]


class _Cast:
    __slots__ = ("t", "e")

    def __init__(self, t, e):
        self.t, self.e = t, e

    def ev(self, f: Frame):
        v = self.e.ev(f)
        f.charge("arith_op")
        w = self.t.wrap(v)
        if w != v:
            # truncates silently, as in Solidity, but the value did not fit
            f.overflow = True
        return w


def _tdiv(a: int, b: int) -> int:
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


class _Arith:
    __slots__ = ("op", "l", "r", "t")

    def __init__(self, op, l, r, t):
        self.op, self.l, self.r, self.t = op, l, r, t

    def ev(self, f: Frame):
        a = self.l.ev(f)
        b = self.r.ev(f)
        f.charge("arith_op")
        op = self.op
        if op == "+":
            v = a + b
        elif op == "-":
            v = a - b
        elif op == "*":
            v = a * b
        else:
            if b == 0:
                raise Revert(False, "division by zero")
            v = _tdiv(a, b)
        if not self.t.fits(v):
            f.overflow = True
            raise Revert(True, f"{self.t} overflow in {op}")
        return v


_CMP_FN: dict[str, Callable[[Any, Any], bool]] = {
    ">": lambda a, b: a > b, "<": lambda a, b: a < b,
    ">=": lambda a, b: a >= b, "<=": lambda a, b: a <= b,
    "==": lambda a, b: a == b, "!=": lambda a, b: a != b,
}


class _Compare:
    __slots__ = ("fn", "l", "r")

    def __init__(self, op, l, r):
        self.fn, self.l, self.r = _CMP_FN[op], l, r

    def ev(self, f: Frame):
        a = self.l.ev(f)
        b = self.r.ev(f)
        f.charge("compare_op")
        return self.fn(a, b)


class _Ternary:
    __slots__ = ("c", "a", "b")

    def __init__(self, c, a, b):
        self.c, self.a, self.b = c, a, b

    def ev(self, f: Frame):
        c = self.c.ev(f)
        f.charge("branch_op")
        return self.a.ev(f) if c else self.b.ev(f)


def exec_body(body: list, f: Frame) -> None:
    for stmt in body:
        tag = stmt[0]
        if tag == "decl":
            _, name, e, zero = stmt
            f.locals[name] = e.ev(f) if e is not None else zero
            f.charge("memory_op")
        elif tag == "assign_local":
            _, name, e = stmt
            f.locals[name] = e.ev(f)
            f.charge("memory_op")
        elif tag == "bal":
            _, key_e, sign, e = stmt
            key = key_e.ev(f)
            amount = e.ev(f)
            old = f.balances[key]
            f.charge("storage_read")
            new = old + sign * amount
            f.charge("arith_op")
            if not INT256.fits(new):
                f.overflow = True
                raise Revert(True, "int256 overflow in balance update")
            f.charge("storage_write_init" if old == 0 and new != 0 else "storage_write_update")
            f.balances[key] = new
        elif tag == "if":
            _, c, body_t, body_f = stmt
            cond = c.ev(f)
            f.charge("branch_op")
            exec_body(body_t if cond else body_f, f)
        elif tag == "require":
            cond = stmt[1].ev(f)
            f.charge("branch_op")
            if not cond:
                raise Revert(False, "require failed")
        else:  # pragma: no cover - checker never emits other tags
            raise AssertionError(tag)


# -- type checking ------------------------------------------------------------

@dataclass
class TypedFunction:
    name: str
    body: list
    errors: list[tuple[str, str]]  # (error class, message)


class _Checker:
    def __init__(self, state_types: dict[str, SolType]):
        self.state_types = state_types
        self.scopes: list[dict[str, SolType]] = []
        self.errors: list[tuple[str, str]] = []

    def err(self, cls: str, msg: str) -> SolType:
        self.errors.append((cls, msg))
        return ERROR

    def lookup(self, name: str) -> tuple[str, SolType] | None:
        for scope in reversed(self.scopes):
            if name in scope:
                return "local", scope[name]
        if name in self.state_types:
            return "state", self.state_types[name]
        return None

    # returns (typed node, type, literal value or None)
    def expr(self, e) -> tuple[Any, SolType]:
        tag = e[0]
        if tag == "num":
            return _Lit(e[1]), LITERAL
        if tag == "name":
            if e[1] == BALANCES:
                return _Lit(0), self.err(TYPE_MISMATCH, "balances mapping used as a value")
            found = self.lookup(e[1])
            if found is None:
                return _Lit(0), self.err(UNDECLARED, f"undeclared identifier {e[1]!r}")
            where, t = found
            return (_Local(e[1]) if where == "local" else _State(e[1])), t
        if tag == "cast":
            target = parse_type(e[1])
            node, t = self.expr(e[2])
            if t is ERROR:
                return node, ERROR
            if not target.numeric:
                if t == target:
                    return node, target
                return node, self.err(TYPE_MISMATCH, f"cannot convert {t} to {target}")
            if t is LITERAL:
                if not target.fits(node.value):
                    return node, self.err(WIDTH_CONFLICT, f"literal {node.value} does not fit {target}")
                return _Lit(node.value), target
            if not t.numeric:
                return node, self.err(TYPE_MISMATCH, f"cannot convert {t} to {target}")
            if t.kind != target.kind and t.bits != target.bits:
                return node, self.err(TYPE_MISMATCH, f"explicit conversion {t} -> {target} changes sign and width")
            return _Cast(target, node), target
        if tag == "bin":
            op = e[1]
            ln, lt = self.expr(e[2])
            rn, rt = self.expr(e[3])
            ln, rn, t = self.unify(ln, lt, rn, rt, op)
            if t is ERROR:
                return ln, ERROR
            if op in _CMP:
                return _Compare(op, ln, rn), BOOL
            if t is LITERAL:
                try:
                    v = _Arith(op, ln, rn, UINT256).ev(Frame({}, frozenset(), {}))
                except Revert as exc:
                    return ln, self.err(WIDTH_CONFLICT, f"constant expression: {exc}")
                return _Lit(v), LITERAL
            return _Arith(op, ln, rn, t), t
        if tag == "cond":
            cn, ct = self.expr(e[1])
            if ct not in (BOOL, ERROR):
                self.err(TYPE_MISMATCH, f"condition must be bool, got {ct}")
            an, at = self.expr(e[2])
            bn, bt = self.expr(e[3])
            an, bn, t = self.unify(an, at, bn, bt, "?:")
            if t is LITERAL:
                an, bn, t = _Lit(an.value), _Lit(bn.value), UINT256
            return _Ternary(cn, an, bn), t
        raise AssertionError(tag)

    def unify(self, ln, lt: SolType, rn, rt: SolType, op: str):
        if lt is ERROR or rt is ERROR:
            return ln, rn, ERROR
        if lt is LITERAL and rt is LITERAL:
            return ln, rn, LITERAL
        if lt is LITERAL:
            return self.coerce_literal(ln, rt, op), rn, rt if rt.numeric else self._bad(lt, rt, op)
        if rt is LITERAL:
            return ln, self.coerce_literal(rn, lt, op), lt if lt.numeric else self._bad(lt, rt, op)
        if lt.numeric and rt.numeric:
            if lt.kind != rt.kind:
                return ln, rn, self._bad(lt, rt, op)
            return ln, rn, SolType(lt.kind, max(lt.bits, rt.bits))
        if op in ("==", "!=", "?:") and lt == rt:
            return ln, rn, lt
        return ln, rn, self._bad(lt, rt, op)

    def _bad(self, lt, rt, op) -> SolType:
        return self.err(TYPE_MISMATCH, f"operator {op} not compatible with {lt} and {rt}")

    def coerce_literal(self, node, t: SolType, op: str):
        if t.numeric and not t.fits(node.value):
            self.err(WIDTH_CONFLICT, f"literal {node.value} does not fit {t} in {op}")
        return node

    def assignable(self, src: SolType, node, dst: SolType, what: str) -> None:
        if src is ERROR or dst is ERROR:
            return
        if src is LITERAL:
            if not dst.numeric:
                self.err(TYPE_MISMATCH, f"literal is not convertible to {dst} in {what}")
            elif not dst.fits(node.value):
                self.err(WIDTH_CONFLICT, f"literal {node.value} does not fit {dst} in {what}")
            return
        if src.numeric and dst.numeric:
            if src.kind != dst.kind:
                self.err(TYPE_MISMATCH, f"{src} is not implicitly convertible to {dst} in {what}")
            elif src.bits > dst.bits:
                self.err(WIDTH_CONFLICT, f"{src} does not narrow implicitly to {dst} in {what}")
            return
        if src != dst:
            self.err(TYPE_MISMATCH, f"{src} is not implicitly convertible to {dst} in {what}")

    def declare(self, name: str, t: SolType) -> None:
        if self.lookup(name) is not None or name == BALANCES:
            self.err(DUPLICATE, f"identifier {name!r} already declared")
        self.scopes[-1][name] = t

    def body(self, stmts) -> list:
        self.scopes.append({})
        out = []
        for s in stmts:
            tag = s[0]
            if tag == "decl":
                t = parse_type(s[1])
                if not (t.numeric or t == BOOL):
                    self.err(TYPE_MISMATCH, f"local {s[2]!r} cannot have type {t}")
                node = None
                if s[3] is not None:
                    node, et = self.expr(s[3])
                    self.assignable(et, node, t, f"declaration of {s[2]}")
                self.declare(s[2], t)
                out.append(("decl", s[2], node, False if t == BOOL else 0))
            elif tag == "assign":
                found = self.lookup(s[1])
                node, et = self.expr(s[2])
                if found is None:
                    self.err(UNDECLARED, f"assignment to undeclared {s[1]!r}")
                elif found[0] == "state":
                    self.err(TYPE_MISMATCH, f"state variable {s[1]!r} is read-only in settlement code")
                else:
                    self.assignable(et, node, found[1], f"assignment to {s[1]}")
                out.append(("assign_local", s[1], node))
            elif tag == "bal":
                kn, kt = self.expr(s[1])
                if kt not in (ADDRESS, ERROR):
                    self.err(TYPE_MISMATCH, f"balances key must be address, got {kt}")
                vn, vt = self.expr(s[3])
                self.assignable(vt, vn, INT256, "balances update")
                out.append(("bal", kn, 1 if s[2] == "+=" else -1, vn))
            elif tag == "if":
                cn, ct = self.expr(s[1])
                if ct not in (BOOL, ERROR):
                    self.err(TYPE_MISMATCH, f"if condition must be bool, got {ct}")
                out.append(("if", cn, self.body(s[2]), self.body(s[3])))
            elif tag == "require":
                cn, ct = self.expr(s[1])
                if ct not in (BOOL, ERROR):
                    self.err(TYPE_MISMATCH, f"require condition must be bool, got {ct}")
                out.append(("require", cn))
        self.scopes.pop()
        return out


def check_function(fn: FunctionDef, state_types: dict[str, SolType]) -> TypedFunction:
    checker = _Checker(state_types)
    body = checker.body(fn.body)
    return TypedFunction(fn.name, body, checker.errors)


def run_function(tf: TypedFunction, state: dict, balances: dict, tainted: frozenset = frozenset()) -> Frame:
    """Execute a checked function. Raises :class:`Revert` on revert; the frame
    passed back (also attached to the exception) holds op counts so far."""
    frame = Frame(state, tainted, balances)
    try:
        exec_body(tf.body, frame)
    except Revert as exc:
        exc.frame = frame
        raise
    return frame
