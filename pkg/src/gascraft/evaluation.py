"""Compile check, settlement oracle, execution simulator and gas accounting."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Any, Callable

from .cdm import VariableBindings
from .library import FUNCTION, Blueprint
from .solidity import (
    DUPLICATE, MALFORMED, TYPE_MISMATCH, UNDECLARED, WIDTH_CONFLICT, FragmentSyntaxError, Revert, SolType,
    TypedFunction, check_function, parse_function, parse_type, parse_var_decl, run_function, storage_bits,
)
from .synthesizer import AssembledContract

ERROR_CLASSES = (TYPE_MISMATCH, UNDECLARED, WIDTH_CONFLICT, DUPLICATE, MALFORMED)

# every party starts funded so balance writes are slot updates, not first writes
OPENING_BALANCE = 10**24

SECONDS_PER_YEAR = 31_536_000
BPS = 10_000
FX_RATE_SCALE = 1_000_000


class UnknownSettlementRule(KeyError):
    pass


# -- gas model -----------------------------------------------------------------

@dataclass(frozen=True)
class GasModel:
    version: str = "gm-1"
    storage_write_init: int = 20_000
    storage_write_update: int = 5_000
    storage_read: int = 2_100
    memory_op: int = 3
    arith_op: int = 5
    compare_op: int = 3
    branch_op: int = 10
    base_deploy: int = 32_000
    per_storage_slot: int = 22_100
    per_code_byte: int = 200
    per_constructor_param: int = 500

    def __post_init__(self):
        for name, value in self.costs().items():
            if not isinstance(value, int) or value <= 0:
                raise ValueError(f"gas cost {name} must be a positive integer, got {value!r}")

    def costs(self) -> dict[str, int]:
        return {k: v for k, v in self.__dict__.items() if k != "version"}

    def op_cost(self, op: str) -> int:
        return getattr(self, op)

    def price(self, counts: dict[str, int]) -> int:
        return sum(self.op_cost(op) * n for op, n in counts.items())


# -- results -------------------------------------------------------------------

@dataclass(frozen=True)
class CompileError:
    error_class: str
    message: str
    symbol: str


@dataclass
class CompileResult:
    errors: list[CompileError] = field(default_factory=list)

    @property
    def success(self) -> bool:
        return not self.errors

    @property
    def n_errors(self) -> int:
        return len(self.errors)


def dedupe(errors: list[CompileError]) -> list[CompileError]:
    seen = set()
    out = []
    for e in errors:
        key = (e.error_class, e.symbol)
        if key not in seen:
            seen.add(key)
            out.append(e)
    return out


@dataclass(frozen=True)
class ExpectedOutcome:
    deltas: dict[str, int]
    reverted: bool


@dataclass(frozen=True)
class ExpectedState:
    functions: dict[str, ExpectedOutcome]


@dataclass(frozen=True)
class FunctionTrace:
    deltas: dict[str, int]
    overflow: bool
    reverted: bool
    gas: int
    reason: str = ""


@dataclass(frozen=True)
class ExecutionTrace:
    functions: dict[str, FunctionTrace]


@dataclass(frozen=True)
class FunctionResult:
    name: str
    passed: bool
    gas: int


@dataclass
class EvaluationReport:
    compile: CompileResult
    functions: list[FunctionResult] = field(default_factory=list)
    deploy_gas: int = 0
    trace: ExecutionTrace | None = None

    @property
    def func_gas(self) -> list[int]:
        return [f.gas for f in self.functions]

    @property
    def func_gas_avg(self) -> Fraction:
        if not self.functions:
            return Fraction(0)
        return Fraction(sum(self.func_gas), len(self.functions))

    @property
    def all_passed(self) -> bool:
        return self.compile.success and all(f.passed for f in self.functions)

    def by_name(self) -> dict[str, FunctionResult]:
        return {f.name: f for f in self.functions}


# -- settlement oracle ---------------------------------------------------------

def _transfer(payer: str, receiver: str, amount: int) -> dict[str, int]:
    out: dict[str, int] = defaultdict(int)
    out[payer.lower()] -= amount
    out[receiver.lower()] += amount
    return {k: v for k, v in out.items() if v}


def _fixed_leg(v):
    return _transfer(v["fixedPayer"], v["equityPayer"], v["fixedNotional"] * v["fixedDividend"] // BPS), False


def _equity_leg(v):
    move = v["endPrice"] - v["startPrice"]
    amount = abs(move) * v["numberOfShares"]
    if move > 0:
        return _transfer(v["equityPayer"], v["fixedPayer"], amount), False
    return _transfer(v["fixedPayer"], v["equityPayer"], amount), False


def _accrual(v, rate_name):
    if v["terminationDate"] < v["tradeDate"]:
        return None
    return v["notional"] * v[rate_name] * (v["terminationDate"] - v["tradeDate"]) // (BPS * SECONDS_PER_YEAR)


def _irs_fixed(v):
    amount = _accrual(v, "fixedRate")
    if amount is None:
        return {}, True
    return _transfer(v["fixedRatePayer"], v["floatingRatePayer"], amount), False


def _irs_float(v):
    amount = _accrual(v, "floatingRate")
    if amount is None:
        return {}, True
    return _transfer(v["floatingRatePayer"], v["fixedRatePayer"], amount), False


def _call_payoff(v):
    amount = max(v["settlementPrice"] - v["strikePrice"], 0) * v["numberOfShares"]
    return _transfer(v["seller"], v["buyer"], amount), False


def _put_payoff(v):
    amount = max(v["strikePrice"] - v["settlementPrice"], 0) * v["quantity"]
    return _transfer(v["seller"], v["buyer"], amount), False


def _premium(v):
    return _transfer(v["buyer"], v["seller"], v["premium"]), False


def _fx_settlement(v):
    move = v["fixingRate"] - v["forwardRate"]
    amount = v["baseNotional"] * abs(move) // FX_RATE_SCALE
    if move > 0:
        return _transfer(v["seller"], v["buyer"], amount), False
    return _transfer(v["buyer"], v["seller"], amount), False


SETTLEMENT_RULES: dict[str, Callable[[dict], tuple[dict[str, int], bool]]] = {
    "fixed-leg": _fixed_leg,
    "equity-performance-leg": _equity_leg,
    "irs-fixed-leg": _irs_fixed,
    "irs-float-leg": _irs_float,
    "option-call-payoff": _call_payoff,
    "option-put-payoff": _put_payoff,
    "premium-payment": _premium,
    "fx-forward-settlement": _fx_settlement,
}


def oracle_expected_state(bp: Blueprint, bindings: VariableBindings) -> ExpectedState:
    out = {}
    for fn, rule in bp.function_semantics.items():
        if rule not in SETTLEMENT_RULES:
            raise UnknownSettlementRule(rule)
        deltas, reverted = SETTLEMENT_RULES[rule](bindings.values)
        out[fn] = ExpectedOutcome(deltas, reverted)
    return ExpectedState(out)


# -- compilation -----------------------------------------------------------------

@lru_cache(maxsize=65536)
def _typed_function(template: str, state_types: frozenset) -> TypedFunction | str:
    """Parsed and checked function, or the syntax error message."""
    try:
        fn = parse_function(template)
    except FragmentSyntaxError as exc:
        return str(exc)
    return check_function(fn, dict(state_types))


def _literal_value(kind: str, text: str, t: SolType) -> tuple[Any, str | None]:
    if kind == "num":
        value = int(text)
        if not t.numeric:
            return None, f"numeric literal assigned to {t}"
        if not t.fits(value):
            return None, f"literal {value} does not fit {t}"
        return value, None
    if kind == "hex":
        if t.kind == "address" or (t.kind == "bytes" and t.bits == 160):
            return text.lower(), None
        if t.numeric:
            value = int(text, 16)
            return (value, None) if t.fits(value) else (None, f"literal {text} does not fit {t}")
        return None, f"hex literal assigned to {t}"
    body = text[1:-1]
    if t.kind == "string":
        return body, None
    if t.kind == "bytes":
        if len(body.encode()) > t.bits // 8:
            return None, f"string literal does not fit {t}"
        return body, None
    return None, f"string literal assigned to {t}"


@dataclass
class _Compiled:
    errors: list[CompileError]
    state_types: dict[str, SolType]
    state: dict[str, Any]
    tainted: frozenset
    functions: dict[str, TypedFunction]
    overhead: dict[str, dict[str, int]]


def _compile(c: AssembledContract) -> _Compiled:
    errors: list[CompileError] = []
    state_types: dict[str, SolType] = {}
    state: dict[str, Any] = {}
    tainted = set()
    ctor_values = {name: value for name, _, value in c.constructor_params}
    for frag in c.variable_fragments:
        try:
            decl = parse_var_decl(frag.text)
        except FragmentSyntaxError as exc:
            errors.append(CompileError(MALFORMED, str(exc), frag.symbol))
            continue
        t = parse_type(decl.type_name)
        if t is None:
            errors.append(CompileError(MALFORMED, f"unknown type {decl.type_name!r}", frag.symbol))
            continue
        if decl.name in state_types or decl.name == "balances":
            errors.append(CompileError(DUPLICATE, f"{decl.name!r} declared twice", frag.symbol))
            continue
        state_types[decl.name] = t
        if decl.literal is not None:
            value, problem = _literal_value(*decl.literal, t)
            if problem:
                cls = WIDTH_CONFLICT if "does not fit" in problem else TYPE_MISMATCH
                errors.append(CompileError(cls, problem, frag.symbol))
            state[decl.name] = value
        elif decl.name in ctor_values:
            value = ctor_values[decl.name]
            if t.numeric and isinstance(value, int) and not t.fits(value):
                # ABI decoding would reject this; model it as a poisoned slot
                value = t.wrap(value)
                tainted.add(decl.name)
            state[decl.name] = value
        else:
            state[decl.name] = 0 if t.numeric else ""

    functions: dict[str, TypedFunction] = {}
    overhead: dict[str, dict[str, int]] = {}
    key = frozenset(state_types.items())
    for frag in c.function_fragments:
        if frag.symbol in state_types or frag.symbol in functions:
            errors.append(CompileError(DUPLICATE, f"{frag.symbol!r} declared twice", frag.symbol))
            continue
        tf = _typed_function(frag.text, key)
        if isinstance(tf, str):
            errors.append(CompileError(MALFORMED, tf, frag.symbol))
            continue
        if tf.name != frag.symbol:
            errors.append(CompileError(MALFORMED, f"fragment defines {tf.name!r}", frag.symbol))
            continue
        errors += [CompileError(cls, msg, frag.symbol) for cls, msg in tf.errors]
        functions[frag.symbol] = tf
        overhead[frag.symbol] = dict(frag.snippet.static_op_costs)
    return _Compiled(dedupe(errors), state_types, state, frozenset(tainted), functions, overhead)


def static_check(c: AssembledContract) -> CompileResult:
    return CompileResult(_compile(c).errors)


# -- execution -------------------------------------------------------------------

def _run(compiled: _Compiled, model: GasModel) -> ExecutionTrace:
    out = {}
    for name, tf in compiled.functions.items():
        # fresh deployment per function, like one test per function
        balances: dict[str, int] = defaultdict(lambda: OPENING_BALANCE)
        try:
            frame = run_function(tf, dict(compiled.state), balances, compiled.tainted)
            reverted, reason = False, ""
        except Revert as exc:
            frame = exc.frame
            reverted, reason = True, str(exc)
        if reverted:
            deltas = {}
        else:
            deltas = {k: v - OPENING_BALANCE for k, v in balances.items() if v != OPENING_BALANCE}
        gas = model.price(frame.counts) + model.price(compiled.overhead[name])
        out[name] = FunctionTrace(deltas, frame.overflow, reverted, gas, reason)
    return ExecutionTrace(out)


def simulate(c: AssembledContract, bindings: VariableBindings, model: GasModel) -> ExecutionTrace:
    compiled = _compile(c)
    if compiled.errors:
        raise ValueError(f"cannot simulate a contract that fails static_check: {compiled.errors[0].message}")
    return _run(compiled, model)


def _pack_slots(types: list[SolType]) -> int:
    """Sequential packing in declaration order into 256-bit slots."""
    slots = 0
    used = 256  # forces a fresh slot for the first item
    for t in types:
        bits = storage_bits(t)
        if t.kind == "string" or used + bits > 256:
            slots += 1
            used = 0
        used += bits
        if t.kind == "string":
            used = 256
    return slots


def _deploy_gas(c: AssembledContract, state_types: dict[str, SolType], model: GasModel) -> int:
    return (model.base_deploy
            + model.per_storage_slot * _pack_slots(list(state_types.values()))
            + model.per_code_byte * len(c.source.encode())
            + model.per_constructor_param * len(c.constructor_params))


def gas_deploy(c: AssembledContract, model: GasModel) -> int:
    compiled = _compile(c)
    return _deploy_gas(c, compiled.state_types, model)


def evaluate(c: AssembledContract, bp: Blueprint, bindings: VariableBindings, model: GasModel) -> EvaluationReport:
    compiled = _compile(c)
    result = CompileResult(compiled.errors)
    if not result.success:
        return EvaluationReport(result)
    expected = oracle_expected_state(bp, bindings)
    trace = _run(compiled, model)
    functions = []
    for name in trace.functions:
        t = trace.functions[name]
        e = expected.functions[name]
        passed = t.deltas == e.deltas and not t.overflow and t.reverted == e.reverted
        functions.append(FunctionResult(name, passed, t.gas))
    return EvaluationReport(result, functions, _deploy_gas(c, compiled.state_types, model), trace)
