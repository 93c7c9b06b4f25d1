"""Single-step contract-generation environment and the two-phase reward."""

from __future__ import annotations

import enum
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cdm import N_FEATURES, CdmInstance, ContractType, MappingSchema, VariableBindings, apply_mapping, extract_features
from .evaluation import CompileError, CompileResult, EvaluationReport, GasModel, dedupe, evaluate
from .library import Blueprint, SnippetLibrary, action_space_shape, universal_functions
from .synthesizer import RenderError, SnippetSelection, assemble

BUDGET_SUBSTITUTION = "budget_substitution"
ZERO_FUNCTION_REWARD = "zero_function_reward"
FAILED_TEST_MODES = (BUDGET_SUBSTITUTION, ZERO_FUNCTION_REWARD)


class ActionOutOfRange(ValueError):
    pass


class ScoreUndefined(ValueError):
    pass


class Phase(str, enum.Enum):
    COMPILATION = "Compilation"
    GAS_OPTIMIZATION = "GasOptimization"


@dataclass(frozen=True)
class RewardParams:
    r_success: float = 200.0
    p_base: float = -100.0
    p_per_error: float = -10.0
    r_max: float = 1500.0
    b_deploy: float = 1_200_000.0
    b_func: float = 90_000.0
    w_deploy: float = 0.35
    w_func: float = 0.65
    p_compile_fail_phase2: float = -200.0
    n_errors_cap: int = 10

    def __post_init__(self):
        if abs(self.w_deploy + self.w_func - 1.0) > 1e-12:
            raise ValueError("w_deploy + w_func must equal 1")
        if self.b_deploy <= 0 or self.b_func <= 0 or self.r_max <= 0:
            raise ValueError("budgets and R_max must be positive")
        if self.n_errors_cap < 1:
            raise ValueError("n_errors_cap must be at least 1")


def reward_phase1(cr: CompileResult, p: RewardParams) -> float:
    if cr.success:
        return p.r_success
    n = min(max(cr.n_errors, 1), p.n_errors_cap)
    return p.p_base + n * p.p_per_error


def _cost_fractions(r: EvaluationReport, p: RewardParams, mode: str) -> tuple[float, float]:
    """Budget-normalized (deploy, function) costs, each in [0, 1]."""
    if mode not in FAILED_TEST_MODES:
        raise ValueError(f"unknown failed-test mode {mode!r}")
    deploy = min(r.deploy_gas / p.b_deploy, 1.0)
    if not r.functions:
        return deploy, 0.0
    if mode == ZERO_FUNCTION_REWARD and not all(f.passed for f in r.functions):
        return deploy, 1.0
    gas = [f.gas if f.passed else p.b_func for f in r.functions]
    return deploy, min(sum(gas) / len(gas) / p.b_func, 1.0)


def reward_phase2(r: EvaluationReport, p: RewardParams, mode: str = BUDGET_SUBSTITUTION) -> float:
    if not r.compile.success:
        return p.p_compile_fail_phase2
    deploy, func = _cost_fractions(r, p, mode)
    return p.w_deploy * p.r_max * (1.0 - deploy) + p.w_func * p.r_max * (1.0 - func)


def normalized_gas_score(r: EvaluationReport, p: RewardParams, mode: str = BUDGET_SUBSTITUTION) -> float:
    if not r.compile.success:
        raise ScoreUndefined("normalized gas is undefined for a contract that does not compile")
    deploy, func = _cost_fractions(r, p, mode)
    return p.w_deploy * deploy + p.w_func * func


def feedback_vector(r: EvaluationReport | None, functions: Sequence[str], p: RewardParams) -> np.ndarray:
    """(pass flag, 1 - min(g/B_func, 1)) per universal function; zeros when absent."""
    out = np.zeros(2 * len(functions))
    if r is None or not r.compile.success:
        return out
    results = r.by_name()
    for j, name in enumerate(functions):
        f = results.get(name)
        if f is not None:
            out[2 * j] = 1.0 if f.passed else 0.0
            out[2 * j + 1] = 1.0 - min(f.gas / p.b_func, 1.0)
    return out


@dataclass(frozen=True)
class Observation:
    type_onehot: np.ndarray
    feedback: np.ndarray
    cdm_features: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.type_onehot, self.feedback, self.cdm_features])


def observation_width(n_functions: int) -> int:
    return len(ContractType) + 2 * n_functions + N_FEATURES


def type_onehot(ctype: ContractType) -> np.ndarray:
    out = np.zeros(len(ContractType))
    out[ctype.index] = 1.0
    return out


def decode_action(a: Sequence[int], bp: Blueprint, lib: SnippetLibrary) -> SnippetSelection:
    shape = action_space_shape(lib)
    if len(a) != len(shape):
        raise ActionOutOfRange(f"action has {len(a)} entries, library has {len(shape)} symbols")
    for i, (v, k) in enumerate(zip(a, shape)):
        if not 0 <= int(v) < k:
            raise ActionOutOfRange(f"entry {i} = {v} outside [0, {k})")
    return SnippetSelection(bp.contract_type,
                            tuple((s, int(a[lib.symbol(s).global_index])) for s in bp.required_symbols))


def blueprint_mask(bp: Blueprint, lib: SnippetLibrary) -> np.ndarray:
    mask = np.zeros(lib.n_symbols)
    for s in bp.required_symbols:
        mask[lib.symbol(s).global_index] = 1.0
    return mask


Evaluator = Callable[..., EvaluationReport]


def builtin_evaluator(model: GasModel) -> Evaluator:
    def run(contract, bp, bindings):
        return evaluate(contract, bp, bindings, model)
    return run


def render_and_evaluate(selection: SnippetSelection, bindings: VariableBindings, lib: SnippetLibrary,
                        bp: Blueprint, evaluator: Evaluator) -> EvaluationReport:
    """Render failures surface as compile errors, one per offending symbol."""
    try:
        contract = assemble(selection, bindings, lib, bp)
    except RenderError as exc:
        errors = [CompileError(cls, msg, sym) for cls, sym, msg in exc.problems]
        return EvaluationReport(CompileResult(dedupe(errors)))
    return evaluator(contract, bp, bindings)


@dataclass
class _Prepared:
    instance: CdmInstance
    bindings: VariableBindings
    features: np.ndarray


@dataclass
class StepInfo:
    instance_id: str
    contract_type: ContractType
    selection: SnippetSelection
    report: EvaluationReport
    phase: Phase
    norm_gas: float | None
    compile_success: bool = field(init=False)

    def __post_init__(self):
        self.compile_success = self.report.compile.success


class ContractEnv:
    """One episode is one contract; ``done`` is always true."""

    def __init__(self, lib: SnippetLibrary, blueprints: dict[ContractType, Blueprint],
                 schemas: dict[ContractType, MappingSchema], dataset: Sequence[CdmInstance], *,
                 params: RewardParams = RewardParams(), evaluator: Evaluator | None = None, seed: int = 0,
                 phase: Phase = Phase.COMPILATION, failed_test_mode: str = BUDGET_SUBSTITUTION,
                 cache_size: int = 50_000):
        if not dataset:
            raise ValueError("dataset must be non-empty")
        if failed_test_mode not in FAILED_TEST_MODES:
            raise ValueError(f"unknown failed-test mode {failed_test_mode!r}")
        self.lib = lib
        self.blueprints = blueprints
        self.params = params
        self.evaluator = evaluator or builtin_evaluator(GasModel())
        self.phase = phase
        self.failed_test_mode = failed_test_mode
        self.functions = universal_functions(lib, blueprints)
        self.action_shape = action_space_shape(lib)
        self.obs_dim = observation_width(len(self.functions))
        self._items = []
        for inst in dataset:
            if inst.contract_type not in blueprints:
                raise ValueError(f"no blueprint for {inst.contract_type.value} ({inst.id})")
            schema = schemas[inst.contract_type]
            b = apply_mapping(inst, schema)
            self._items.append(_Prepared(inst, b, extract_features(b, schema)))
        self._masks = {ct: blueprint_mask(bp, lib) for ct, bp in blueprints.items()}
        self.rng = np.random.default_rng(seed)
        self._order: list[int] = []
        self._cursor = 0
        self._current: _Prepared | None = None
        self._feedback = np.zeros(2 * len(self.functions))
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size

    # -- state for checkpoint/resume
    def get_state(self) -> dict:
        return {"rng": self.rng.bit_generator.state, "order": list(self._order), "cursor": self._cursor,
                "current": None if self._current is None else self._items.index(self._current),
                "feedback": self._feedback.tolist(), "phase": self.phase.value}

    def set_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state["rng"]
        self._order = list(state["order"])
        self._cursor = state["cursor"]
        self._current = None if state["current"] is None else self._items[state["current"]]
        self._feedback = np.asarray(state["feedback"], dtype=float)
        self.phase = Phase(state["phase"])

    @property
    def current(self) -> CdmInstance:
        return self._current.instance

    def mask(self) -> np.ndarray:
        return self._masks[self._current.instance.contract_type]

    def _observe(self) -> Observation:
        return Observation(type_onehot(self._current.instance.contract_type), self._feedback.copy(),
                           self._current.features)

    def reset(self) -> Observation:
        if self._cursor >= len(self._order):
            self._order = [int(i) for i in self.rng.permutation(len(self._items))]
            self._cursor = 0
        self._current = self._items[self._order[self._cursor]]
        self._cursor += 1
        return self._observe()

    def evaluate_selection(self, selection: SnippetSelection, item: _Prepared | None = None) -> EvaluationReport:
        item = item or self._current
        key = (item.instance.id, selection.choices)
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        bp = self.blueprints[item.instance.contract_type]
        report = render_and_evaluate(selection, item.bindings, self.lib, bp, self.evaluator)
        self._cache[key] = report
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return report

    def step(self, a: Sequence[int]) -> tuple[Observation, float, bool, StepInfo]:
        if self._current is None:
            raise RuntimeError("call reset() before step()")
        inst = self._current.instance
        bp = self.blueprints[inst.contract_type]
        selection = decode_action(a, bp, self.lib)
        report = self.evaluate_selection(selection)
        if self.phase is Phase.COMPILATION:
            reward = reward_phase1(report.compile, self.params)
        else:
            reward = reward_phase2(report, self.params, self.failed_test_mode)
        score = normalized_gas_score(report, self.params, self.failed_test_mode) if report.compile.success else None
        self._feedback = feedback_vector(report, self.functions, self.params)
        info = StepInfo(inst.id, inst.contract_type, selection, report, self.phase, score)
        return self._observe(), float(reward), True, info
