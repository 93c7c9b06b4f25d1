from fractions import Fraction

import pytest

from gascraft.cdm import ContractType, VariableBindings
from gascraft.evaluation import (
    CompileError, CompileResult, EvaluationReport, FunctionResult, GasModel, UnknownSettlementRule,
    _pack_slots, dedupe, evaluate, gas_deploy, oracle_expected_state, simulate, static_check,
)
from gascraft.library import Blueprint
from gascraft.solidity import WIDTH_CONFLICT, parse_type
from gascraft.synthesizer import SnippetSelection, assemble

P1, P2 = "0x" + "11" * 20, "0x" + "22" * 20
ES = dict(tradeDate=1_700_000_000, terminationDate=1_731_536_000, fixedNotional=5_000_000, fixedDividend=250,
          startPrice=10_000, endPrice=12_500, numberOfShares=300, fixedPayer=P1, equityPayer=P2, currency="USD")


def es(**over):
    return VariableBindings(ContractType.EquitySwap, dict(ES, **over))


def sel(bp, **choices):
    return SnippetSelection(bp.contract_type, tuple((s, choices.get(s, 0)) for s in bp.required_symbols))


@pytest.fixture
def es_bp(blueprints):
    return blueprints[ContractType.EquitySwap]


def run(lib, bp, b, model, **choices):
    return evaluate(assemble(sel(bp, **choices), b, lib, bp), bp, b, model)


def test_gas_model_rejects_bad_costs():
    with pytest.raises(ValueError):
        GasModel(storage_read=0)
    with pytest.raises(ValueError):
        GasModel(memory_op=2.5)
    assert GasModel().price({"storage_read": 2, "arith_op": 3}) == 2 * 2100 + 3 * 5


def test_oracle_equity_swap_by_hand(es_bp):
    # fixed leg: 5,000,000 * 250 bps = 125,000 from fixedPayer to equityPayer
    # equity leg: price up 2,500 on 300 shares = 750,000 from equityPayer to fixedPayer
    exp = oracle_expected_state(es_bp, es()).functions
    assert exp["settleFixedLeg"].deltas == {P1: -125_000, P2: 125_000}
    assert exp["settleFloatLeg"].deltas == {P2: -750_000, P1: 750_000}
    down = oracle_expected_state(es_bp, es(endPrice=9_000)).functions["settleFloatLeg"]
    assert down.deltas == {P1: -300_000, P2: 300_000}
    flat = oracle_expected_state(es_bp, es(endPrice=10_000)).functions["settleFloatLeg"]
    assert flat.deltas == {} and not flat.reverted


def test_oracle_other_rules(blueprints):
    irs = VariableBindings(ContractType.InterestRateSwap, dict(
        tradeDate=0, terminationDate=31_536_000, notional=1_000_000, fixedRate=300, floatingRate=150,
        fixedRatePayer=P1, floatingRatePayer=P2, currency="EUR"))
    exp = oracle_expected_state(blueprints[ContractType.InterestRateSwap], irs).functions
    assert exp["settleFixedRateLeg"].deltas == {P1: -30_000, P2: 30_000}
    assert exp["settleFloatingRateLeg"].deltas == {P2: -15_000, P1: 15_000}
    backwards = VariableBindings(ContractType.InterestRateSwap, dict(irs.values, terminationDate=-1))
    assert oracle_expected_state(blueprints[ContractType.InterestRateSwap], backwards) \
        .functions["settleFixedRateLeg"].reverted

    fx = VariableBindings(ContractType.ForeignExchange, dict(
        tradeDate=0, valueDate=1, baseNotional=2_000_000, forwardRate=1_100_000, fixingRate=1_050_000,
        buyer=P1, seller=P2, baseCurrency="EUR", quoteCurrency="USD"))
    # rate fell 0.05: buyer pays 2,000,000 * 0.05
    assert oracle_expected_state(blueprints[ContractType.ForeignExchange], fx) \
        .functions["settleFxForward"].deltas == {P1: -100_000, P2: 100_000}

    co = VariableBindings(ContractType.CommodityOption, dict(
        tradeDate=0, expiryDate=1, strikePrice=80, settlementPrice=70, quantity=5, premium=9,
        buyer=P1, seller=P2, currency="USD"))
    exp = oracle_expected_state(blueprints[ContractType.CommodityOption], co).functions
    assert exp["settleCommodityOption"].deltas == {P2: -50, P1: 50}
    assert exp["payPremium"].deltas == {P1: -9, P2: 9}


def test_unknown_rule():
    bp = Blueprint(ContractType.EquitySwap, ("x",), {"x": "barrier-knockout"})
    with pytest.raises(UnknownSettlementRule):
        oracle_expected_state(bp, es())


def test_naive_contract_passes(lib, es_bp, model):
    r = run(lib, es_bp, es(), model)
    assert r.compile.success and r.all_passed
    assert r.trace.functions["settleFixedLeg"].deltas == {P1: -125_000, P2: 125_000}
    assert r.func_gas_avg == Fraction(41641 + 45834, 2)


# golden numbers, built-in gas model gm-1, bindings ES above
def test_narrower_trade_date_lowers_deploy_gas(lib, es_bp, model):
    wide = assemble(sel(es_bp, tradeDate=1), es(), lib, es_bp)
    narrow = assemble(sel(es_bp, tradeDate=2), es(), lib, es_bp)
    assert "uint128 public tradeDate" in wide.source and "uint64 public tradeDate" in narrow.source
    assert gas_deploy(wide, model) == 589_800
    assert gas_deploy(narrow, model) == 589_600
    # independent: 7 full-width numbers, 2 addresses that cannot share, 1 string = 10 slots
    for c in (wide, narrow):
        assert gas_deploy(c, model) == 32_000 + 22_100 * 10 + 200 * len(c.source.encode())


def test_single_computation_fixed_leg_is_cheaper(lib, es_bp, model):
    redundant = run(lib, es_bp, es(), model, settleFixedLeg=0)
    single = run(lib, es_bp, es(), model, settleFixedLeg=1)
    assert redundant.by_name()["settleFixedLeg"].gas == 41_641
    assert single.by_name()["settleFixedLeg"].gas == 22_663
    assert redundant.trace.functions["settleFixedLeg"].deltas == single.trace.functions["settleFixedLeg"].deltas
    assert single.all_passed


def test_ternary_matches_if_else(lib, es_bp, model):
    a = run(lib, es_bp, es(), model, settleFloatLeg=1)
    b = run(lib, es_bp, es(), model, settleFloatLeg=2)
    assert a.trace.functions["settleFloatLeg"].deltas == b.trace.functions["settleFloatLeg"].deltas
    assert (a.by_name()["settleFloatLeg"].gas, b.by_name()["settleFloatLeg"].gas) == (33_188, 33_185)


def test_constructor_overflow_fails_only_the_reader(lib, es_bp, model):
    # uint64 constructor slot: 2**64 + 1000 wraps to 1000
    r = run(lib, es_bp, es(fixedNotional=2**64 + 1000), model, fixedNotional=3)
    t = r.trace.functions["settleFixedLeg"]
    assert t.overflow and t.deltas == {P1: -25, P2: 25}
    assert r.by_name() == {"settleFixedLeg": FunctionResult("settleFixedLeg", False, t.gas),
                           "settleFloatLeg": r.by_name()["settleFloatLeg"]}
    assert r.by_name()["settleFloatLeg"].passed


def test_truncating_cast_compiles_but_fails(lib, es_bp, model):
    small = run(lib, es_bp, es(), model, settleFixedLeg=5)
    assert small.all_passed
    big = run(lib, es_bp, es(fixedNotional=10**12, fixedDividend=2000), model, settleFixedLeg=5)
    assert big.compile.success
    assert not big.by_name()["settleFixedLeg"].passed
    # uint32(...) truncates without reverting; the lost bits count as overflow
    t = big.trace.functions["settleFixedLeg"]
    assert t.overflow and not t.reverted


def test_type_errors_are_attributed(lib, es_bp):
    c = assemble(sel(es_bp, fixedPayer=3), es(), lib, es_bp)
    errors = static_check(c).errors
    assert {e.symbol for e in errors} == {"settleFixedLeg", "settleFloatLeg"}
    with pytest.raises(ValueError):
        simulate(c, es(), GasModel())
    r = evaluate(c, es_bp, es(), GasModel())
    assert not r.compile.success and r.functions == []


def test_dedupe_keys_on_class_and_symbol():
    errs = [CompileError(WIDTH_CONFLICT, "a", "x"), CompileError(WIDTH_CONFLICT, "b", "x"),
            CompileError(WIDTH_CONFLICT, "a", "y")]
    assert CompileResult(dedupe(errs)).n_errors == 2


@pytest.mark.parametrize("types,slots", [
    (["uint128", "uint128"], 1),
    (["uint128", "uint256"], 2),
    (["address", "uint64", "uint32"], 1),
    (["address", "address"], 2),
    (["uint8", "string", "uint8"], 3),
    (["bytes3", "bool", "uint64", "address"], 1),
    (["bytes3", "bool", "uint64", "address", "bool"], 2),
])
def test_slot_packing(types, slots):
    assert _pack_slots([parse_type(t) for t in types]) == slots

