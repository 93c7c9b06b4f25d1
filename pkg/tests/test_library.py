import copy
import json

import pytest

from gascraft.cdm import ContractType
from gascraft.library import (
    DanglingVariableReference, DuplicateVariant, EmptyOptionSet, LibraryError, UnknownSymbol,
    action_space_shape, build_blueprint, build_library, universal_functions, value_placeholder,
)


def _records():
    return [
        {"symbol": "amount", "kind": "variable", "variant_index": 0,
         "template": "    uint256 public amount = <AMOUNT_VALUE>;", "declared_solidity_type": "uint256",
         "init_mode": "inline_literal"},
        {"symbol": "amount", "kind": "variable", "variant_index": 1,
         "template": "    uint64 public amount = <AMOUNT_VALUE>;", "declared_solidity_type": "uint64",
         "init_mode": "inline_literal"},
        {"symbol": "pay", "kind": "function", "variant_index": 0,
         "template": "    function pay() public {}", "uses_variables": ["amount"]},
    ]


def test_placeholder_spelling():
    assert value_placeholder("tradeDate") == "<TRADE_DATE_VALUE>"
    assert value_placeholder("rate") == "<RATE_VALUE>"


def test_global_order_follows_first_appearance():
    lib = build_library(_records())
    assert [s.name for s in lib.symbols] == ["amount", "pay"]
    assert [s.global_index for s in lib.symbols] == [0, 1]
    assert action_space_shape(lib) == [2, 1]
    assert lib.variants("amount")[1].declared_solidity_type == "uint64"
    assert lib.variants("amount")[0].storage_slots == 1
    assert lib.variants("pay")[0].storage_slots == 0


def test_digest_tracks_content():
    a = build_library(_records())
    recs = _records()
    recs[1]["template"] = recs[1]["template"].replace("uint64", "uint32")
    assert a.digest == build_library(_records()).digest
    assert a.digest != build_library(recs).digest


def test_library_errors():
    recs = _records()
    recs[1]["variant_index"] = 0
    with pytest.raises(DuplicateVariant):
        build_library(recs)
    recs = _records()
    recs[2]["uses_variables"] = ["missing"]
    with pytest.raises(DanglingVariableReference):
        build_library(recs)
    with pytest.raises(EmptyOptionSet):
        build_library({"symbols": [{"name": "ghost", "kind": "variable"}], "snippets": _records()})
    with pytest.raises(UnknownSymbol):
        build_library(_records()).symbol("ghost")
    recs = _records()
    recs[1]["variant_index"] = 5
    with pytest.raises(LibraryError):
        build_library(recs)


def test_blueprint_validation():
    lib = build_library(_records())
    bp = build_blueprint({"contractType": "EquitySwap", "requiredSymbols": ["pay", "amount"],
                          "functionSemantics": {"pay": "fixed-leg"}}, lib)
    assert bp.required_symbols == ("amount", "pay")
    assert bp.selection_space(lib) == 2
    with pytest.raises(DanglingVariableReference):
        build_blueprint({"contractType": "EquitySwap", "requiredSymbols": ["pay"],
                         "functionSemantics": {"pay": "fixed-leg"}}, lib)
    with pytest.raises(LibraryError):
        build_blueprint({"contractType": "EquitySwap", "requiredSymbols": ["amount", "pay"]}, lib)


def test_shipped_library_covers_every_type(lib, blueprints):
    assert set(blueprints) == set(ContractType)
    for bp in blueprints.values():
        assert bp.functions(lib)
        for s in bp.required_symbols:
            assert lib.cardinality(s) >= 1
        for fn in bp.functions(lib):
            assert fn in bp.function_semantics
    # the swaps have the richest option sets
    space = {ct: bp.selection_space(lib) for ct, bp in blueprints.items()}
    simple = max(space[ct] for ct in (ContractType.EquityOption, ContractType.CommodityOption,
                                      ContractType.ForeignExchange))
    assert min(space[ContractType.EquitySwap], space[ContractType.InterestRateSwap]) > simple


def test_variant_zero_is_naive(lib):
    for s in lib.symbols:
        assert "naive" in lib.variants(s.name)[0].tags


def test_mini_library_fits_enumeration(mini_lib, mini_blueprints):
    bp = mini_blueprints[ContractType.EquitySwap]
    assert bp.selection_space(mini_lib) <= 4096
    assert universal_functions(mini_lib, mini_blueprints) == ["settleFixedLeg", "settleFloatLeg"]
