"""Regenerate the shipped snippet library and blueprints.

    python tools/author_library.py

Writes src/gascraft/data/library.json, data/blueprints/*.json and the
miniature EquitySwap library under data/mini/. The JSON files are the
artifacts the package reads; this script only keeps them consistent.
"""

import json
from pathlib import Path

from gascraft.solidity import parse_function, referenced_names

DATA = Path(__file__).resolve().parents[1] / "src" / "gascraft" / "data"

I, C = "inline_literal", "constructor_param"
DISPATCH = {"compare_op": 1, "branch_op": 1, "memory_op": 2}

FAMILIES = {
    "date": [("uint256", I), ("uint128", I), ("uint64", I), ("uint64", C), ("uint32", I), ("int64", I)],
    "amount": [("uint256", I), ("uint128", I), ("uint64", I), ("uint64", C), ("uint32", I), ("int128", I)],
    "rate": [("uint256", I), ("uint64", I), ("uint32", C), ("uint16", I), ("int32", I)],
    "price": [("uint256", I), ("uint128", I), ("uint64", I), ("uint64", C), ("int64", I)],
    "quantity": [("uint256", I), ("uint64", I), ("uint32", I), ("uint32", C), ("int32", I)],
    "party_address": [("address", I), ("address", C), ("bytes20", I), ("string", I)],
    "currency_code": [("string", I), ("bytes32", I), ("bytes3", I), ("string", C)],
}

# option-type variables get fewer gas-differentiated choices
NARROW_FAMILIES = {
    "date": [("uint256", I), ("uint128", I), ("uint256", C), ("int256", I)],
    "amount": [("uint256", I), ("uint128", I), ("uint256", C), ("int256", I)],
    "price": [("uint256", I), ("uint128", I), ("uint256", C), ("int256", I)],
    "quantity": [("uint256", I), ("uint128", I), ("uint256", C), ("int256", I)],
    "rate": [("uint256", I), ("uint128", I), ("uint256", C), ("int256", I)],
}

VARIABLES = [
    ("tradeDate", "date", FAMILIES), ("terminationDate", "date", FAMILIES),
    ("expiryDate", "date", NARROW_FAMILIES), ("valueDate", "date", NARROW_FAMILIES),
    ("notional", "amount", FAMILIES), ("fixedNotional", "amount", FAMILIES),
    ("baseNotional", "amount", NARROW_FAMILIES), ("premium", "amount", NARROW_FAMILIES),
    ("fixedRate", "rate", FAMILIES), ("floatingRate", "rate", FAMILIES), ("fixedDividend", "rate", FAMILIES),
    ("forwardRate", "rate", NARROW_FAMILIES), ("fixingRate", "rate", NARROW_FAMILIES),
    ("startPrice", "price", FAMILIES), ("endPrice", "price", FAMILIES),
    ("strikePrice", "price", NARROW_FAMILIES), ("settlementPrice", "price", NARROW_FAMILIES),
    ("numberOfShares", "quantity", FAMILIES), ("quantity", "quantity", NARROW_FAMILIES),
    ("fixedRatePayer", "party_address", FAMILIES), ("floatingRatePayer", "party_address", FAMILIES),
    ("fixedPayer", "party_address", FAMILIES), ("equityPayer", "party_address", FAMILIES),
    ("buyer", "party_address", FAMILIES), ("seller", "party_address", FAMILIES),
    ("currency", "currency_code", FAMILIES), ("baseCurrency", "currency_code", FAMILIES),
    ("quoteCurrency", "currency_code", FAMILIES),
]


def fn(name, *body):
    lines = [f"    function {name}() public {{"] + ["        " + b for b in body] + ["    }"]
    return "\n".join(lines)


def nest(*lines):
    return list(lines)


def _if(cond, then, other):
    out = [f"if ({cond}) {{"] + ["    " + t for t in then] + ["} else {"] + ["    " + o for o in other] + ["}"]
    return out


def transfer(payer, receiver, amount):
    return [f"balances[{payer}] -= {amount};", f"balances[{receiver}] += {amount};"]


FUNCTIONS = {}

FUNCTIONS["settleFixedLeg"] = [
    (["naive", "redundant", "guarded"], fn("settleFixedLeg",
        "require(fixedNotional > 0);",
        "require(fixedDividend <= 10000);",
        "require(fixedPayer != equityPayer);",
        "require(uint256(fixedNotional) * fixedDividend / 10000 <= uint256(fixedNotional));",
        *transfer("fixedPayer", "equityPayer", "int256(uint256(fixedNotional) * fixedDividend / 10000)"))),
    (["single"], fn("settleFixedLeg",
        "uint256 amount = uint256(fixedNotional) * fixedDividend / 10000;",
        *transfer("fixedPayer", "equityPayer", "int256(amount)"))),
    (["single", "signed"], fn("settleFixedLeg",
        "int256 amount = int256(uint256(fixedNotional) * fixedDividend / 10000);",
        *transfer("fixedPayer", "equityPayer", "amount"))),
    (["trap", "narrow-local"], fn("settleFixedLeg",
        "uint64 amount = uint256(fixedNotional) * fixedDividend / 10000;",
        *transfer("fixedPayer", "equityPayer", "int256(uint256(amount))"))),
    (["single", "uncast"], fn("settleFixedLeg",
        "uint256 amount = fixedNotional * fixedDividend / 10000;",
        *transfer("fixedPayer", "equityPayer", "int256(amount)"))),
    (["trap", "truncating-cast"], fn("settleFixedLeg",
        "uint32 amount = uint32(uint256(fixedNotional) * fixedDividend / 10000);",
        *transfer("fixedPayer", "equityPayer", "int256(uint256(amount))"))),
]

_PERF = "uint256({a} - {b}) * numberOfShares"
FUNCTIONS["settleFloatLeg"] = [
    (["naive", "redundant", "guarded", "if-else"], fn("settleFloatLeg",
        "require(startPrice > 0);",
        "require(endPrice > 0);",
        "require(numberOfShares > 0);",
        "require(fixedPayer != equityPayer);",
        *_if(
        "endPrice > startPrice",
        transfer("equityPayer", "fixedPayer", "int256(" + _PERF.format(a="endPrice", b="startPrice") + ")"),
        transfer("fixedPayer", "equityPayer", "int256(" + _PERF.format(a="startPrice", b="endPrice") + ")")))),
    (["if-else"], fn("settleFloatLeg",
        "uint256 diff;",
        *_if("endPrice > startPrice", ["diff = endPrice - startPrice;"], ["diff = startPrice - endPrice;"]),
        "int256 amount = int256(diff * numberOfShares);",
        *_if("endPrice > startPrice", transfer("equityPayer", "fixedPayer", "amount"),
             transfer("fixedPayer", "equityPayer", "amount")))),
    (["ternary"], fn("settleFloatLeg",
        "uint256 diff = endPrice > startPrice ? endPrice - startPrice : startPrice - endPrice;",
        "int256 amount = int256(diff * numberOfShares);",
        *_if("endPrice > startPrice", transfer("equityPayer", "fixedPayer", "amount"),
             transfer("fixedPayer", "equityPayer", "amount")))),
    (["signed", "single"], fn("settleFloatLeg",
        "int256 move = int256(uint256(endPrice)) - int256(uint256(startPrice));",
        "int256 amount = move * int256(uint256(numberOfShares));",
        *transfer("equityPayer", "fixedPayer", "amount"))),
    (["trap", "unsigned-underflow"], fn("settleFloatLeg",
        "uint256 amount = (endPrice - startPrice) * numberOfShares;",
        *transfer("equityPayer", "fixedPayer", "int256(amount)"))),
    (["signed", "uncast"], fn("settleFloatLeg",
        "int256 amount = (int256(endPrice) - int256(startPrice)) * int256(numberOfShares);",
        *transfer("equityPayer", "fixedPayer", "amount"))),
    (["ternary", "uncast"], fn("settleFloatLeg",
        "uint256 amount = (endPrice > startPrice ? endPrice - startPrice : startPrice - endPrice) * numberOfShares;",
        *_if("endPrice > startPrice", transfer("equityPayer", "fixedPayer", "int256(amount)"),
             transfer("fixedPayer", "equityPayer", "int256(amount)")))),
]

YEAR_BPS = "315360000000"


def _irs(name, rate, payer, receiver):
    accrual = f"uint256(notional) * {rate} * (terminationDate - tradeDate) / {YEAR_BPS}"
    return [
        (["naive", "redundant", "guarded"], fn(name,
            "require(notional > 0);",
            f"require({rate} > 0);",
            f"require({payer} != {receiver});",
            "require(terminationDate >= tradeDate);",
            *transfer(payer, receiver, f"int256({accrual})"))),
        (["single", "guarded"], fn(name,
            "require(terminationDate >= tradeDate);",
            "uint256 period = terminationDate - tradeDate;",
            f"uint256 amount = uint256(notional) * {rate} * period / {YEAR_BPS};",
            *transfer(payer, receiver, "int256(amount)"))),
        (["single", "cached-reads", "guarded"], fn(name,
            "uint256 startTs = tradeDate;",
            "uint256 endTs = terminationDate;",
            "require(endTs >= startTs);",
            f"uint256 amount = uint256(notional) * {rate} * (endTs - startTs) / {YEAR_BPS};",
            *transfer(payer, receiver, "int256(amount)"))),
        (["single"], fn(name,
            f"uint256 amount = {accrual};",
            *transfer(payer, receiver, "int256(amount)"))),
        (["single", "uncast"], fn(name,
            f"uint256 amount = notional * {rate} * (terminationDate - tradeDate) / {YEAR_BPS};",
            *transfer(payer, receiver, "int256(amount)"))),
        (["trap", "narrow-local"], fn(name,
            f"uint64 amount = {accrual};",
            *transfer(payer, receiver, "int256(uint256(amount))"))),
        (["trap", "truncating-cast"], fn(name,
            f"uint32 amount = uint32({accrual});",
            *transfer(payer, receiver, "int256(uint256(amount))"))),
    ]


FUNCTIONS["settleFixedRateLeg"] = _irs("settleFixedRateLeg", "fixedRate", "fixedRatePayer", "floatingRatePayer")
FUNCTIONS["settleFloatingRateLeg"] = _irs("settleFloatingRateLeg", "floatingRate", "floatingRatePayer", "fixedRatePayer")


def _option(name, qty, call):
    a, b = ("settlementPrice", "strikePrice") if call else ("strikePrice", "settlementPrice")
    payoff = f"uint256({a} - {b}) * {qty}"
    return [
        (["naive", "if-else"], fn(name,
            "uint256 payoff;",
            *_if(f"{a} > {b}", [f"payoff = {payoff};"], ["payoff = 0;"]),
            *transfer("seller", "buyer", "int256(payoff)"))),
        (["ternary"], fn(name,
            f"uint256 payoff = {a} > {b} ? {payoff} : 0;",
            *transfer("seller", "buyer", "int256(payoff)"))),
        (["trap", "signed-local"], fn(name,
            f"int256 payoff = {a} > {b} ? {payoff} : 0;",
            *transfer("seller", "buyer", "payoff"))),
    ]


FUNCTIONS["settleEquityOption"] = _option("settleEquityOption", "numberOfShares", call=True)
FUNCTIONS["settleCommodityOption"] = _option("settleCommodityOption", "quantity", call=False)

FUNCTIONS["payPremium"] = [
    (["naive", "redundant"], fn("payPremium", *transfer("buyer", "seller", "int256(uint256(premium))"))),
    (["single"], fn("payPremium", "int256 amount = int256(uint256(premium));", *transfer("buyer", "seller", "amount"))),
    (["trap", "shadowing"], fn("payPremium", "int256 premium = int256(uint256(premium));",
                               *transfer("buyer", "seller", "premium"))),
]

_FX = "uint256(baseNotional) * ({a} - {b}) / 1000000"
FUNCTIONS["settleFxForward"] = [
    (["naive", "redundant", "if-else"], fn("settleFxForward", *_if(
        "fixingRate > forwardRate",
        transfer("seller", "buyer", "int256(" + _FX.format(a="fixingRate", b="forwardRate") + ")"),
        transfer("buyer", "seller", "int256(" + _FX.format(a="forwardRate", b="fixingRate") + ")")))),
    (["ternary"], fn("settleFxForward",
        "uint256 diff = fixingRate > forwardRate ? fixingRate - forwardRate : forwardRate - fixingRate;",
        "int256 amount = int256(uint256(baseNotional) * diff / 1000000);",
        *_if("fixingRate > forwardRate", transfer("seller", "buyer", "amount"),
             transfer("buyer", "seller", "amount")))),
    (["signed", "single"], fn("settleFxForward",
        "int256 move = int256(uint256(fixingRate)) - int256(uint256(forwardRate));",
        "int256 amount = int256(uint256(baseNotional)) * move / 1000000;",
        *transfer("seller", "buyer", "amount"))),
    (["trap", "signed-mix"], fn("settleFxForward",
        "int256 amount = baseNotional * (int256(fixingRate) - int256(forwardRate)) / 1000000;",
        *transfer("seller", "buyer", "amount"))),
]

BLUEPRINTS = {
    "InterestRateSwap": (
        ["tradeDate", "terminationDate", "notional", "fixedRate", "floatingRate", "fixedRatePayer",
         "floatingRatePayer", "currency"],
        {"settleFixedRateLeg": "irs-fixed-leg", "settleFloatingRateLeg": "irs-float-leg"}),
    "EquitySwap": (
        ["tradeDate", "terminationDate", "fixedNotional", "fixedDividend", "startPrice", "endPrice",
         "numberOfShares", "fixedPayer", "equityPayer", "currency"],
        {"settleFixedLeg": "fixed-leg", "settleFloatLeg": "equity-performance-leg"}),
    "EquityOption": (
        ["tradeDate", "expiryDate", "strikePrice", "settlementPrice", "numberOfShares", "premium", "buyer",
         "seller", "currency"],
        {"settleEquityOption": "option-call-payoff", "payPremium": "premium-payment"}),
    "CommodityOption": (
        ["tradeDate", "expiryDate", "strikePrice", "settlementPrice", "quantity", "premium", "buyer", "seller",
         "currency"],
        {"settleCommodityOption": "option-put-payoff", "payPremium": "premium-payment"}),
    "ForeignExchange": (
        ["tradeDate", "valueDate", "baseNotional", "forwardRate", "fixingRate", "buyer", "seller",
         "baseCurrency", "quoteCurrency"],
        {"settleFxForward": "fx-forward-settlement"}),
}

# miniature EquitySwap config: variant picks by index into the full option sets
MINI_VARIABLES = {
    "fixedNotional": [("uint256", I), ("uint64", I), ("uint64", C)],
    "fixedDividend": [("uint256", C), ("uint32", I), ("int32", I)],
    "startPrice": [("uint256", I), ("uint64", C)],
    "endPrice": [("uint256", C), ("uint64", I)],
    "numberOfShares": [("uint256", I), ("uint32", C)],
    "fixedPayer": [("address", I), ("bytes20", I)],
    "equityPayer": [("address", I), ("bytes20", I)],
}
MINI_FUNCTIONS = {"settleFixedLeg": [0, 1, 5], "settleFloatLeg": [0, 2, 3, 4]}


def var_template(name, typ, mode):
    if mode == I:
        from gascraft.library import value_placeholder
        return f"    {typ} public {name} = {value_placeholder(name)};"
    return f"    {typ} public {name};"


def var_records(name, variants):
    return [
        {"symbol": name, "kind": "variable", "variant_index": i, "template": var_template(name, t, m),
         "declared_solidity_type": t, "init_mode": m, "storage_slots": 1, "static_op_costs": {},
         "uses_variables": [], "tags": ["naive"] if i == 0 else []}
        for i, (t, m) in enumerate(variants)
    ]


def fn_records(name, variants):
    out = []
    for i, (tags, template) in enumerate(variants):
        uses = sorted(referenced_names(parse_function(template)))
        out.append({"symbol": name, "kind": "function", "variant_index": i, "template": template,
                    "declared_solidity_type": None, "init_mode": None, "storage_slots": 0,
                    "static_op_costs": DISPATCH, "uses_variables": uses, "tags": tags})
    return out


def dump(obj, path):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1) + "\n")


def main():
    records = []
    for name, kind, families in VARIABLES:
        records += var_records(name, families[kind])
    fn_order = ["settleFixedLeg", "settleFloatLeg", "settleFixedRateLeg", "settleFloatingRateLeg",
                "settleEquityOption", "payPremium", "settleCommodityOption", "settleFxForward"]
    for name in fn_order:
        records += fn_records(name, FUNCTIONS[name])
    dump(records, DATA / "library.json")
    for ctype, (variables, functions) in BLUEPRINTS.items():
        dump({"contractType": ctype, "requiredSymbols": variables + list(functions),
              "functionSemantics": functions}, DATA / "blueprints" / f"{ctype}.json")

    mini = []
    for name, variants in MINI_VARIABLES.items():
        mini += var_records(name, variants)
    for name, picks in MINI_FUNCTIONS.items():
        mini += fn_records(name, [FUNCTIONS[name][i] for i in picks])
    dump(mini, DATA / "mini" / "library.json")
    dump({"contractType": "EquitySwap",
          "requiredSymbols": list(MINI_VARIABLES) + list(MINI_FUNCTIONS),
          "functionSemantics": {"settleFixedLeg": "fixed-leg", "settleFloatLeg": "equity-performance-leg"}},
         DATA / "mini" / "blueprints" / "EquitySwap.json")


if __name__ == "__main__":
    main()
