"""Snippet library and per-type blueprints.

The library is a JSON array of snippet records (or an object with ``symbols``
and ``snippets`` keys when symbols must be declared explicitly). The order in
which symbols first appear fixes their global index; the order of a symbol's
records fixes its variant indices. Variant 0 is the naive baseline.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .cdm import ContractType

VARIABLE = "variable"
FUNCTION = "function"
INLINE = "inline_literal"
CONSTRUCTOR = "constructor_param"


class LibraryError(Exception):
    pass


class DuplicateVariant(LibraryError):
    pass


class DanglingVariableReference(LibraryError):
    pass


class EmptyOptionSet(LibraryError):
    pass


class UnknownSymbol(LibraryError):
    pass


@dataclass(frozen=True)
class Symbol:
    name: str
    kind: str
    global_index: int


@dataclass(frozen=True)
class Snippet:
    symbol: Symbol
    variant_index: int
    template: str
    declared_solidity_type: str | None = None
    init_mode: str | None = None
    storage_slots: int = 0
    static_op_costs: dict = field(default_factory=dict, hash=False, compare=False)
    uses_variables: tuple[str, ...] = ()
    tags: tuple[str, ...] = ()

    @property
    def placeholder(self) -> str:
        return value_placeholder(self.symbol.name)


def value_placeholder(name: str) -> str:
    """``tradeDate`` -> ``<TRADE_DATE_VALUE>``."""
    snake = "".join("_" + c if c.isupper() else c.upper() for c in name)
    return f"<{snake}_VALUE>"


@dataclass(frozen=True)
class SnippetLibrary:
    symbols: tuple[Symbol, ...]
    options: dict  # symbol name -> tuple[Snippet, ...]
    digest: str = ""

    @property
    def n_symbols(self) -> int:
        return len(self.symbols)

    def symbol(self, name: str) -> Symbol:
        try:
            return self.options[name][0].symbol
        except KeyError:
            raise UnknownSymbol(name) from None

    def variants(self, name: str) -> tuple[Snippet, ...]:
        return self.options[name]

    def cardinality(self, name: str) -> int:
        return len(self.options[name])

    def variable_names(self) -> list[str]:
        return [s.name for s in self.symbols if s.kind == VARIABLE]

    def function_names(self) -> list[str]:
        return [s.name for s in self.symbols if s.kind == FUNCTION]


def _parse_records(doc) -> tuple[list[dict], list[dict]]:
    if isinstance(doc, list):
        return [], doc
    return doc.get("symbols", []), doc.get("snippets", [])


def build_library(doc) -> SnippetLibrary:
    declared, records = _parse_records(doc)
    order: list[tuple[str, str]] = [(s["name"], s["kind"]) for s in declared]
    grouped: dict[str, list[dict]] = {name: [] for name, _ in order}
    kinds = dict(order)
    for rec in records:
        name = rec["symbol"]
        if name not in grouped:
            grouped[name] = []
            kinds[name] = rec["kind"]
            order.append((name, rec["kind"]))
        elif kinds[name] != rec["kind"]:
            raise LibraryError(f"symbol {name!r} declared as both {kinds[name]} and {rec['kind']}")
        grouped[name].append(rec)

    variable_names = {n for n, k in order if k == VARIABLE}
    options = {}
    symbols = []
    for gi, (name, kind) in enumerate(order):
        recs = grouped[name]
        if not recs:
            raise EmptyOptionSet(f"symbol {name!r} has no snippets")
        seen = set()
        for r in recs:
            vi = r.get("variant_index")
            if vi in seen:
                raise DuplicateVariant(f"{name!r} variant {vi} appears twice")
            seen.add(vi)
        if sorted(seen) != list(range(len(recs))):
            raise LibraryError(f"{name!r} variant indices must be 0..{len(recs) - 1}")
        sym = Symbol(name, kind, gi)
        symbols.append(sym)
        snippets = []
        for r in sorted(recs, key=lambda r: r["variant_index"]):
            uses = tuple(r.get("uses_variables", ()))
            dangling = [u for u in uses if u not in variable_names]
            if dangling:
                raise DanglingVariableReference(f"{name!r} variant {r['variant_index']} uses unknown {dangling}")
            snippets.append(Snippet(
                symbol=sym,
                variant_index=r["variant_index"],
                template=r["template"],
                declared_solidity_type=r.get("declared_solidity_type"),
                init_mode=r.get("init_mode"),
                storage_slots=int(r.get("storage_slots", 1 if kind == VARIABLE else 0)),
                static_op_costs=dict(r.get("static_op_costs", {})),
                uses_variables=uses,
                tags=tuple(r.get("tags", ())),
            ))
        options[name] = tuple(snippets)
    canonical = json.dumps(doc, sort_keys=True).encode()
    return SnippetLibrary(tuple(symbols), options, hashlib.sha256(canonical).hexdigest()[:16])


def load_library(path: str | Path | None = None) -> SnippetLibrary:
    if path is None:
        text = (resources.files("gascraft") / "data" / "library.json").read_text()
    else:
        text = Path(path).read_text()
    return build_library(json.loads(text))


def action_space_shape(lib: SnippetLibrary) -> list[int]:
    return [len(lib.options[s.name]) for s in lib.symbols]


@dataclass(frozen=True)
class Blueprint:
    contract_type: ContractType
    required_symbols: tuple[str, ...]
    function_semantics: dict  # function symbol -> settlement rule id

    def variables(self, lib: SnippetLibrary) -> list[str]:
        return [s for s in self.required_symbols if lib.symbol(s).kind == VARIABLE]

    def functions(self, lib: SnippetLibrary) -> list[str]:
        return [s for s in self.required_symbols if lib.symbol(s).kind == FUNCTION]

    def selection_space(self, lib: SnippetLibrary) -> int:
        return math.prod(lib.cardinality(s) for s in self.required_symbols)


def build_blueprint(doc: dict, lib: SnippetLibrary) -> Blueprint:
    bp = Blueprint(
        ContractType(doc["contractType"]),
        tuple(doc["requiredSymbols"]),
        dict(doc.get("functionSemantics", {})),
    )
    if not bp.required_symbols:
        raise LibraryError(f"{bp.contract_type.value}: blueprint has no required symbols")
    for s in bp.required_symbols:
        lib.symbol(s)
    # global order keeps decode_action/assemble deterministic
    ordered = sorted(bp.required_symbols, key=lambda s: lib.symbol(s).global_index)
    if list(bp.required_symbols) != ordered:
        bp = Blueprint(bp.contract_type, tuple(ordered), bp.function_semantics)
    required_vars = set(bp.variables(lib))
    for fn in bp.functions(lib):
        if fn not in bp.function_semantics:
            raise LibraryError(f"{bp.contract_type.value}: no settlement rule for {fn!r}")
        for snip in lib.variants(fn):
            missing = set(snip.uses_variables) - required_vars
            if missing:
                raise DanglingVariableReference(
                    f"{bp.contract_type.value}: {fn!r} variant {snip.variant_index} uses {sorted(missing)} "
                    "outside the blueprint")
    return bp


def load_blueprints(directory: str | Path | None, lib: SnippetLibrary) -> dict[ContractType, Blueprint]:
    """Read every ``<ContractType>.json`` present in ``directory``."""
    if directory is None:
        root = resources.files("gascraft") / "data" / "blueprints"
        files = [(ct, root / f"{ct.value}.json") for ct in ContractType]
    else:
        files = [(ct, Path(directory) / f"{ct.value}.json") for ct in ContractType]
    out = {}
    for ct, f in files:
        if not f.is_file():
            continue
        bp = build_blueprint(json.loads(f.read_text()), lib)
        if bp.contract_type is not ct:
            raise LibraryError(f"{f} declares {bp.contract_type.value}")
        out[ct] = bp
    if not out:
        raise LibraryError(f"no blueprint files found in {directory}")
    return out


def blueprint_for(blueprints: dict[ContractType, Blueprint], ctype: ContractType | str) -> Blueprint:
    return blueprints[ContractType(ctype)]


def universal_functions(lib: SnippetLibrary, blueprints: dict[ContractType, Blueprint]) -> list[str]:
    """Union of blueprint function symbols, in global-index order."""
    names = {fn for bp in blueprints.values() for fn in bp.functions(lib)}
    return sorted(names, key=lambda n: lib.symbol(n).global_index)
