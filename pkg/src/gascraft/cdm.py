"""CDM derivative instances: parsing, consistency checks, synthetic generation,
path mapping onto canonical contract variables, and feature extraction."""

from __future__ import annotations

import enum
import json
import functools
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

import numpy as np

N_FEATURES = 10

NUMERIC_KINDS = frozenset({"amount", "price", "rate", "date", "quantity"})
SEMANTIC_KINDS = NUMERIC_KINDS | {"party_address", "currency_code"}

CURRENCY_WHITELIST = ("USD", "EUR", "GBP", "JPY", "CHF", "CAD", "AUD", "CNY", "HKD", "SGD")

_ADDRESS_RE = re.compile(r"^0x[0-9a-fA-F]{40}$")
_PATH_TOKEN = re.compile(r"([^.\[\]]+)|\[(\d+)\]")


class ContractType(str, enum.Enum):
    InterestRateSwap = "InterestRateSwap"
    EquitySwap = "EquitySwap"
    EquityOption = "EquityOption"
    CommodityOption = "CommodityOption"
    ForeignExchange = "ForeignExchange"

    @property
    def index(self) -> int:
        return list(ContractType).index(self)

    @property
    def code(self) -> str:
        return _TYPE_CODES[self]


_TYPE_CODES = {
    ContractType.InterestRateSwap: "IRS",
    ContractType.EquitySwap: "ES",
    ContractType.EquityOption: "EO",
    ContractType.CommodityOption: "CO",
    ContractType.ForeignExchange: "FX",
}


class CdmError(Exception):
    pass


class MalformedDocument(CdmError):
    pass


class UnknownContractType(CdmError):
    pass


class MissingRequiredPath(CdmError):
    def __init__(self, paths: list[str]):
        super().__init__("missing required paths: " + ", ".join(paths))
        self.paths = paths


class UnresolvablePath(CdmError):
    def __init__(self, path: str):
        super().__init__(f"path does not resolve: {path}")
        self.path = path


@dataclass(frozen=True)
class VariableSpec:
    path: str
    name: str
    kind: str
    range: tuple[int, int] | None = None

    @property
    def numeric(self) -> bool:
        return self.kind in NUMERIC_KINDS


@dataclass(frozen=True)
class MappingSchema:
    contract_type: ContractType
    variables: tuple[VariableSpec, ...]

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate canonical names in {self.contract_type.value} schema")
        for v in self.variables:
            if v.kind not in SEMANTIC_KINDS:
                raise ValueError(f"unknown semantic kind {v.kind!r} for {v.name}")
            if v.numeric and (v.range is None or v.range[1] <= v.range[0]):
                raise ValueError(f"numeric variable {v.name} needs a range lo < hi")

    def by_kind(self, *kinds: str) -> list[VariableSpec]:
        return [v for v in self.variables if v.kind in kinds]

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    def to_dict(self) -> dict:
        return {
            "contractType": self.contract_type.value,
            "variables": [
                {"path": v.path, "name": v.name, "kind": v.kind,
                 "range": list(v.range) if v.range else None}
                for v in self.variables
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MappingSchema":
        ctype = ContractType(doc["contractType"])
        variables = tuple(
            VariableSpec(
                path=v["path"], name=v["name"], kind=v["kind"],
                range=tuple(v["range"]) if v.get("range") is not None else None,
            )
            for v in doc.get("variables", [])
        )
        return cls(ctype, variables)


def load_schema(path: str | Path) -> MappingSchema:
    with open(path) as f:
        return MappingSchema.from_dict(json.load(f))


@functools.lru_cache(maxsize=1)
def _shipped_schemas() -> dict[ContractType, MappingSchema]:
    root = resources.files("gascraft") / "data" / "schemas"
    out = {}
    for ctype in ContractType:
        doc = json.loads((root / f"{ctype.value}.json").read_text())
        out[ctype] = MappingSchema.from_dict(doc)
    return out


def default_schemas() -> dict[ContractType, MappingSchema]:
    """Schemas shipped with the package, one per contract type."""
    return dict(_shipped_schemas())


def load_schemas(directory: str | Path | None) -> dict[ContractType, MappingSchema]:
    if directory is None:
        return default_schemas()
    return {ct: load_schema(Path(directory) / f"{ct.value}.json") for ct in ContractType}


# -- field tree paths ---------------------------------------------------------

def _tokens(path: str) -> list[str | int]:
    out: list[str | int] = []
    for key, idx in _PATH_TOKEN.findall(path):
        out.append(int(idx) if idx else key)
    return out


_MISSING = object()


def resolve_path(tree: Any, path: str) -> Any:
    node = tree
    for tok in _tokens(path):
        if isinstance(tok, int):
            if not isinstance(node, list) or tok >= len(node):
                raise UnresolvablePath(path)
        elif not isinstance(node, dict) or tok not in node:
            raise UnresolvablePath(path)
        node = node[tok]
    return node


def set_path(tree: dict, path: str, value: Any) -> None:
    toks = _tokens(path)
    node: Any = tree
    for tok, nxt in zip(toks, toks[1:]):
        empty: Any = [] if isinstance(nxt, int) else {}
        if isinstance(tok, int):
            while len(node) <= tok:
                node.append(_MISSING)
            if node[tok] is _MISSING:
                node[tok] = empty
        else:
            node.setdefault(tok, empty)
        node = node[tok]
    last = toks[-1]
    if isinstance(last, int):
        while len(node) <= last:
            node.append(_MISSING)
    node[last] = value


def _has_path(tree: Any, path: str) -> bool:
    try:
        resolve_path(tree, path)
    except UnresolvablePath:
        return False
    return True


# -- instances ----------------------------------------------------------------

@dataclass(frozen=True)
class CdmInstance:
    contract_type: ContractType
    fields: dict = field(compare=True)
    id: str = ""

    def to_dict(self) -> dict:
        return {"contractType": self.contract_type.value, "fields": self.fields, "id": self.id}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def is_address(value: Any) -> bool:
    return isinstance(value, str) and bool(_ADDRESS_RE.match(value))


def _check_value(spec: VariableSpec, value: Any) -> str | None:
    if spec.numeric:
        if isinstance(value, bool) or not isinstance(value, int):
            return f"{spec.name}: expected integer, got {type(value).__name__}"
    elif spec.kind == "party_address":
        if not is_address(value):
            return f"{spec.name}: expected 0x-prefixed 20-byte hex address"
    elif not isinstance(value, str):
        return f"{spec.name}: expected text"
    return None


def parse_cdm(raw: str | bytes, schemas: dict[ContractType, MappingSchema] | None = None) -> CdmInstance:
    """Parse one CDM JSON document into an instance.

    The ``contractType`` discriminator selects the schema whose paths must all
    be present. Consistency rules are not applied here; see
    :func:`validate_consistency`.
    """
    try:
        doc = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedDocument(str(exc)) from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("fields"), dict):
        raise MalformedDocument("expected an object with a 'fields' object")
    try:
        ctype = ContractType(doc.get("contractType"))
    except ValueError:
        raise UnknownContractType(str(doc.get("contractType"))) from None
    schemas = schemas or default_schemas()
    schema = schemas[ctype]
    missing = [v.path for v in schema.variables if not _has_path(doc["fields"], v.path)]
    if missing:
        raise MissingRequiredPath(missing)
    for v in schema.variables:
        problem = _check_value(v, resolve_path(doc["fields"], v.path))
        if problem:
            raise MalformedDocument(problem)
    return CdmInstance(ctype, doc["fields"], str(doc.get("id", "")))


@dataclass(frozen=True)
class Violation:
    code: str
    variable: str
    message: str


def validate_consistency(inst: CdmInstance, schema: MappingSchema | None = None) -> list[Violation]:
    schema = schema or default_schemas()[inst.contract_type]
    values = {v.name: resolve_path(inst.fields, v.path) for v in schema.variables}
    out: list[Violation] = []

    dates = schema.by_kind("date")
    for d in dates:
        if values[d.name] <= 0:
            out.append(Violation("InvalidDate", d.name, "dates must be positive unix seconds"))
    if dates and dates[0].name == "tradeDate":
        trade = values["tradeDate"]
        for d in dates[1:]:
            if values[d.name] < trade:
                out.append(Violation("DateOrderViolation", d.name, f"{d.name} precedes tradeDate"))

    for v in schema.by_kind("amount", "price", "rate", "quantity"):
        if values[v.name] < 0:
            out.append(Violation("NegativeValue", v.name, "values are non-negative minor units"))
    for v in schema.by_kind("amount"):
        if values[v.name] <= 0:
            out.append(Violation("NonPositiveNotional", v.name, f"{v.name} must be > 0"))

    parties = schema.by_kind("party_address")
    seen: dict[str, str] = {}
    for p in parties:
        addr = values[p.name].lower()
        if addr in seen:
            out.append(Violation("PartyCollision", p.name, f"{p.name} equals {seen[addr]}"))
        else:
            seen[addr] = p.name

    currencies = schema.by_kind("currency_code")
    for c in currencies:
        if values[c.name] not in CURRENCY_WHITELIST:
            out.append(Violation("UnknownCurrency", c.name, f"{values[c.name]!r} not whitelisted"))
    if len(currencies) == 2 and values[currencies[0].name] == values[currencies[1].name]:
        out.append(Violation("CurrencyPairCollision", currencies[1].name, "base and quote currency coincide"))
    return out


def _draw(spec: VariableSpec, rng: np.random.Generator) -> Any:
    if spec.numeric:
        lo, hi = spec.range
        return int(rng.integers(lo, hi, endpoint=True))
    if spec.kind == "party_address":
        return "0x" + rng.bytes(20).hex()
    return str(CURRENCY_WHITELIST[int(rng.integers(len(CURRENCY_WHITELIST)))])


def generate_dataset(schema: MappingSchema, ctype: ContractType | str, count: int, seed: int) -> list[CdmInstance]:
    """Draw ``count`` consistent instances; fields are uniform over schema ranges.

    Candidates violating a consistency rule are redrawn whole, so every
    returned instance passes :func:`validate_consistency`.
    """
    ctype = ContractType(ctype)
    if count < 1:
        raise ValueError("count must be >= 1")
    if schema.contract_type is not ctype:
        raise ValueError(f"schema is for {schema.contract_type.value}, not {ctype.value}")
    rng = np.random.default_rng([seed & (2**64 - 1), ctype.index])
    out = []
    for i in range(count):
        while True:
            tree: dict = {}
            for v in schema.variables:
                set_path(tree, v.path, _draw(v, rng))
            inst = CdmInstance(ctype, tree, f"{ctype.code}-{seed}-{i:06d}")
            if not validate_consistency(inst, schema):
                break
        out.append(inst)
    return out


@dataclass(frozen=True)
class VariableBindings:
    contract_type: ContractType
    values: dict[str, Any]

    def __getitem__(self, name: str) -> Any:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values


def apply_mapping(inst: CdmInstance, schema: MappingSchema) -> VariableBindings:
    values = {v.name: resolve_path(inst.fields, v.path) for v in schema.variables}
    return VariableBindings(inst.contract_type, values)


def extract_features(bindings: VariableBindings, schema: MappingSchema) -> np.ndarray:
    feats = []
    for v in schema.variables:
        if not v.numeric:
            continue
        lo, hi = v.range
        feats.append(min(max((bindings[v.name] - lo) / (hi - lo), 0.0), 1.0))
    out = np.zeros(N_FEATURES)
    take = feats[:N_FEATURES]
    out[: len(take)] = take
    return out


def write_instance_files(instances: Iterable[CdmInstance], directory: str | Path) -> list[Path]:
    """One ``<id>.json`` document per instance."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for inst in instances:
        p = directory / f"{inst.id}.json"
        p.write_text(json.dumps(inst.to_dict(), sort_keys=True, indent=1) + "\n")
        paths.append(p)
    return paths


def read_instance_files(directory: str | Path, schemas: dict[ContractType, MappingSchema] | None = None) -> list[CdmInstance]:
    schemas = schemas or default_schemas()
    return [parse_cdm(p.read_bytes(), schemas) for p in sorted(Path(directory).glob("*.json"))]
