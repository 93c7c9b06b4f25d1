"""Render a Solidity source unit from a snippet selection and CDM bindings."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .cdm import ContractType, VariableBindings, is_address
from .library import CONSTRUCTOR, FUNCTION, INLINE, Blueprint, Snippet, SnippetLibrary
from .solidity import parse_type

HEADER = "// SPDX-License-Identifier: UNLICENSED\npragma solidity ^0.8.20;\n"
BALANCES_FRAGMENT = "    mapping(address => int256) public balances;"

_PLACEHOLDER = re.compile(r"<[A-Z0-9_]+_VALUE>")


class SynthesisError(Exception):
    pass


class MissingSelection(SynthesisError):
    pass


class RenderError(SynthesisError):
    """Carries every offending symbol as ``(error_class, symbol, message)``."""

    def __init__(self, problems: list[tuple[str, str, str]]):
        super().__init__("; ".join(f"{s}: {m}" for _, s, m in problems))
        self.problems = problems


class LiteralOverflow(RenderError):
    pass


class ValueTypeMismatch(RenderError):
    pass


@dataclass(frozen=True)
class SnippetSelection:
    contract_type: ContractType
    choices: tuple[tuple[str, int], ...]  # (symbol, variant index) in blueprint order

    def as_dict(self) -> dict[str, int]:
        return dict(self.choices)

    def digest(self) -> str:
        payload = json.dumps([self.contract_type.value, list(self.choices)]).encode()
        return hashlib.sha256(payload).hexdigest()[:12]


@dataclass(frozen=True)
class RenderedFragment:
    symbol: str
    snippet: Snippet
    text: str


@dataclass(frozen=True)
class AssembledContract:
    contract_type: ContractType
    source: str
    constructor_params: tuple[tuple[str, str, Any], ...]
    selection: SnippetSelection
    fragments: tuple[RenderedFragment, ...]
    balances_fragment: str = BALANCES_FRAGMENT

    @property
    def variable_fragments(self) -> list[RenderedFragment]:
        return [f for f in self.fragments if f.snippet.symbol.kind != FUNCTION]

    @property
    def function_fragments(self) -> list[RenderedFragment]:
        return [f for f in self.fragments if f.snippet.symbol.kind == FUNCTION]

    def digest(self) -> str:
        return hashlib.sha256(self.source.encode()).hexdigest()


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'


def format_value(value: Any, solidity_type: str) -> str:
    """Render a bound CDM value as a literal of ``solidity_type``."""
    t = parse_type(solidity_type)
    if t is None:
        raise ValueTypeMismatch([("TypeMismatch", "", f"unknown Solidity type {solidity_type!r}")])
    if isinstance(value, int) and not isinstance(value, bool):
        if not t.numeric:
            raise ValueTypeMismatch([("TypeMismatch", "", f"integer {value} is not a {solidity_type} value")])
        if not t.fits(value):
            raise LiteralOverflow([("WidthConflict", "", f"{value} does not fit {solidity_type}")])
        return str(value)
    if not isinstance(value, str):
        raise ValueTypeMismatch([("TypeMismatch", "", f"cannot format {type(value).__name__}")])
    if is_address(value):
        if t.kind == "address" or (t.kind == "bytes" and t.bits == 160):
            return "0x" + value[2:].lower()
        if t.kind == "string":
            return _quote(value.lower())
        raise ValueTypeMismatch([("TypeMismatch", "", f"address is not a {solidity_type} value")])
    if t.kind == "string":
        return _quote(value)
    if t.kind == "bytes":
        if len(value.encode()) > t.bits // 8:
            raise LiteralOverflow([("WidthConflict", "", f"{value!r} does not fit {solidity_type}")])
        return _quote(value)
    raise ValueTypeMismatch([("TypeMismatch", "", f"text is not a {solidity_type} value")])


def _check_kind(value: Any, solidity_type: str) -> None:
    """Constructor arguments skip the width check but not the kind check."""
    t = parse_type(solidity_type)
    if isinstance(value, int) and not isinstance(value, bool):
        ok = t is not None and t.numeric
    elif is_address(value):
        ok = t is not None and (t.kind in ("address", "string") or (t.kind == "bytes" and t.bits == 160))
    else:
        ok = t is not None and t.kind in ("string", "bytes")
    if not ok:
        raise ValueTypeMismatch([("TypeMismatch", "", f"{value!r} is not a {solidity_type} value")])


def _param_decl(name: str, solidity_type: str) -> str:
    loc = " memory" if solidity_type == "string" else ""
    return f"{solidity_type}{loc} _{name}"


def assemble(selection: SnippetSelection, bindings: VariableBindings, lib: SnippetLibrary,
             bp: Blueprint) -> AssembledContract:
    chosen = selection.as_dict()
    missing = [s for s in bp.required_symbols if s not in chosen]
    if missing:
        raise MissingSelection(f"no variant chosen for {missing}")
    extra = [s for s in chosen if s not in bp.required_symbols]
    if extra:
        raise MissingSelection(f"selection names symbols outside the blueprint: {extra}")

    problems: list[tuple[str, str, str]] = []
    var_frags: list[RenderedFragment] = []
    fn_frags: list[RenderedFragment] = []
    params: list[tuple[str, str, Any]] = []
    for name in bp.required_symbols:
        options = lib.variants(name)
        idx = chosen[name]
        if not 0 <= idx < len(options):
            raise SynthesisError(f"variant {idx} out of range for {name!r} ({len(options)} options)")
        snip = options[idx]
        if snip.symbol.kind == FUNCTION:
            fn_frags.append(RenderedFragment(name, snip, snip.template))
            continue
        text = snip.template
        try:
            if snip.init_mode == INLINE:
                text = text.replace(snip.placeholder, format_value(bindings[name], snip.declared_solidity_type))
            elif snip.init_mode == CONSTRUCTOR:
                _check_kind(bindings[name], snip.declared_solidity_type)
                params.append((name, snip.declared_solidity_type, bindings[name]))
        except RenderError as exc:
            problems += [(cls, name, msg) for cls, _, msg in exc.problems]
            continue
        var_frags.append(RenderedFragment(name, snip, text))
    if problems:
        overflow = any(cls == "WidthConflict" for cls, _, _ in problems)
        raise (LiteralOverflow if overflow else ValueTypeMismatch)(problems)

    parts = [HEADER, f"contract {bp.contract_type.value} {{"]
    parts += [f.text for f in var_frags]
    if params:
        parts.append("")
        parts.append("    constructor(" + ", ".join(_param_decl(n, t) for n, t, _ in params) + ") {")
        parts += [f"        {n} = _{n};" for n, _, _ in params]
        parts.append("    }")
    for f in fn_frags:
        parts.append("")
        parts.append(f.text)
    parts.append("")
    parts.append(BALANCES_FRAGMENT)
    parts.append("}")
    source = "\n".join(parts) + "\n"
    leftover = _PLACEHOLDER.search(source)
    if leftover:
        raise SynthesisError(f"unrendered placeholder {leftover.group()}")
    return AssembledContract(
        contract_type=bp.contract_type,
        source=source,
        constructor_params=tuple(params),
        selection=selection,
        fragments=tuple(var_frags + fn_frags),
    )


def emit_source(contract: AssembledContract, directory: str | Path, instance_id: str) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{instance_id}-{contract.selection.digest()}.sol"
    path.write_text(contract.source)
    return path
