"""Optional adapter that evaluates contracts with an installed Foundry toolchain.

Only used with ``--evaluator external``. The built-in evaluator stays the
default; nothing here runs in the test suite except the pure parsers and the
workspace writer.
"""

from __future__ import annotations

import re
import shutil
import subprocess
import tempfile
from pathlib import Path

from .cdm import VariableBindings, is_address
from .evaluation import (CompileError, CompileResult, EvaluationReport, FunctionResult, dedupe,
                         oracle_expected_state)
from .library import Blueprint
from .solidity import DUPLICATE, MALFORMED, TYPE_MISMATCH, UNDECLARED, WIDTH_CONFLICT, parse_type
from .synthesizer import AssembledContract


class ToolchainUnavailable(RuntimeError):
    pass


class ToolchainTimeout(RuntimeError):
    pass


class UnparsableOutput(RuntimeError):
    pass


_ADDR_LITERAL = re.compile(r"(?<![0-9A-Za-z_\"])0x([0-9a-fA-F]{40})(?![0-9A-Za-z_])")
_DECL_TYPE = re.compile(r"^\s*(\w+) public \w+ = 0x[0-9a-fA-F]{40};", re.M)


def checksum_free_source(source: str) -> str:
    """solc rejects 40-hex literals without an EIP-55 checksum; spell them as hex strings."""
    out = []
    for line in source.splitlines(keepends=True):
        m = _DECL_TYPE.match(line)
        wrap = "address(bytes20(hex\"{}\"))" if m and m.group(1) == "address" else "bytes20(hex\"{}\")"
        out.append(_ADDR_LITERAL.sub(lambda h: wrap.format(h.group(1).lower()), line))
    return "".join(out)


def _sol_address(value: str) -> str:
    return f'address(bytes20(hex"{value[2:].lower()}"))'


def _sol_arg(value, solidity_type: str) -> str:
    t = parse_type(solidity_type)
    if isinstance(value, int) and not isinstance(value, bool):
        wide = "uint256" if t.kind == "uint" else "int256"
        return f"{solidity_type}({wide}({value}))"
    if is_address(value):
        if t.kind == "address":
            return _sol_address(value)
        if t.kind == "bytes":
            return f'bytes20(hex"{value[2:].lower()}")'
    return '"' + str(value).replace("\\", "\\\\").replace('"', '\\"') + '"'


def generate_test(c: AssembledContract, bp: Blueprint, bindings: VariableBindings) -> str:
    expected = oracle_expected_state(bp, bindings)
    args = ", ".join(_sol_arg(v, t) for _, t, v in c.constructor_params)
    name = c.contract_type.value
    lines = ["// SPDX-License-Identifier: UNLICENSED", "pragma solidity ^0.8.20;", "",
             'import "../src/Contract.sol";', "", f"contract {name}Test {{"]
    for fn, outcome in expected.functions.items():
        lines.append(f"    function test_{fn}() public {{")
        lines.append(f"        {name} c = new {name}({args});")
        if outcome.reverted:
            lines.append(f'        (bool ok, ) = address(c).call(abi.encodeWithSignature("{fn}()"));')
            lines.append('        require(!ok, "expected revert");')
        else:
            lines.append(f"        c.{fn}();")
            for party, delta in sorted(outcome.deltas.items()):
                lines.append(f'        require(c.balances({_sol_address(party)}) == int256({delta}), "balance");')
        lines.append("    }")
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_workspace(root: Path, c: AssembledContract, bp: Blueprint, bindings: VariableBindings) -> Path:
    (root / "src").mkdir(parents=True, exist_ok=True)
    (root / "test").mkdir(parents=True, exist_ok=True)
    (root / "foundry.toml").write_text('[profile.default]\nsrc = "src"\ntest = "test"\nout = "out"\n')
    (root / "src" / "Contract.sol").write_text(checksum_free_source(c.source))
    (root / "test" / "Contract.t.sol").write_text(generate_test(c, bp, bindings))
    return root


# -- output parsing -------------------------------------------------------------

_ERROR_HEAD = re.compile(r"^(ParserError|DeclarationError|TypeError|Error)(?: \(\d+\))?: (.*)$", re.M)
_LOCATION = re.compile(r"-->\s*src/Contract\.sol:(\d+):\d+")


def _classify(kind: str, message: str) -> str:
    low = message.lower()
    if kind == "ParserError":
        return MALFORMED
    if "undeclared identifier" in low:
        return UNDECLARED
    if "already declared" in low:
        return DUPLICATE
    if "implicitly convertible" in low:
        kinds = re.findall(r"\b(u?int)\d+\b", message)
        # same signedness on both sides means only the width differs
        if len(kinds) >= 2 and kinds[0] == kinds[1]:
            return WIDTH_CONFLICT
    return TYPE_MISMATCH


def symbol_at_line(c: AssembledContract, line: int) -> str:
    """The fragment whose text covers 1-based ``line`` of the source, or ''."""
    offset = 0
    lines = c.source.splitlines()
    for frag in c.fragments:
        first = frag.text.splitlines()[0]
        for i in range(offset, len(lines)):
            if lines[i] == first:
                end = i + len(frag.text.splitlines())
                if i + 1 <= line <= end:
                    return frag.symbol
                offset = end
                break
    return ""


def parse_build_errors(output: str, c: AssembledContract | None = None) -> list[CompileError]:
    heads = list(_ERROR_HEAD.finditer(output))
    if not heads and output.strip():
        raise UnparsableOutput("build failed without a recognizable error line")
    errors = []
    for k, h in enumerate(heads):
        chunk_end = heads[k + 1].start() if k + 1 < len(heads) else len(output)
        loc = _LOCATION.search(output, h.end(), chunk_end)
        symbol = symbol_at_line(c, int(loc.group(1))) if (loc and c is not None) else ""
        errors.append(CompileError(_classify(h.group(1), h.group(2)), h.group(2).strip(), symbol or h.group(2)))
    return dedupe(errors)


_RESULT = re.compile(r"^\[(PASS|FAIL)[^\]]*\]\s+test_(\w+)\(\)", re.M)
_CELLS = re.compile(r"[|│]")


def parse_test_results(output: str) -> dict[str, bool]:
    out = {m.group(2): m.group(1) == "PASS" for m in _RESULT.finditer(output)}
    if not out:
        raise UnparsableOutput("no test result lines found")
    return out


def parse_gas_report(output: str) -> tuple[int, dict[str, int]]:
    """Deployment cost and per-function average gas from ``forge test --gas-report``."""
    rows = []
    for line in output.splitlines():
        if _CELLS.search(line):
            cells = [x.strip() for x in _CELLS.split(line)]
            cells = [x for x in cells if x != ""]
            if cells:
                rows.append(cells)
    deploy = None
    funcs: dict[str, int] = {}
    mode = None
    avg_col = 2
    for cells in rows:
        head = cells[0]
        if head.startswith("Deployment Cost"):
            mode = "deploy"
            continue
        if head.startswith("Function Name"):
            mode = "funcs"
            avg_col = cells.index("avg") if "avg" in cells else 2
            continue
        if mode == "deploy" and head.isdigit():
            deploy = int(head)
            mode = None
        elif mode == "funcs" and len(cells) > avg_col and cells[avg_col].isdigit():
            funcs[head] = int(cells[avg_col])
    if deploy is None:
        raise UnparsableOutput("no deployment cost in gas report")
    return deploy, funcs


class ForgeEvaluator:
    def __init__(self, binary: str = "forge", timeout: float = 60.0):
        path = shutil.which(binary)
        if path is None:
            raise ToolchainUnavailable(f"{binary!r} not found on PATH")
        self.binary = path
        self.timeout = timeout

    def _run(self, args: list[str], cwd: Path) -> subprocess.CompletedProcess:
        try:
            return subprocess.run([self.binary, *args], cwd=cwd, capture_output=True, text=True,
                                  timeout=self.timeout)
        except subprocess.TimeoutExpired as exc:
            raise ToolchainTimeout(f"forge {args[0]} exceeded {self.timeout}s") from exc

    def __call__(self, c: AssembledContract, bp: Blueprint, bindings: VariableBindings) -> EvaluationReport:
        with tempfile.TemporaryDirectory(prefix="gascraft-forge-") as tmp:
            root = write_workspace(Path(tmp), c, bp, bindings)
            build = self._run(["build"], root)
            if build.returncode != 0:
                errors = parse_build_errors(build.stderr + build.stdout, c)
                return EvaluationReport(CompileResult(errors or [CompileError(MALFORMED, "build failed", "")]))
            test = self._run(["test", "--gas-report"], root)
            results = parse_test_results(test.stdout)
            deploy, gas = parse_gas_report(test.stdout)
        functions = []
        for fn in bp.function_semantics:
            passed = results.get(fn, False)
            if passed and fn not in gas:
                raise UnparsableOutput(f"no gas figure for passing function {fn}")
            functions.append(FunctionResult(fn, passed, gas.get(fn, 0)))
        return EvaluationReport(CompileResult(), functions, deploy)
