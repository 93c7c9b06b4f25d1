"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line (shown even under output capture)
before asserting. The full-config run in criterion 8 takes several minutes.
"""

import itertools
import json
import time

import numpy as np
import pytest

from gascraft.cdm import ContractType, apply_mapping, default_schemas, generate_dataset
from gascraft.config import RunConfig
from gascraft.environment import RewardParams, normalized_gas_score, reward_phase1, reward_phase2
from gascraft.evaluation import (
    CompileError, CompileResult, EvaluationReport, FunctionResult, GasModel, evaluate, gas_deploy,
    oracle_expected_state, simulate, static_check,
)
from gascraft.harness import (
    cmd_brute_force, cmd_eval, cmd_gen_data, cmd_report, cmd_train, greedy_generations, load_split,
)
from gascraft.library import load_blueprints, load_library
from gascraft.synthesizer import RenderError, SnippetSelection, assemble

import reward_oracle
from conftest import CONFIGS
from gradcheck import max_relative_error, toy_problem


def verdict(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {n:2d}] {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def _run(cfg):
    cmd_gen_data(cfg)
    t = time.time()
    res = cmd_train(cfg)
    return res, time.time() - t


@pytest.fixture(scope="module")
def mini_run(tmp_path_factory):
    cfg = RunConfig.load(CONFIGS / "mini.json", overrides={"output_dir": str(tmp_path_factory.mktemp("mini"))})
    res, secs = _run(cfg)
    return cfg, res, cmd_report(cfg), secs


def test_c01_reward_fixtures(capsys):
    p = RewardParams()
    errs = lambda n: CompileResult([CompileError("TypeMismatch", str(i), f"s{i}") for i in range(n)])
    ok_report = lambda deploy, g: EvaluationReport(CompileResult(), [FunctionResult("f", True, g)], deploy)
    ours = {
        "phase1 success": reward_phase1(CompileResult(), p),
        "phase1 3 errors": reward_phase1(errs(3), p),
        "phase1 25 errors": reward_phase1(errs(25), p),
        "phase2 600k/45k": reward_phase2(ok_report(600_000, 45_000), p),
        "phase2 compile fail": reward_phase2(EvaluationReport(errs(1)), p),
        "phase2 zero gas": reward_phase2(ok_report(0, 0), p),
    }
    worst = max(abs(ours[k] - float(v)) for k, v in reward_oracle.FIXTURES.items())
    verdict(capsys, 1, worst < 1e-9, f"6 reward fixtures vs exact oracle, max |diff| = {worst:.1e}")


def test_c02_score_reward_identity(capsys):
    p = RewardParams()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        funcs = [FunctionResult(f"f{j}", True, int(g)) for j, g in enumerate(rng.integers(0, 150_000, rng.integers(1, 4)))]
        r = EvaluationReport(CompileResult(), funcs, int(rng.integers(0, 2_500_000)))
        worst = max(worst, abs(normalized_gas_score(r, p) + reward_phase2(r, p) / p.r_max - 1))
    verdict(capsys, 2, worst < 1e-9, f"1000 random reports, max |score + R/R_max - 1| = {worst:.1e}")


def test_c03_oracle_equivalence(capsys):
    cfg = RunConfig.load(CONFIGS / "mini.json")
    lib = cfg.library()
    bp = cfg.blueprints(lib)[ContractType.EquitySwap]
    schema = cfg.schemas()[ContractType.EquitySwap]
    model = GasModel()
    assert bp.selection_space(lib) <= 4096
    t = time.time()
    checked = mismatched = 0
    for inst in generate_dataset(schema, ContractType.EquitySwap, 20, seed=cfg.seed):
        b = apply_mapping(inst, schema)
        expected = oracle_expected_state(bp, b).functions
        for idx in itertools.product(*[range(lib.cardinality(s)) for s in bp.required_symbols]):
            sel = SnippetSelection(bp.contract_type, tuple(zip(bp.required_symbols, idx)))
            try:
                c = assemble(sel, b, lib, bp)
            except RenderError:
                continue
            if not static_check(c).success:
                continue
            for fn, tr in simulate(c, b, model).functions.items():
                if tr.overflow:
                    continue
                checked += 1
                mismatched += tr.deltas != expected[fn].deltas or tr.reverted != expected[fn].reverted
    secs = time.time() - t
    verdict(capsys, 3, checked > 0 and mismatched == 0 and secs < 120,
            f"{checked} non-overflowing function runs over 20 x {bp.selection_space(lib)} selections, "
            f"{mismatched} differ from the oracle ({secs:.0f}s)")


def _context(lib, bp, fn, variant, b):
    """First selection (widest variables first) in which ``variant`` of ``fn`` compiles."""
    used = lib.variants(fn)[variant].uses_variables
    for combo in itertools.product(*[range(lib.cardinality(u)) for u in used]):
        choice = dict(zip(used, combo))
        sel = SnippetSelection(bp.contract_type,
                               tuple((s, variant if s == fn else choice.get(s, 0)) for s in bp.required_symbols))
        try:
            if static_check(assemble(sel, b, lib, bp)).success:
                return sel
        except RenderError:
            continue
    return None


def test_c04_variant_semantic_invariance(capsys):
    lib = load_library()
    schemas = default_schemas()
    model = GasModel()
    t = time.time()
    bindings = runs = disagreements = 0
    for ct, bp in load_blueprints(None, lib).items():
        draws = [apply_mapping(i, schemas[ct]) for i in generate_dataset(schemas[ct], ct, 1000, seed=424242)]
        bindings += len(draws)
        for fn in bp.functions(lib):
            contexts = [_context(lib, bp, fn, v, draws[0]) for v in range(lib.cardinality(fn))]
            for b in draws:
                seen = set()
                for sel in filter(None, contexts):
                    try:
                        c = assemble(sel, b, lib, bp)
                    except RenderError:
                        continue
                    tr = simulate(c, b, model).functions[fn]
                    if tr.overflow:
                        continue
                    runs += 1
                    seen.add((tuple(sorted(tr.deltas.items())), tr.reverted))
                disagreements += len(seen) > 1
    secs = time.time() - t
    verdict(capsys, 4, bindings >= 1000 and runs > 0 and disagreements == 0 and secs < 60,
            f"{bindings} bindings, {runs} variant runs, {disagreements} bindings with disagreeing variants ({secs:.0f}s)")


def test_c05_gradient_check(capsys):
    t = time.time()
    net, batch = toy_problem(seed=0, obs_dim=8, heads=(2, 3))
    err = max_relative_error(net, batch)
    secs = time.time() - t
    verdict(capsys, 5, err < 1e-4 and secs < 10, f"max relative error {err:.1e} over all parameters ({secs:.1f}s)")


def test_c06_curriculum_efficacy(capsys, mini_run):
    cfg, res, s, secs = mini_run
    gain = (s.phase2_best_reward - s.phase2_start_reward) / abs(s.phase2_start_reward)
    ok = (s.phase1_start_compile < 0.3 and s.phase1_cross_step is not None and s.phase1_cross_step <= 50_000
          and gain >= 0.20 and secs <= 900)
    verdict(capsys, 6, ok,
            f"compile rate {s.phase1_start_compile:.3f} -> 0.95 at step {s.phase1_cross_step}; phase-2 reward "
            f"{s.phase2_start_reward:.1f} -> {s.phase2_best_reward:.1f} ({100 * gain:+.1f}%), train {secs:.0f}s")


def test_c07_greedy_vs_brute_force(capsys, mini_run):
    cfg, res, _, _ = mini_run
    t = time.time()
    held_out = load_split(cfg, "test")[:20]
    greedy = greedy_generations(res.final_ckpt, cfg, held_out)
    optimum = [cmd_brute_force(cfg, i.id).optimum for i in held_out]
    compiled = all(g.compile_success for g in greedy)
    g_mean = float(np.mean([g.norm_gas if g.compile_success else 1.0 for g in greedy]))
    o_mean = float(np.mean(optimum))
    gap = (g_mean - o_mean) / o_mean
    secs = time.time() - t
    verdict(capsys, 7, compiled and gap <= 0.05 and secs <= 300,
            f"greedy mean {g_mean:.4f} vs brute-force optimum {o_mean:.4f} (gap {100 * gap:.2f}%, {secs:.0f}s)")


def test_c08_directional_table(capsys, tmp_path):
    cfg = RunConfig.load(CONFIGS / "full.json", overrides={"output_dir": str(tmp_path / "full")})
    _, secs = _run(cfg)
    rows = {r.contract_type: r for r in cmd_eval(cfg)}
    swaps = [rows[c].delta_pct for c in ("InterestRateSwap", "EquitySwap")]
    simple = [rows[c].delta_pct for c in ("EquityOption", "CommodityOption", "ForeignExchange")]
    no_worse = all(r.optimized_mean <= r.baseline_mean for r in rows.values())
    ok = no_worse and min(swaps) > max(simple)
    detail = ", ".join(f"{ContractType(k).code} {r.delta_pct:.1f}%" for k, r in rows.items())
    verdict(capsys, 8, ok, f"delta %: {detail} (train {secs / 60:.1f} min)")


def test_c09_fig3_fixture(capsys):
    lib = load_library()
    bp = load_blueprints(None, lib)[ContractType.EquitySwap]
    from gascraft.cdm import VariableBindings
    b = VariableBindings(ContractType.EquitySwap, dict(
        tradeDate=1_700_000_000, terminationDate=1_731_536_000, fixedNotional=5_000_000, fixedDividend=250,
        startPrice=10_000, endPrice=12_500, numberOfShares=300, fixedPayer="0x" + "11" * 20,
        equityPayer="0x" + "22" * 20, currency="USD"))
    model = GasModel()
    sel = lambda **ch: SnippetSelection(bp.contract_type, tuple((s, ch.get(s, 0)) for s in bp.required_symbols))
    wide = gas_deploy(assemble(sel(tradeDate=1), b, lib, bp), model)
    narrow = gas_deploy(assemble(sel(tradeDate=2), b, lib, bp), model)
    redundant = evaluate(assemble(sel(settleFixedLeg=0), b, lib, bp), bp, b, model)
    single = evaluate(assemble(sel(settleFixedLeg=1), b, lib, bp), bp, b, model)
    g_red, g_single = redundant.by_name()["settleFixedLeg"].gas, single.by_name()["settleFixedLeg"].gas
    same = redundant.trace.functions["settleFixedLeg"].deltas == single.trace.functions["settleFixedLeg"].deltas
    ok = (narrow < wide and (wide, narrow) == (589_800, 589_600)
          and g_single < g_red and (g_red, g_single) == (41_641, 22_663) and same)
    verdict(capsys, 9, ok, f"deploy uint128 {wide} -> uint64 {narrow}; settleFixedLeg redundant {g_red} -> "
                           f"single {g_single}, deltas equal: {same}")


def test_c10_determinism(capsys, tmp_path):
    doc = json.loads((CONFIGS / "mini.json").read_text())
    doc.update(output_dir=str(tmp_path / "det"), phase1={"max_steps": 8192, "window": 500, "threshold": 0.95},
               phase2={"steps": 4096})
    cfg = RunConfig.from_dict(doc, base_dir=CONFIGS)
    _run(cfg)
    first = (cfg.output_dir / "metrics.csv").read_bytes()
    again = RunConfig.from_dict(doc, base_dir=CONFIGS)
    _run(again)
    second = (again.output_dir / "metrics.csv").read_bytes()
    same_hash = cfg.config_hash() == again.config_hash()
    verdict(capsys, 10, same_hash and first == second,
            f"two runs of config {cfg.config_hash()}: {len(first)} bytes of metrics, identical: {first == second}")
