import csv
import json

import numpy as np
import pytest

import gascraft.training as training
from gascraft.cdm import ContractType
from gascraft.harness import (
    GenerationRecord, Metrics, SpaceTooLarge, SplitOverlap, brute_force, check_disjoint, cmd_brute_force,
    cmd_eval, cmd_gen_data, cmd_report, cmd_train, compare, delta_pct, greedy_generations, load_split,
    summarize, trailing_mean,
)
from gascraft.config import ConfigError, RunConfig

from conftest import CONFIGS, small_run_config


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    cfg = small_run_config(tmp_path_factory.mktemp("small"))
    cmd_gen_data(cfg)
    return cfg, cmd_train(cfg)


def test_training_never_sees_test_ids(trained):
    cfg, _ = trained
    from gascraft.training import Trainer
    trainer = Trainer(cfg, load_split(cfg, "train"), out_dir=cfg.output_dir / "probe")
    seen = {item.instance.id for item in trainer.env._items}
    assert seen and not seen & {i.id for i in load_split(cfg, "test")}


def test_gen_data_is_deterministic_and_disjoint(tmp_path):
    a = small_run_config(tmp_path / "a")
    b = small_run_config(tmp_path / "b")
    assert cmd_gen_data(a) == {"train": 40, "test": 10}
    cmd_gen_data(b)
    for split in ("train", "test"):
        assert [i.to_json() for i in load_split(a, split)] == [i.to_json() for i in load_split(b, split)]
    train, test = load_split(a, "train"), load_split(a, "test")
    check_disjoint(train, test)
    with pytest.raises(SplitOverlap):
        check_disjoint(train, train[:1])


def test_missing_split_is_reported(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_split(small_run_config(tmp_path), "train")


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"learning_rate": 1})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"failed_test_penalty_mode": "ignore"})
    cfg = RunConfig.load(CONFIGS / "full.json")
    assert cfg.ppo_hyperparams().ent_horizon == 160_000 + 290_000
    assert cfg.reward_params().r_max == 1500


def test_delta_pct():
    assert round(delta_pct(0.4900, 0.3156), 2) == 35.59
    assert delta_pct(0.3, 0.3) == 0.0


def test_compare_groups_by_type():
    rec = lambda i, ct, ok, g: GenerationRecord(i, ct, ok, ok, g, {})
    base = [rec("a", "EquitySwap", True, 0.5), rec("b", "EquitySwap", False, None), rec("c", "EquityOption", True, 0.2)]
    opt = [rec("a", "EquitySwap", True, 0.25), rec("b", "EquitySwap", True, 0.25), rec("c", "EquityOption", True, 0.2)]
    rows = compare(base, opt, [ContractType.EquitySwap, ContractType.EquityOption])
    assert (rows[0].baseline_mean, rows[0].optimized_mean, rows[0].delta_pct) == (0.5, 0.25, 50.0)
    assert (rows[0].baseline_failures, rows[0].optimized_failures) == (1, 0)
    assert rows[1].delta_pct == 0.0


def test_trailing_mean():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert trailing_mean(x, 2).tolist() == [1.0, 1.5, 2.5, 3.5]


def test_summarize_synthetic_curve():
    n1, n2 = 600, 700
    m = Metrics(
        step=np.arange(1, n1 + n2 + 1),
        phase=np.array(["Compilation"] * n1 + ["GasOptimization"] * n2),
        reward=np.concatenate([np.zeros(n1), np.full(500, 100.0), np.full(200, 150.0)]),
        compile_success=np.concatenate([np.zeros(100, int), np.ones(500, int), np.ones(n2, int)]),
        norm_gas=np.zeros(n1 + n2), entropy_coef=np.zeros(n1 + n2))
    s = summarize(m)
    assert s.transition_step == n1
    assert s.phase1_start_compile == 0.8
    # window ending at 575 holds 25 failures: 475/500 = 0.95
    assert s.phase1_cross_step == 575 and s.phase1_end_compile == 1.0
    assert s.phase2_start_reward == 100.0 and s.phase2_end_reward == 120.0


def test_metrics_are_well_formed(trained):
    cfg, res = trained
    with res.metrics_path.open() as fh:
        rows = list(csv.DictReader(fh))
    steps = [int(r["step"]) for r in rows]
    assert steps == list(range(1, res.steps + 1))
    assert res.steps == res.transition_step + 1024
    phases = [r["phase"] for r in rows]
    flips = sum(a != b for a, b in zip(phases, phases[1:]))
    assert flips == 1 and phases[0] == "Compilation" and phases[-1] == "GasOptimization"
    assert phases.index("GasOptimization") == res.transition_step
    for r in rows:
        assert (r["norm_gas"] == "") == (r["compile_success"] == "0")
    ent = [float(r["entropy_coef"]) for r in rows]
    assert all(a >= b for a, b in zip(ent, ent[1:]))


def test_identical_checkpoints_give_zero_delta(trained):
    cfg, res = trained
    rows = cmd_eval(cfg, res.final_ckpt, res.final_ckpt)
    assert [r.delta_pct for r in rows] == [0.0]
    assert (cfg.output_dir / "eval" / "comparison.csv").exists()
    assert (cfg.output_dir / "eval" / "comparison.png").exists()
    rows = cmd_eval(cfg, res.phase1_ckpt, res.final_ckpt)
    with (cfg.output_dir / "eval" / "comparison.csv").open() as fh:
        for row in csv.DictReader(fh):
            recomputed = delta_pct(float(row["initial"]), float(row["optimized"]))
            assert abs(recomputed - float(row["delta_pct"])) <= 0.01
            assert abs(float(row["delta_pct"]) - rows[0].delta_pct) < 0.005 + 1e-9


def test_greedy_generations_are_deterministic(trained, tmp_path):
    cfg, res = trained
    test = load_split(cfg, "test")
    a = greedy_generations(res.final_ckpt, cfg, test, emit_dir=tmp_path)
    b = greedy_generations(res.final_ckpt, cfg, test)
    assert a == b
    assert sorted(r.instance_id for r in a) == sorted(i.id for i in test)
    assert len(list(tmp_path.glob("*.sol"))) == sum(r.compile_success for r in a)


def test_report_outputs(trained):
    cfg, res = trained
    s = cmd_report(cfg)
    assert s.transition_step == res.transition_step
    assert (cfg.output_dir / "training_curves.png").stat().st_size > 0
    assert json.loads((cfg.output_dir / "training_summary.json").read_text())["transition_step"] == res.transition_step


def test_brute_force_mini(trained):
    cfg, _ = trained
    inst = load_split(cfg, "test")[0]
    res = cmd_brute_force(cfg, inst.id)
    assert res.evaluated == 3456 and 0 < res.passing < res.evaluated
    assert 0 < res.optimum < 1
    # minimality against a few random passing selections
    from gascraft.environment import normalized_gas_score, render_and_evaluate, builtin_evaluator
    from gascraft.synthesizer import SnippetSelection
    from gascraft.cdm import apply_mapping
    lib = cfg.library()
    bp = cfg.blueprints(lib)[inst.contract_type]
    b = apply_mapping(inst, cfg.schemas()[inst.contract_type])
    rng = np.random.default_rng(0)
    for _ in range(50):
        sel = SnippetSelection(bp.contract_type, tuple((s, int(rng.integers(lib.cardinality(s))))
                                                       for s in bp.required_symbols))
        r = render_and_evaluate(sel, b, lib, bp, builtin_evaluator(cfg.gas_model()))
        if r.all_passed:
            assert res.optimum <= normalized_gas_score(r, cfg.reward_params())
    cached = cmd_brute_force(cfg, inst.id)
    assert cached == res
    assert (cfg.output_dir / "bruteforce" / f"{inst.id}.json").exists()
    with pytest.raises(KeyError):
        cmd_brute_force(cfg, "nope")


def test_brute_force_refuses_large_space(schemas):
    from gascraft.cdm import generate_dataset
    cfg = RunConfig.load(CONFIGS / "full.json")
    inst = generate_dataset(schemas[ContractType.EquitySwap], ContractType.EquitySwap, 1, seed=0)[0]
    with pytest.raises(SpaceTooLarge):
        brute_force(cfg, inst)


def test_resume_reproduces_uninterrupted_run(tmp_path, monkeypatch):
    ref = small_run_config(tmp_path / "ref", checkpoint_every=1)
    cmd_gen_data(ref)
    cmd_train(ref)
    expected = (ref.output_dir / "metrics.csv").read_bytes()

    cfg = small_run_config(tmp_path / "ref", checkpoint_every=1)
    real = training.ppo_update
    calls = {"n": 0}

    def crash_on_fourth(*args, **kw):
        calls["n"] += 1
        if calls["n"] == 4:
            raise KeyboardInterrupt
        return real(*args, **kw)

    (cfg.output_dir / "metrics.csv").unlink()
    for f in (cfg.output_dir / "checkpoints").glob("*"):
        f.unlink()
    monkeypatch.setattr(training, "ppo_update", crash_on_fourth)
    with pytest.raises(KeyboardInterrupt):
        cmd_train(cfg)
    monkeypatch.setattr(training, "ppo_update", real)
    cmd_train(cfg, resume=True)
    assert (cfg.output_dir / "metrics.csv").read_bytes() == expected


def test_resume_rejects_other_config(trained, tmp_path):
    cfg, _ = trained
    other = RunConfig.from_dict(dict(cfg.raw, seed=cfg.seed + 1))
    with pytest.raises(ValueError):
        cmd_train(other, resume=True)
