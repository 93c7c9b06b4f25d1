"""Orchestration behind the CLI subcommands."""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .cdm import CdmInstance, ContractType, apply_mapping, generate_dataset, read_instance_files, write_instance_files
from .config import RunConfig
from .environment import (ContractEnv, Phase, Evaluator, builtin_evaluator, normalized_gas_score,
                          render_and_evaluate)
from .ppo import greedy_action, load_checkpoint
from .synthesizer import SnippetSelection
from .training import TrainResult, Trainer

TRAILING_WINDOW = 500


class SpaceTooLarge(ValueError):
    pass


class SplitOverlap(ValueError):
    pass


# -- data --------------------------------------------------------------------------

def split_dirs(cfg: RunConfig) -> tuple[Path, Path]:
    return cfg.data_dir() / "train", cfg.data_dir() / "test"


def cmd_gen_data(cfg: RunConfig) -> dict[str, int]:
    schemas = cfg.schemas()
    n_train = int(cfg.raw["dataset"]["train_per_type"])
    n_test = int(cfg.raw["dataset"]["test_per_type"])
    train, test = [], []
    for ct in cfg.contract_types:
        rows = generate_dataset(schemas[ct], ct, n_train + n_test, cfg.seed)
        train += rows[:n_train]
        test += rows[n_train:]
    overlap = {i.id for i in train} & {i.id for i in test}
    if overlap:
        raise SplitOverlap(f"train and test share ids: {sorted(overlap)[:5]}")
    train_dir, test_dir = split_dirs(cfg)
    for d in (train_dir, test_dir):
        if d.exists():
            for old in d.glob("*.json"):
                old.unlink()
    write_instance_files(train, train_dir)
    write_instance_files(test, test_dir)
    return {"train": len(train), "test": len(test)}


def load_split(cfg: RunConfig, split: str) -> list[CdmInstance]:
    train_dir, test_dir = split_dirs(cfg)
    d = train_dir if split == "train" else test_dir
    if not d.is_dir():
        raise FileNotFoundError(f"{d} does not exist; run gen-data first")
    rows = read_instance_files(d, cfg.schemas())
    wanted = set(cfg.contract_types)
    return sorted((r for r in rows if r.contract_type in wanted), key=lambda r: r.id)


def check_disjoint(train: list[CdmInstance], test: list[CdmInstance]) -> None:
    overlap = {i.id for i in train} & {i.id for i in test}
    if overlap:
        raise SplitOverlap(f"train and test share ids: {sorted(overlap)[:5]}")


def make_evaluator(cfg: RunConfig) -> Evaluator:
    if cfg.raw["evaluator"] == "external":
        from .forge import ForgeEvaluator
        f = cfg.raw["forge"]
        return ForgeEvaluator(binary=f["binary"], timeout=float(f["timeout"]))
    return builtin_evaluator(cfg.gas_model())


# -- train -------------------------------------------------------------------------

def cmd_train(cfg: RunConfig, resume: bool = False) -> TrainResult:
    train = load_split(cfg, "train")
    check_disjoint(train, load_split(cfg, "test"))
    trainer = Trainer(cfg, train, evaluator=make_evaluator(cfg))
    return trainer.train(resume=resume)


# -- eval --------------------------------------------------------------------------

@dataclass
class GenerationRecord:
    instance_id: str
    contract_type: str
    compile_success: bool
    all_passed: bool
    norm_gas: float | None
    selection: dict


def greedy_generations(ckpt_path: str | Path, cfg: RunConfig, instances: list[CdmInstance],
                       evaluator: Evaluator | None = None, emit_dir: str | Path | None = None) -> list[GenerationRecord]:
    """Greedy policy over ``instances`` in a seeded order, feedback chained as in training."""
    ck = load_checkpoint(ckpt_path)
    lib = cfg.library()
    env = ContractEnv(lib, cfg.blueprints(lib), cfg.schemas(), instances, params=cfg.reward_params(),
                      evaluator=evaluator or make_evaluator(cfg), seed=cfg.seed,
                      phase=Phase.GAS_OPTIMIZATION, failed_test_mode=cfg.raw["failed_test_penalty_mode"])
    out = []
    for _ in range(len(instances)):
        obs = env.reset()
        a = greedy_action(ck.net, obs.vector())
        _, _, _, info = env.step(a)
        out.append(GenerationRecord(info.instance_id, info.contract_type.value, info.compile_success,
                                    info.report.all_passed, info.norm_gas, info.selection.as_dict()))
        if emit_dir is not None and info.compile_success:
            from .synthesizer import assemble, emit_source
            inst = env.current
            bp = env.blueprints[inst.contract_type]
            contract = assemble(info.selection, apply_mapping(inst, cfg.schemas()[inst.contract_type]), lib, bp)
            emit_source(contract, emit_dir, inst.id)
    return sorted(out, key=lambda r: r.instance_id)


@dataclass
class TypeComparison:
    contract_type: str
    n: int
    baseline_mean: float
    optimized_mean: float
    delta_pct: float
    baseline_failures: int
    optimized_failures: int


def delta_pct(initial: float, optimized: float) -> float:
    return (initial - optimized) / initial * 100.0


def _mean(values: list[float]) -> float:
    return float(np.mean(values)) if values else float("nan")


def compare(baseline: list[GenerationRecord], optimized: list[GenerationRecord],
            types: list[ContractType]) -> list[TypeComparison]:
    rows = []
    for ct in types:
        b = [r for r in baseline if r.contract_type == ct.value]
        o = [r for r in optimized if r.contract_type == ct.value]
        bm = _mean([r.norm_gas for r in b if r.compile_success])
        om = _mean([r.norm_gas for r in o if r.compile_success])
        rows.append(TypeComparison(ct.value, len(b), bm, om, delta_pct(bm, om),
                                   sum(not r.compile_success for r in b), sum(not r.compile_success for r in o)))
    return rows


def write_comparison(rows: list[TypeComparison], out_dir: Path) -> tuple[Path, Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "comparison.csv"
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["contract_type", "n", "initial", "optimized", "delta_pct", "initial_compile_failures",
                    "optimized_compile_failures"])
        for r in rows:
            w.writerow([r.contract_type, r.n, f"{r.baseline_mean:.6f}", f"{r.optimized_mean:.6f}",
                        f"{r.delta_pct:.2f}", r.baseline_failures, r.optimized_failures])
    png = out_dir / "comparison.png"
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar([r.contract_type for r in rows], [r.delta_pct for r in rows], color="#4c72b0")
    ax.set_ylabel("normalized gas reduction (%)")
    ax.tick_params(axis="x", labelrotation=20)
    fig.tight_layout()
    fig.savefig(png, dpi=120)
    plt.close(fig)
    return csv_path, png


def cmd_eval(cfg: RunConfig, baseline_ckpt: str | Path | None = None, final_ckpt: str | Path | None = None,
             emit_dir: str | Path | None = None) -> list[TypeComparison]:
    ck_dir = cfg.output_dir / "checkpoints"
    baseline_ckpt = baseline_ckpt or ck_dir / "phase1.ckpt"
    final_ckpt = final_ckpt or ck_dir / "final.ckpt"
    test = load_split(cfg, "test")
    check_disjoint(load_split(cfg, "train"), test)
    evaluator = make_evaluator(cfg)
    base = greedy_generations(baseline_ckpt, cfg, test, evaluator)
    opt = greedy_generations(final_ckpt, cfg, test, evaluator, emit_dir=emit_dir)
    rows = compare(base, opt, cfg.contract_types)
    write_comparison(rows, cfg.output_dir / "eval")
    return rows


# -- brute force -------------------------------------------------------------------

@dataclass
class BruteForceResult:
    instance_id: str
    optimum: float | None
    selection: dict | None
    evaluated: int
    passing: int


def _cache_key(cfg: RunConfig, lib) -> str:
    payload = {"library": lib.digest, "gas_model": asdict(cfg.gas_model()), "reward": asdict(cfg.reward_params()),
               "mode": cfg.raw["failed_test_penalty_mode"], "blueprints": cfg.raw["blueprints"]}
    import hashlib
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def brute_force(cfg: RunConfig, instance: CdmInstance, cap: int | None = None,
                evaluator: Evaluator | None = None) -> BruteForceResult:
    lib = cfg.library()
    bp = cfg.blueprints(lib)[instance.contract_type]
    cap = int(cfg.raw["brute_force_cap"] if cap is None else cap)
    space = bp.selection_space(lib)
    if space > cap:
        raise SpaceTooLarge(f"{instance.contract_type.value} has {space} selections, cap is {cap}")
    evaluator = evaluator or builtin_evaluator(cfg.gas_model())
    bindings = apply_mapping(instance, cfg.schemas()[instance.contract_type])
    params = cfg.reward_params()
    mode = cfg.raw["failed_test_penalty_mode"]
    best, best_sel, passing = math.inf, None, 0
    ranges = [range(lib.cardinality(s)) for s in bp.required_symbols]
    for idx in itertools.product(*ranges):
        sel = SnippetSelection(bp.contract_type, tuple(zip(bp.required_symbols, idx)))
        r = render_and_evaluate(sel, bindings, lib, bp, evaluator)
        if not r.all_passed:
            continue
        passing += 1
        s = normalized_gas_score(r, params, mode)
        if s < best:
            best, best_sel = s, sel.as_dict()
    return BruteForceResult(instance.id, None if best_sel is None else best, best_sel, space, passing)


def cmd_brute_force(cfg: RunConfig, instance_id: str, cap: int | None = None, use_cache: bool = True) -> BruteForceResult:
    instances = {i.id: i for split in ("train", "test") for i in load_split(cfg, split)}
    if instance_id not in instances:
        raise KeyError(f"unknown instance id {instance_id!r}")
    lib = cfg.library()
    cache_dir = cfg.output_dir / "bruteforce"
    key = _cache_key(cfg, lib)
    path = cache_dir / f"{instance_id}.json"
    if use_cache and path.exists():
        doc = json.loads(path.read_text())
        if doc.get("key") == key:
            return BruteForceResult(**doc["result"])
    result = brute_force(cfg, instances[instance_id], cap)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"key": key, "result": asdict(result)}, indent=1, sort_keys=True))
    return result


# -- report ------------------------------------------------------------------------

def trailing_mean(values: np.ndarray, window: int = TRAILING_WINDOW) -> np.ndarray:
    """Mean of up to ``window`` most recent values at each index."""
    c = np.concatenate([[0.0], np.cumsum(values, dtype=float)])
    idx = np.arange(1, len(values) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


@dataclass
class Metrics:
    step: np.ndarray
    phase: np.ndarray
    reward: np.ndarray
    compile_success: np.ndarray
    norm_gas: np.ndarray
    entropy_coef: np.ndarray


def read_metrics(path: str | Path) -> Metrics:
    with Path(path).open() as fh:
        rows = list(csv.DictReader(fh))
    return Metrics(
        np.array([int(r["step"]) for r in rows]),
        np.array([r["phase"] for r in rows]),
        np.array([float(r["reward"]) for r in rows]),
        np.array([int(r["compile_success"]) for r in rows]),
        np.array([float(r["norm_gas"]) if r["norm_gas"] else np.nan for r in rows]),
        np.array([float(r["entropy_coef"]) for r in rows]),
    )


@dataclass
class CurveSummary:
    transition_step: int | None
    phase1_start_compile: float
    phase1_end_compile: float
    phase1_cross_step: int | None
    phase2_start_reward: float | None
    phase2_best_reward: float | None
    phase2_end_reward: float | None


def summarize(m: Metrics, window: int = TRAILING_WINDOW, threshold: float = 0.95) -> CurveSummary:
    p1 = m.phase == Phase.COMPILATION.value
    p2 = ~p1
    comp = m.compile_success[p1].astype(float)
    comp_tr = trailing_mean(comp, window)
    full = np.arange(1, len(comp) + 1) >= window
    crossed = np.nonzero(full & (comp_tr >= threshold))[0]
    transition = int(m.step[p1][-1]) if p1.any() and p2.any() else None
    r2 = m.reward[p2]
    if len(r2) >= window:
        tr2 = trailing_mean(r2, window)[window - 1:]
        start, best, end = float(tr2[0]), float(tr2.max()), float(tr2[-1])
    else:
        start = best = end = None
    return CurveSummary(transition, float(comp[:window].mean()) if len(comp) else float("nan"),
                        float(comp_tr[-1]) if len(comp) else float("nan"),
                        int(m.step[p1][crossed[0]]) if len(crossed) else None, start, best, end)


def cmd_report(cfg: RunConfig, metrics_path: str | Path | None = None, out: str | Path | None = None) -> CurveSummary:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    metrics_path = Path(metrics_path or cfg.output_dir / "metrics.csv")
    m = read_metrics(metrics_path)
    summary = summarize(m, threshold=float(cfg.raw["phase1"]["threshold"]))
    fig, axes = plt.subplots(2, 1, figsize=(7, 6))
    for ax, phase in zip(axes, (Phase.COMPILATION, Phase.GAS_OPTIMIZATION)):
        sel = m.phase == phase.value
        if sel.any():
            ax.plot(m.step[sel], m.reward[sel], ",", color="0.75")
            ax.plot(m.step[sel], trailing_mean(m.reward[sel]), color="#c44e52",
                    label=f"trailing mean, window {TRAILING_WINDOW}")
            ax.legend(loc="lower right")
        ax.set_title(phase.value)
        ax.set_xlabel("step")
        ax.set_ylabel("episode reward")
    fig.tight_layout()
    out = Path(out or cfg.output_dir / "training_curves.png")
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    (out.parent / "training_summary.json").write_text(json.dumps(asdict(summary), indent=1))
    return summary
