"""Run configuration: JSON files under configs/, resolved into typed objects."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .cdm import ContractType, MappingSchema, load_schemas
from .environment import FAILED_TEST_MODES, RewardParams
from .evaluation import GasModel
from .library import Blueprint, SnippetLibrary, load_blueprints, load_library
from .ppo import PpoHyperparams

DEFAULTS = {
    "name": "run",
    "seed": 0,
    "library": None,  # null = shipped full library; "builtin:mini" = shipped miniature library
    "blueprints": None,
    "schemas": None,
    "contract_types": [ct.value for ct in ContractType],
    "dataset": {"train_per_type": 400, "test_per_type": 100},
    "phase1": {"max_steps": 160_000, "window": 500, "threshold": 0.95},
    "phase2": {"steps": 290_000},
    "reward": {},
    "failed_test_penalty_mode": "budget_substitution",
    "gas_model": {},
    "ppo": {},
    "evaluator": "builtin",
    "forge": {"binary": "forge", "timeout": 60},
    "output_dir": "runs/run",
    "checkpoint_every": 5,
    "brute_force_cap": 65_536,
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _resolve_builtin(ref: str | None, kind: str, base: Path | None):
    if ref is None:
        return None
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        root = resources.files("gascraft") / "data" / name
        return root / ("library.json" if kind == "library" else "blueprints")
    p = Path(ref)
    if not p.is_absolute() and base is not None:
        p = base / p
    return p


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path | None = None

    @classmethod
    def load(cls, path: str | Path, seed: int | None = None, overrides: dict | None = None) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc, base_dir=path.parent, seed=seed, overrides=overrides)

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | None = None, seed: int | None = None,
                  overrides: dict | None = None) -> "RunConfig":
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        raw = _merge(DEFAULTS, doc)
        if overrides:
            raw = _merge(raw, overrides)
        if seed is not None:
            raw["seed"] = int(seed)
        if raw["failed_test_penalty_mode"] not in FAILED_TEST_MODES:
            raise ConfigError(f"failed_test_penalty_mode must be one of {FAILED_TEST_MODES}")
        if raw["evaluator"] not in ("builtin", "external"):
            raise ConfigError("evaluator must be 'builtin' or 'external'")
        cfg = cls(raw, base_dir)
        cfg.reward_params()
        cfg.ppo_hyperparams()
        return cfg

    # -- accessors
    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def output_dir(self) -> Path:
        return Path(self.raw["output_dir"])

    @property
    def contract_types(self) -> list[ContractType]:
        return [ContractType(c) for c in self.raw["contract_types"]]

    def config_hash(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(canonical).hexdigest()[:16]

    def reward_params(self) -> RewardParams:
        try:
            return RewardParams(**self.raw["reward"])
        except TypeError as exc:
            raise ConfigError(f"bad reward params: {exc}") from exc

    def ppo_hyperparams(self) -> PpoHyperparams:
        doc = dict(self.raw["ppo"])
        doc.setdefault("ent_horizon", self.raw["phase1"]["max_steps"] + self.raw["phase2"]["steps"])
        try:
            return PpoHyperparams.from_dict(doc)
        except TypeError as exc:
            raise ConfigError(f"bad ppo hyperparams: {exc}") from exc

    def gas_model(self) -> GasModel:
        return GasModel(**self.raw["gas_model"])

    def library(self) -> SnippetLibrary:
        return load_library(_resolve_builtin(self.raw["library"], "library", self.base_dir))

    def blueprints(self, lib: SnippetLibrary) -> dict[ContractType, Blueprint]:
        bps = load_blueprints(_resolve_builtin(self.raw["blueprints"], "blueprints", self.base_dir), lib)
        missing = [ct.value for ct in self.contract_types if ct not in bps]
        if missing:
            raise ConfigError(f"no blueprint for {missing}")
        return {ct: bps[ct] for ct in self.contract_types}

    def schemas(self) -> dict[ContractType, MappingSchema]:
        ref = self.raw["schemas"]
        if ref is not None and self.base_dir is not None and not Path(ref).is_absolute():
            ref = self.base_dir / ref
        return load_schemas(ref)

    def data_dir(self) -> Path:
        return self.output_dir / "data"
