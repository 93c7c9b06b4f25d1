import json
from pathlib import Path

import pytest

from gascraft.cdm import ContractType, apply_mapping, default_schemas, generate_dataset
from gascraft.config import RunConfig
from gascraft.evaluation import GasModel
from gascraft.library import load_blueprints, load_library

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


@pytest.fixture(scope="session")
def schemas():
    return default_schemas()


@pytest.fixture(scope="session")
def lib():
    return load_library()


@pytest.fixture(scope="session")
def blueprints(lib):
    return load_blueprints(None, lib)


@pytest.fixture(scope="session")
def mini_cfg():
    return RunConfig.load(CONFIGS / "mini.json")


@pytest.fixture(scope="session")
def mini_lib(mini_cfg):
    return mini_cfg.library()


@pytest.fixture(scope="session")
def mini_blueprints(mini_cfg, mini_lib):
    return mini_cfg.blueprints(mini_lib)


@pytest.fixture(scope="session")
def model():
    return GasModel()


@pytest.fixture(scope="session")
def es_instances(schemas):
    return generate_dataset(schemas[ContractType.EquitySwap], ContractType.EquitySwap, 40, seed=3)


@pytest.fixture
def es_bindings(schemas, es_instances):
    return apply_mapping(es_instances[0], schemas[ContractType.EquitySwap])


def small_run_config(tmp_path, **over):
    """Mini config shrunk so a full train/eval cycle takes seconds."""
    doc = json.loads((CONFIGS / "mini.json").read_text())
    doc["dataset"] = {"train_per_type": 40, "test_per_type": 10}
    doc["phase1"] = {"max_steps": 1024, "window": 100, "threshold": 0.95}
    doc["phase2"] = {"steps": 1024}
    doc["ppo"] = {"value_scale": 100.0, "rollout_size": 256, "epochs": 2}
    doc["output_dir"] = str(tmp_path / "run")
    doc.update(over)
    return RunConfig.from_dict(doc, base_dir=CONFIGS)
