"""Two-phase curriculum training loop."""

from __future__ import annotations

import csv
import logging
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cdm import CdmInstance
from .config import RunConfig
from .environment import ContractEnv, Phase
from .ppo import (Adam, EntropySchedule, PolicyNetwork, RolloutBuffer, compute_gae, load_checkpoint, ppo_update,
                  sample_action, save_checkpoint)

log = logging.getLogger(__name__)

METRICS_COLUMNS = ["step", "phase", "reward", "compile_success", "norm_gas", "entropy_coef"]


def metrics_row(step: int, phase: Phase, reward: float, ok: bool, norm_gas: float | None, ent: float) -> list[str]:
    return [str(step), phase.value, f"{reward:.6f}", "1" if ok else "0",
            "" if norm_gas is None else f"{norm_gas:.6f}", f"{ent:.6f}"]


@dataclass
class TrainResult:
    steps: int
    transition_step: int
    metrics_path: Path
    phase1_ckpt: Path
    final_ckpt: Path


def build_env(cfg: RunConfig, dataset: list[CdmInstance], evaluator=None) -> ContractEnv:
    lib = cfg.library()
    return ContractEnv(lib, cfg.blueprints(lib), cfg.schemas(), dataset, params=cfg.reward_params(),
                       evaluator=evaluator, seed=_seeds(cfg.seed)[1],
                       failed_test_mode=cfg.raw["failed_test_penalty_mode"])


def _seeds(seed: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(3)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


class Trainer:
    def __init__(self, cfg: RunConfig, dataset: list[CdmInstance], out_dir: Path | None = None, evaluator=None):
        self.cfg = cfg
        self.hp = cfg.ppo_hyperparams()
        self.out = Path(out_dir or cfg.output_dir)
        self.env = build_env(cfg, dataset, evaluator)
        net_seed, _, rng_seed = _seeds(cfg.seed)
        self.net = PolicyNetwork(self.env.obs_dim, self.env.action_shape, self.hp.hidden, seed=net_seed)
        self.opt = Adam(self.net.params, self.hp.learning_rate, eps=self.hp.adam_eps)
        self.rng = np.random.default_rng(rng_seed)
        self.schedule = EntropySchedule(self.hp.ent_coef_start, self.hp.ent_coef_end, self.hp.ent_horizon)
        p1 = cfg.raw["phase1"]
        self.phase1_max = int(p1["max_steps"])
        self.window = int(p1["window"])
        self.threshold = float(p1["threshold"])
        self.phase2_steps = int(cfg.raw["phase2"]["steps"])
        self.step = 0
        self.transition_step: int | None = None
        self.recent_compile: deque = deque(maxlen=self.window)
        self.rollouts = 0

    @property
    def metrics_path(self) -> Path:
        return self.out / "metrics.csv"

    def ckpt(self, name: str) -> Path:
        return self.out / "checkpoints" / name

    # -- state
    def _state(self) -> dict:
        return {"env": self.env.get_state(), "rng": self.rng.bit_generator.state,
                "transition_step": self.transition_step, "recent_compile": list(self.recent_compile),
                "rollouts": self.rollouts}

    def _save(self, name: str) -> Path:
        return save_checkpoint(self.ckpt(name), self.net, self.opt, self.step, self.cfg.config_hash(), self._state())

    def resume(self) -> bool:
        path = self.ckpt("latest.ckpt")
        if not path.exists():
            return False
        ck = load_checkpoint(path)
        if ck.config_hash != self.cfg.config_hash():
            raise ValueError(f"{path} was written by a different config ({ck.config_hash})")
        self.net, self.opt, self.step = ck.net, ck.opt, ck.step
        st = ck.state
        self.env.set_state(st["env"])
        self.rng.bit_generator.state = st["rng"]
        self.transition_step = st["transition_step"]
        self.recent_compile = deque(st["recent_compile"], maxlen=self.window)
        self.rollouts = st["rollouts"]
        # drop metric rows written after the checkpoint
        if self.metrics_path.exists():
            with self.metrics_path.open() as fh:
                rows = list(csv.reader(fh))
            keep = [rows[0]] + [r for r in rows[1:] if int(r[0]) <= self.step]
            with self.metrics_path.open("w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerows(keep)
        log.info("resumed from %s at step %d", path, self.step)
        return True

    # -- loop
    def _budget_left(self) -> int:
        if self.env.phase is Phase.COMPILATION:
            return self.phase1_max - self.step
        return self.transition_step + self.phase2_steps - self.step

    def _collect(self, n: int, writer) -> RolloutBuffer:
        d = self.env.obs_dim
        nh = len(self.env.action_shape)
        obs = np.zeros((n, d))
        actions = np.zeros((n, nh), dtype=np.int64)
        masks = np.zeros((n, nh))
        logps = np.zeros(n)
        rewards = np.zeros(n)
        values = np.zeros(n)
        for t in range(n):
            x = self.env.reset().vector()
            dists, v = self.net.forward(x)
            a, _ = sample_action(dists, self.rng)
            m = self.env.mask() if self.hp.masked else np.ones(nh)
            _, r, _, info = self.env.step(a)
            self.step += 1
            obs[t], actions[t], masks[t] = x, a, m
            logps[t] = dists.log_prob(a[None, :], m[None, :])[0]
            rewards[t] = r
            values[t] = v[0] * self.hp.value_scale
            if self.env.phase is Phase.COMPILATION:
                self.recent_compile.append(1 if info.compile_success else 0)
            writer.writerow(metrics_row(self.step, self.env.phase, r, info.compile_success, info.norm_gas,
                                        self.schedule(self.step)))
        buf = RolloutBuffer(obs, actions, masks, logps, rewards, values, np.ones(n))
        buf.advantages, buf.returns = compute_gae(rewards, values, buf.dones, 0.0, self.hp.gamma, self.hp.gae_lambda)
        return buf

    def _maybe_transition(self) -> None:
        if self.env.phase is not Phase.COMPILATION:
            return
        full = len(self.recent_compile) == self.window
        rate = sum(self.recent_compile) / max(len(self.recent_compile), 1)
        if (full and rate >= self.threshold) or self.step >= self.phase1_max:
            self._save("phase1.ckpt")
            self.transition_step = self.step
            self.env.phase = Phase.GAS_OPTIMIZATION
            log.info("phase transition at step %d (trailing compile rate %.3f)", self.step, rate)

    def train(self, resume: bool = False) -> TrainResult:
        self.out.mkdir(parents=True, exist_ok=True)
        resumed = resume and self.resume()
        if not resumed:
            with self.metrics_path.open("w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(METRICS_COLUMNS)
        every = int(self.cfg.raw["checkpoint_every"])
        with self.metrics_path.open("a", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            while True:
                if self.step >= self.phase1_max:
                    self._maybe_transition()
                left = self._budget_left()
                if self.env.phase is Phase.GAS_OPTIMIZATION and left <= 0:
                    break
                n = min(self.hp.rollout_size, left)
                buf = self._collect(n, writer)
                ent = self.schedule(self.step)
                stats = ppo_update(self.net, self.opt, buf, self.hp, ent, self.rng, dump_dir=self.out)
                self.rollouts += 1
                log.info("step %d phase %s mean reward %.1f entropy %.2f", self.step, self.env.phase.value,
                         buf.rewards.mean(), stats["entropy"])
                self._maybe_transition()
                if self.rollouts % every == 0:
                    fh.flush()
                    self._save("latest.ckpt")
        final = self._save("final.ckpt")
        self._save("latest.ckpt")
        return TrainResult(self.step, self.transition_step, self.metrics_path, self.ckpt("phase1.ckpt"), final)
