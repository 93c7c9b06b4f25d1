"""Proximal policy optimization over a vector of categorical heads, in numpy.

Actor and critic are separate tanh MLPs. The actor ends in one linear layer
whose output is split into per-symbol logit blocks. Gradients are derived by
hand; ``tests/test_ppo.py`` checks them against central finite differences.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

MODEL_VERSION = "mlp-heads-1"
MAGIC = b"GASCKPT1"


class DimensionMismatch(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    def __init__(self, message: str, dump_path: str | None = None):
        super().__init__(message)
        self.dump_path = dump_path


class CorruptCheckpoint(ValueError):
    pass


@dataclass
class PpoHyperparams:
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    learning_rate: float = 3e-4
    rollout_size: int = 2048
    minibatch: int = 64
    epochs: int = 10
    value_coef: float = 0.5
    ent_coef_start: float = 0.05
    ent_coef_end: float = 0.005
    ent_horizon: int = 450_000
    max_grad_norm: float = 0.5
    normalize_advantage: bool = True
    masked: bool = True
    value_scale: float = 1.0  # critic predicts return / value_scale
    hidden: tuple[int, ...] = (64, 64)
    adam_eps: float = 1e-5

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if not 0 < self.clip_eps < 1:
            raise ValueError("clip_eps must lie in (0, 1)")
        if not (0 < self.gamma <= 1 and 0 < self.gae_lambda <= 1):
            raise ValueError("gamma and gae_lambda must lie in (0, 1]")
        if self.ent_horizon <= 0 or self.value_scale <= 0:
            raise ValueError("ent_horizon and value_scale must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> "PpoHyperparams":
        return cls(**doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


class EntropySchedule:
    """Linear from ``start`` to ``end``; constant after ``horizon`` steps."""

    def __init__(self, start: float, end: float, horizon: int):
        self.start, self.end, self.horizon = start, end, horizon

    def __call__(self, step: int) -> float:
        if step >= self.horizon:
            return self.end
        return self.start + (self.end - self.start) * (step / self.horizon)


# -- network ---------------------------------------------------------------------

def orthogonal(shape: tuple[int, int], gain: float, rng: np.random.Generator) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class Distributions:
    """Per-head categorical distributions for a batch, padded to the widest head."""

    def __init__(self, logits: np.ndarray, layout: "_HeadLayout"):
        self.layout = layout
        padded = np.where(layout.valid, logits[:, layout.gather], -np.inf)
        top = padded.max(axis=-1, keepdims=True)
        shifted = padded - top
        self.log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        self.probs = np.exp(self.log_probs)
        self.logits = padded
        self._safe = np.where(layout.valid, self.log_probs, 0.0)

    @property
    def batch(self) -> int:
        return self.probs.shape[0]

    def head_probs(self, i: int, b: int = 0) -> np.ndarray:
        return self.probs[b, i, : self.layout.sizes[i]]

    def log_prob(self, actions: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        actions = np.atleast_2d(actions)
        per_head = np.take_along_axis(self._safe, actions[:, :, None], axis=-1)[:, :, 0]
        if mask is not None:
            per_head = per_head * np.atleast_2d(mask)
        return per_head.sum(axis=1)

    def entropy(self, mask: np.ndarray | None = None) -> np.ndarray:
        per_head = -(self.probs * self._safe).sum(axis=-1)
        if mask is not None:
            per_head = per_head * np.atleast_2d(mask)
        return per_head.sum(axis=1)


@dataclass(frozen=True)
class _HeadLayout:
    sizes: tuple[int, ...]
    gather: np.ndarray  # (N, Kmax) column index into the flat logits
    valid: np.ndarray  # (N, Kmax) bool

    @classmethod
    def build(cls, sizes: Sequence[int]) -> "_HeadLayout":
        sizes = tuple(int(k) for k in sizes)
        if not sizes or min(sizes) < 1:
            raise ValueError("every head needs at least one option")
        kmax = max(sizes)
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        cols = np.arange(kmax)
        valid = cols[None, :] < np.array(sizes)[:, None]
        gather = np.where(valid, offsets[:, None] + cols[None, :], 0)
        return cls(sizes, gather, valid)


class PolicyNetwork:
    def __init__(self, obs_dim: int, head_sizes: Sequence[int], hidden: Sequence[int] = (64, 64),
                 seed: int | np.random.Generator = 0):
        self.obs_dim = int(obs_dim)
        self.layout = _HeadLayout.build(head_sizes)
        self.hidden = tuple(int(h) for h in hidden)
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        for prefix, out_dim, out_gain in (("pi", sum(self.layout.sizes), 0.01), ("vf", 1, 1.0)):
            dims = (self.obs_dim, *self.hidden)
            for k in range(len(self.hidden)):
                self.params[f"{prefix}.W{k}"] = orthogonal((dims[k], dims[k + 1]), np.sqrt(2), rng)
                self.params[f"{prefix}.b{k}"] = np.zeros(dims[k + 1])
            self.params[f"{prefix}.Wout"] = orthogonal((dims[-1], out_dim), out_gain, rng)
            self.params[f"{prefix}.bout"] = np.zeros(out_dim)

    @property
    def head_sizes(self) -> tuple[int, ...]:
        return self.layout.sizes

    def _mlp(self, prefix: str, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        acts = [x]
        h = x
        for k in range(len(self.hidden)):
            h = np.tanh(h @ self.params[f"{prefix}.W{k}"] + self.params[f"{prefix}.b{k}"])
            acts.append(h)
        return h @ self.params[f"{prefix}.Wout"] + self.params[f"{prefix}.bout"], acts

    def _check(self, obs) -> np.ndarray:
        x = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        if x.ndim != 2 or x.shape[1] != self.obs_dim:
            raise DimensionMismatch(f"observation width {x.shape[-1]} != {self.obs_dim}")
        return x

    def forward(self, obs) -> tuple[Distributions, np.ndarray]:
        x = self._check(obs)
        logits, _ = self._mlp("pi", x)
        value, _ = self._mlp("vf", x)
        return Distributions(logits, self.layout), value[:, 0]

    def copy(self) -> "PolicyNetwork":
        other = object.__new__(PolicyNetwork)
        other.obs_dim, other.layout, other.hidden = self.obs_dim, self.layout, self.hidden
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other


def forward(net: PolicyNetwork, obs) -> tuple[Distributions, np.ndarray]:
    return net.forward(obs)


def sample_action(dists: Distributions, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """One independent draw per head for a single observation."""
    probs = dists.probs[0]
    cum = np.cumsum(probs, axis=-1)
    u = rng.random(len(dists.layout.sizes))
    a = (cum < u[:, None]).sum(axis=-1)
    a = np.minimum(a, np.array(dists.layout.sizes) - 1)
    return a.astype(np.int64), float(dists.log_prob(a[None, :])[0])


def greedy_action(net: PolicyNetwork, obs) -> np.ndarray:
    dists, _ = net.forward(obs)
    return np.argmax(dists.logits[0], axis=-1).astype(np.int64)


# -- advantages ------------------------------------------------------------------

def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray, last_value: float,
                gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """``dones[t]`` marks that the episode ended after step t."""
    n = len(rewards)
    adv = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        nonterminal = 1.0 - float(dones[t])
        next_value = last_value if t == n - 1 else values[t + 1]
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        running = delta + gamma * lam * nonterminal * running
        adv[t] = running
    return adv, adv + np.asarray(values, dtype=float)


@dataclass
class RolloutBuffer:
    obs: np.ndarray
    actions: np.ndarray
    masks: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    advantages: np.ndarray = field(default=None)
    returns: np.ndarray = field(default=None)

    def __len__(self) -> int:
        return len(self.rewards)


# -- loss and gradients ----------------------------------------------------------

def _mlp_backward(net: PolicyNetwork, prefix: str, acts: list[np.ndarray], d_out: np.ndarray,
                  grads: dict[str, np.ndarray]) -> None:
    h = acts[-1]
    grads[f"{prefix}.Wout"] = h.T @ d_out
    grads[f"{prefix}.bout"] = d_out.sum(axis=0)
    dh = d_out @ net.params[f"{prefix}.Wout"].T
    for k in range(len(net.hidden) - 1, -1, -1):
        dz = dh * (1.0 - acts[k + 1] ** 2)
        grads[f"{prefix}.W{k}"] = acts[k].T @ dz
        grads[f"{prefix}.b{k}"] = dz.sum(axis=0)
        if k:
            dh = dz @ net.params[f"{prefix}.W{k}"].T


def loss_and_grads(net: PolicyNetwork, obs: np.ndarray, actions: np.ndarray, masks: np.ndarray,
                   old_log_probs: np.ndarray, advantages: np.ndarray, returns: np.ndarray,
                   hp: PpoHyperparams, ent_coef: float) -> tuple[dict, dict[str, np.ndarray]]:
    x = net._check(obs)
    b = x.shape[0]
    logits, pi_acts = net._mlp("pi", x)
    value_out, vf_acts = net._mlp("vf", x)
    dists = Distributions(logits, net.layout)
    m = masks if hp.masked else np.ones_like(masks)

    logp = dists.log_prob(actions, m)
    ratio = np.exp(logp - old_log_probs)
    surr1 = ratio * advantages
    surr2 = np.clip(ratio, 1 - hp.clip_eps, 1 + hp.clip_eps) * advantages
    policy_loss = -np.mean(np.minimum(surr1, surr2))
    per_head_h = -(dists.probs * dists._safe).sum(axis=-1)  # (B, N)
    entropy = (per_head_h * m).sum(axis=1)
    v = value_out[:, 0]
    target = returns / hp.value_scale
    value_loss = np.mean((v - target) ** 2)
    loss = policy_loss + hp.value_coef * value_loss - ent_coef * entropy.mean()

    # policy surrogate: d/dlogp of -min(...) is -A*ratio where the unclipped branch is active
    d_logp = -np.where(surr1 <= surr2, advantages, 0.0) * ratio / b
    onehot = np.zeros_like(dists.probs)
    np.put_along_axis(onehot, actions[:, :, None], 1.0, axis=-1)
    d_padded = d_logp[:, None, None] * m[:, :, None] * (onehot - dists.probs)
    # entropy: dH/dz_j = -p_j (log p_j + H)
    d_padded += (ent_coef / b) * m[:, :, None] * dists.probs * (dists._safe + per_head_h[:, :, None])
    d_logits = d_padded[:, net.layout.valid]

    grads: dict[str, np.ndarray] = {}
    _mlp_backward(net, "pi", pi_acts, d_logits, grads)
    d_v = (hp.value_coef * 2.0 / b) * (v - target)
    _mlp_backward(net, "vf", vf_acts, d_v[:, None], grads)

    stats = {
        "loss": float(loss),
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": float(entropy.mean()),
        "approx_kl": float(np.mean(old_log_probs - logp)),
        "clip_fraction": float(np.mean(np.abs(ratio - 1) > hp.clip_eps)),
    }
    return stats, grads


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.betas, self.eps = lr, tuple(betas), eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


def ppo_update(net: PolicyNetwork, opt: Adam, buf: RolloutBuffer, hp: PpoHyperparams, ent_coef: float,
               rng: np.random.Generator, dump_dir: str | Path | None = None) -> dict:
    adv = buf.advantages
    if hp.normalize_advantage and len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    n = len(buf)
    totals: dict[str, float] = {}
    count = 0
    for _ in range(hp.epochs):
        order = rng.permutation(n)
        for start in range(0, n, hp.minibatch):
            idx = order[start:start + hp.minibatch]
            stats, grads = loss_and_grads(net, buf.obs[idx], buf.actions[idx], buf.masks[idx], buf.log_probs[idx],
                                          adv[idx], buf.returns[idx], hp, ent_coef)
            if not np.isfinite(stats["loss"]) or not all(np.isfinite(g).all() for g in grads.values()):
                path = None
                if dump_dir is not None:
                    path = str(Path(dump_dir) / "nonfinite_batch.npz")
                    Path(dump_dir).mkdir(parents=True, exist_ok=True)
                    np.savez(path, obs=buf.obs[idx], actions=buf.actions[idx], masks=buf.masks[idx],
                             log_probs=buf.log_probs[idx], advantages=adv[idx], returns=buf.returns[idx])
                raise NonFiniteLoss(f"non-finite loss {stats['loss']}", path)
            stats["grad_norm"] = clip_grad_norm(grads, hp.max_grad_norm)
            opt.step(net.params, grads)
            for k, v in stats.items():
                totals[k] = totals.get(k, 0.0) + v
            count += 1
    return {k: v / count for k, v in totals.items()}


# -- checkpoints -----------------------------------------------------------------

@dataclass
class Checkpoint:
    net: PolicyNetwork
    opt: Adam
    step: int
    config_hash: str
    state: dict


def save_checkpoint(path: str | Path, net: PolicyNetwork, opt: Adam, step: int, config_hash: str = "",
                    state: dict | None = None) -> Path:
    tensors = [(f"net/{k}", v) for k, v in net.params.items()]
    tensors += [(f"adam_m/{k}", v) for k, v in opt.m.items()]
    tensors += [(f"adam_v/{k}", v) for k, v in opt.v.items()]
    table = []
    blobs = []
    offset = 0
    for name, arr in tensors:
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "model_version": MODEL_VERSION,
        "step": int(step),
        "config_hash": config_hash,
        "arch": {"obs_dim": net.obs_dim, "head_sizes": list(net.head_sizes), "hidden": list(net.hidden)},
        "adam": {"t": opt.t, "lr": opt.lr, "betas": list(opt.betas), "eps": opt.eps},
        "dtype": "float64",
        "tensors": table,
        "state": state or {},
    }
    head = json.dumps(header, sort_keys=True).encode()
    body = MAGIC + struct.pack("<Q", len(head)) + head + b"".join(blobs)
    data = body + hashlib.sha256(body).digest()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8 + 32 or not data.startswith(MAGIC):
        raise CorruptCheckpoint(f"{path}: not a checkpoint")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpoint(f"{path}: integrity hash mismatch")
    (hlen,) = struct.unpack("<Q", body[len(MAGIC):len(MAGIC) + 8])
    start = len(MAGIC) + 8
    try:
        header = json.loads(body[start:start + hlen])
    except ValueError as exc:
        raise CorruptCheckpoint(f"{path}: unreadable header") from exc
    if header.get("model_version") != MODEL_VERSION:
        raise CorruptCheckpoint(f"{path}: model version {header.get('model_version')!r}")
    blob = body[start + hlen:]
    arch = header["arch"]
    net = PolicyNetwork(arch["obs_dim"], arch["head_sizes"], arch["hidden"], seed=0)
    adam = header["adam"]
    opt = Adam(net.params, adam["lr"], adam["betas"], adam["eps"])
    opt.t = adam["t"]
    for entry in header["tensors"]:
        raw = blob[entry["offset"]:entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise CorruptCheckpoint(f"{path}: tensor {entry['name']} truncated")
        arr = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).copy()
        group, name = entry["name"].split("/", 1)
        {"net": net.params, "adam_m": opt.m, "adam_v": opt.v}[group][name] = arr
    return Checkpoint(net, opt, header["step"], header["config_hash"], header["state"])
