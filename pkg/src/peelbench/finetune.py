"""Reward-model regression, preference-weighted residual finetuning, and
the baseline training schemes it is compared against.

The reward model regresses the per-step hybrid reward from (latent,
action) pairs and exposes its penultimate feature; the residual policy
learns a weighted behavioral-cloning correction on top of a frozen
diffusion base; alternative schemes reweight, filter, or retrain
instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError
from .nn import Adam, DenseNet, params_hash
from .policy import ACTION_DIM, Z_DIM, Action, DiffusionPolicy, clamp_action
from .seeding import derive_seed, rng_from

SCHEMES = (
    "ours",
    "one-step-advantage",
    "binary-filter",
    "iql-weighted",
    "no-residual",
    "from-scratch",
)
REWARD_SOURCES = ("annotated", "model-predicted")

HIDDEN_DIM = 64


@dataclass(frozen=True)
class FinetuneConfig:
    """Hyperparameters of reward-weighted finetuning."""

    scheme: str = "ours"
    beta: float = 5.0
    alpha_reg: float = 1e-3
    filter_fraction: float = 0.5
    iql_expectile: float = 0.7
    iql_gamma: float = 0.99
    iql_target_period: int = 100
    iql_steps: int = 600
    iql_clip: float = 20.0
    reward_source: str = "model-predicted"
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ContractViolationError(f"unknown scheme {self.scheme!r}")
        if self.beta <= 0.0:
            raise ContractViolationError("beta must be positive")
        if self.alpha_reg < 0.0:
            raise ContractViolationError("alpha_reg must be nonnegative")
        if not 0.0 < self.filter_fraction <= 1.0:
            raise ContractViolationError("filter_fraction must lie in (0,1]")
        if not 0.5 < self.iql_expectile < 1.0:
            raise ContractViolationError("iql_expectile must lie in (0.5,1)")
        if self.reward_source not in REWARD_SOURCES:
            raise ContractViolationError(f"unknown reward_source {self.reward_source!r}")


class RewardModel:
    """Three-layer MLP r(z, a) exposing its penultimate 64-dim feature."""

    def __init__(self, z_dim: int = Z_DIM, action_dim: int = ACTION_DIM, seed: int = 0):
        self.z_dim = int(z_dim)
        self.action_dim = int(action_dim)
        self.net = DenseNet(
            [self.z_dim + self.action_dim, HIDDEN_DIM, HIDDEN_DIM, 1],
            ["relu", "relu", "identity"],
            dropout_rate=0.0,
            seed=seed,
        )

    def params(self):
        return self.net.params()

    def set_params(self, arrays):
        self.net.set_params(arrays)

    def param_hash(self) -> str:
        return params_hash(self.params())

    def forward_batch(self, z: np.ndarray, a: np.ndarray):
        x = np.concatenate([z, a], axis=1)
        out, cache = self.net.forward(x)
        # Penultimate feature: activation of the last hidden layer.
        h = cache["layers"][-2][2].copy()
        return out[:, 0], h, cache

    def predict(self, z: np.ndarray, a: np.ndarray) -> tuple[float, np.ndarray]:
        r, h, _ = self.forward_batch(
            np.asarray(z, dtype=float)[None, :], np.asarray(a, dtype=float)[None, :]
        )
        return float(r[0]), h[0]

    def describe(self) -> dict:
        return {"kind": "reward-model", "z_dim": self.z_dim,
                "action_dim": self.action_dim, "net": self.net.describe()}


def predict_reward(model: RewardModel, z: np.ndarray, a: np.ndarray):
    return model.predict(z, a)


def reward_model_loss_and_grads(model: RewardModel, z, a, r):
    """Mean squared error of r(z,a) against targets; returns grads too."""
    r = np.asarray(r, dtype=float)
    pred, _, cache = model.forward_batch(z, a)
    err = pred - r
    loss = float(np.mean(err**2))
    dout = (2.0 * err / err.size)[:, None]
    grads, _ = model.net.backward(cache, dout)
    return loss, grads


def train_reward_model(
    dataset: list[tuple[np.ndarray, np.ndarray, float]],
    epochs: int = 60,
    seed: int = 0,
    lr: float = 1e-3,
    batch_size: int = 64,
) -> tuple[RewardModel, float]:
    """Fit the reward regressor; returns (model, final epoch mean loss)."""
    if not dataset:
        raise ContractViolationError("reward dataset must be nonempty")
    zs = np.stack([np.asarray(z, dtype=float) for z, _, _ in dataset])
    acts = np.stack([np.asarray(a, dtype=float) for _, a, _ in dataset])
    rs = np.array([float(r) for _, _, r in dataset])
    if np.any(rs < 0.0) or np.any(rs > 1.0):
        raise ContractViolationError("rewards must lie in [0,1]")
    model = RewardModel(z_dim=zs.shape[1], action_dim=acts.shape[1],
                        seed=derive_seed(seed, "reward-model"))
    opt = Adam(lr=lr)
    n = len(dataset)
    final = 0.0
    for epoch in range(epochs):
        order = rng_from(seed, "rm-order", epoch).permutation(n)
        losses = []
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            loss, grads = reward_model_loss_and_grads(model, zs[idx], acts[idx], rs[idx])
            opt.update(model, grads)
            losses.append(loss)
        final = float(np.mean(losses))
    return model, final


#: Hidden width of the residual MLP. The correction must resolve small
#: per-step action differences (sub-millimetre depth adjustments), which
#: needs more capacity than the reward model's feature width.
RESIDUAL_HIDDEN = 256


class ResidualPolicy:
    """Two-layer MLP correction conditioned on [z, a_base, h]."""

    def __init__(self, z_dim: int = Z_DIM, action_dim: int = ACTION_DIM,
                 h_dim: int = HIDDEN_DIM, seed: int = 0,
                 hidden_dim: int = RESIDUAL_HIDDEN):
        self.z_dim, self.action_dim, self.h_dim = int(z_dim), int(action_dim), int(h_dim)
        self.hidden_dim = int(hidden_dim)
        self.net = DenseNet(
            [self.z_dim + self.action_dim + self.h_dim, self.hidden_dim,
             self.action_dim],
            ["relu", "identity"],
            dropout_rate=0.0,
            seed=seed,
        )

    def params(self):
        return self.net.params()

    def set_params(self, arrays):
        self.net.set_params(arrays)

    def param_hash(self) -> str:
        return params_hash(self.params())

    def forward_batch(self, z, a_base, h):
        x = np.concatenate([z, a_base, h], axis=1)
        return self.net.forward(x)

    def correction(self, z: np.ndarray, a_base: np.ndarray, h: np.ndarray) -> np.ndarray:
        out, _ = self.forward_batch(
            np.asarray(z, float)[None, :],
            np.asarray(a_base, float)[None, :],
            np.asarray(h, float)[None, :],
        )
        return out[0]

    def describe(self) -> dict:
        return {"kind": "residual-policy", "z_dim": self.z_dim,
                "action_dim": self.action_dim, "h_dim": self.h_dim,
                "hidden_dim": self.hidden_dim, "net": self.net.describe()}


def residual_loss(batch, residual: ResidualPolicy, alpha_reg: float):
    """Weighted imitation of (a_data - a_base) plus magnitude penalty.

    batch = (z, a_data, a_base, h, w) arrays; returns (loss, grads).
    """
    z, a_data, a_base, h, w = (np.asarray(x, dtype=float) for x in batch)
    out, cache = residual.forward_batch(z, a_base, h)
    target = a_data - a_base
    diff = out - target
    B = out.shape[0]
    loss = float(np.mean(w * np.sum(diff**2, axis=1))) + alpha_reg * float(
        np.mean(np.sum(out**2, axis=1))
    )
    dout = (2.0 * w[:, None] * diff + 2.0 * alpha_reg * out) / B
    grads, _ = residual.net.backward(cache, dout)
    return loss, grads


def compose_action(a_base: np.ndarray, a_res: np.ndarray) -> Action:
    """Base action plus residual correction, clamped to per-step limits."""
    a_base = np.asarray(a_base, dtype=float)
    a_res = np.asarray(a_res, dtype=float)
    if a_base.shape != a_res.shape:
        raise ContractViolationError("action dims must match")
    return clamp_action(a_base + a_res)


def compute_weights(rewards: np.ndarray, beta: float) -> np.ndarray:
    """Exponential preference weights, exactly mean-1."""
    r = np.asarray(rewards, dtype=float)
    if not np.all(np.isfinite(r)):
        raise ContractViolationError("rewards must be finite")
    e = np.exp(beta * (r - np.max(r)))
    return e / np.mean(e)


def _expectile_grad(u: np.ndarray, tau: float) -> np.ndarray:
    """d/du of |tau - 1[u<0]| * u^2."""
    w = np.where(u < 0.0, 1.0 - tau, tau)
    return 2.0 * w * u


def _train_iql(z, a, r, z_next, done, cfg: FinetuneConfig, seed: int):
    """Expectile-regressed V and bootstrapped Q; returns advantages."""
    zd, ad = z.shape[1], a.shape[1]
    q_net = DenseNet([zd + ad, HIDDEN_DIM, 1], ["relu", "identity"],
                     seed=derive_seed(seed, "iql-q"))
    v_net = DenseNet([zd, HIDDEN_DIM, 1], ["relu", "identity"],
                     seed=derive_seed(seed, "iql-v"))
    q_target = DenseNet([zd + ad, HIDDEN_DIM, 1], ["relu", "identity"], seed=0)
    q_target.set_params([p.copy() for p in q_net.params()])
    opt_q, opt_v = Adam(lr=cfg.lr), Adam(lr=cfg.lr)
    n = z.shape[0]
    xqa = np.concatenate([z, a], axis=1)
    for step in range(cfg.iql_steps):
        idx = rng_from(seed, "iql-batch", step).integers(0, n, size=min(cfg.batch_size, n))
        # V update: expectile regression of V(z) toward Q_target(z, a).
        qt, _ = q_target.forward(xqa[idx])
        v, v_cache = v_net.forward(z[idx])
        u = qt[:, 0] - v[:, 0]
        dv = -_expectile_grad(u, cfg.iql_expectile) / u.size
        v_grads, _ = v_net.backward(v_cache, dv[:, None])
        opt_v.update(v_net, v_grads)
        # Q update: one-step bootstrap toward r + gamma * V(z').
        vn, _ = v_net.forward(z_next[idx])
        target = r[idx] + cfg.iql_gamma * vn[:, 0] * (1.0 - done[idx])
        q, q_cache = q_net.forward(xqa[idx])
        uq = q[:, 0] - target
        dq = 2.0 * uq / uq.size
        q_grads, _ = q_net.backward(q_cache, dq[:, None])
        opt_q.update(q_net, q_grads)
        if (step + 1) % cfg.iql_target_period == 0:
            q_target.set_params([p.copy() for p in q_net.params()])
    q_all, _ = q_net.forward(xqa)
    v_all, _ = v_net.forward(z)
    return q_all[:, 0] - v_all[:, 0], v_net, q_net


def scheme_weights(
    trajectories: list[dict], cfg: FinetuneConfig, seed: int = 0
) -> np.ndarray:
    """Per-step training weights for a scheme, pooled over trajectories.

    Each trajectory dict needs "z" (T,128) and "rewards" (T,). Weights
    for ours/one-step/iql have mean 1 over retained steps; binary-filter
    returns 0/1-scaled masks whose retained weights are exactly 1.
    """
    if not trajectories:
        raise ContractViolationError("need at least one trajectory")
    rewards = [np.asarray(t["rewards"], dtype=float) for t in trajectories]
    flat_r = np.concatenate(rewards)

    if cfg.scheme in ("ours", "no-residual", "from-scratch"):
        return compute_weights(flat_r, cfg.beta)

    if cfg.scheme == "one-step-advantage":
        adv = np.concatenate([r - np.mean(r) for r in rewards])
        return compute_weights(adv, cfg.beta)

    if cfg.scheme == "binary-filter":
        out = []
        for r in rewards:
            T = r.size
            keep = int(np.ceil(cfg.filter_fraction * T))
            # Stable sort on (-reward, index): ties go to earlier steps.
            order = np.lexsort((np.arange(T), -r))
            mask = np.zeros(T)
            mask[order[:keep]] = 1.0
            out.append(mask)
        return np.concatenate(out)

    if cfg.scheme == "iql-weighted":
        zs = [np.asarray(t["z"], dtype=float) for t in trajectories]
        acts = [np.asarray(t["actions"], dtype=float) for t in trajectories]
        z_all, a_all, r_all, z_next, done = [], [], [], [], []
        for z, a, r in zip(zs, acts, rewards):
            T = z.shape[0]
            for t in range(T):
                z_all.append(z[t])
                a_all.append(a[t])
                r_all.append(r[t])
                z_next.append(z[t + 1] if t + 1 < T else z[t])
                done.append(1.0 if t + 1 == T else 0.0)
        adv, _, _ = _train_iql(
            np.stack(z_all), np.stack(a_all), np.array(r_all),
            np.stack(z_next), np.array(done), cfg, seed,
        )
        w = np.clip(np.exp(cfg.beta * adv), 0.0, cfg.iql_clip)
        mean = np.mean(w)
        if mean <= 0.0:
            raise ContractViolationError("degenerate advantage weights")
        return w / mean

    raise ContractViolationError(f"unknown scheme {cfg.scheme!r}")


@dataclass
class FinetuneResult:
    """Artifacts and bookkeeping of one finetune run."""

    scheme: str
    residual: ResidualPolicy | None
    policy: DiffusionPolicy | None
    base_hash_before: str
    base_hash_after: str
    final_loss: float
    manifest: dict = field(default_factory=dict)


#: Frozen-base samples drawn per dataset step for the residual's training
#: set. With a single draw the regression can fold the base action into its
#: z-dependent term (treating a_base as noise), so the learned correction is
#: only right for that one draw; several draws per step force the net to
#: model the -a_base dependence, letting composition cancel base sampling
#: error for any draw at evaluation time.
BASE_DRAWS_PER_STEP = 4


def _base_actions(base: DiffusionPolicy, z: np.ndarray, ti: int, seed: int,
                  draw: int = 0):
    """Regenerate frozen-base actions with per-(traj, step, draw) seeds."""
    out = np.empty((z.shape[0], ACTION_DIM))
    for si in range(z.shape[0]):
        a = base.sample_normalized(
            z[si], derive_seed(seed, "a-base", ti, si, draw))
        out[si] = clamp_action(base.denormalize_action(a)).delta
    return out


def encode_trajectories(base: DiffusionPolicy, trajectories: list[dict]) -> None:
    """Fill each trajectory dict with eval-mode latents under base."""
    for traj in trajectories:
        if "z" not in traj:
            z, _ = base._encode_batch(traj["observations"], mode="eval")
            traj["z"] = z


def finetune(
    base: DiffusionPolicy,
    trajectories: list[dict],
    reward_model: RewardModel | None,
    cfg: FinetuneConfig,
    seed: int = 0,
) -> FinetuneResult:
    """Train the configured scheme against a frozen diffusion base.

    Trajectory dicts carry "observations" (list), "actions" (T,3) and
    "rewards" (T,); latents are computed once with the frozen base.
    """
    base_hash_before = base.param_hash()
    encode_trajectories(base, trajectories)

    if cfg.reward_source == "model-predicted":
        if reward_model is None:
            raise ContractViolationError(
                "model-predicted reward_source needs a reward model"
            )
        weight_trajs = []
        for traj in trajectories:
            pred, _, _ = reward_model.forward_batch(
                traj["z"], np.asarray(traj["actions"], dtype=float)
            )
            weight_trajs.append({"z": traj["z"], "actions": traj["actions"],
                                 "rewards": pred})
    else:
        weight_trajs = trajectories

    weights = scheme_weights(weight_trajs, cfg, seed=derive_seed(seed, "scheme"))

    obs_flat = [o for t in trajectories for o in t["observations"]]
    acts_flat = np.concatenate(
        [np.asarray(t["actions"], dtype=float) for t in trajectories]
    )
    z_flat = np.concatenate([t["z"] for t in trajectories])

    if cfg.scheme in ("no-residual", "from-scratch"):
        if cfg.scheme == "no-residual":
            policy = base.clone()
        else:
            policy = DiffusionPolicy(
                state_dim=base.state_encoder.in_dim,
                T=base.T,
                beta_start=float(base.betas[0]),
                beta_end=float(base.betas[-1]),
                seed=derive_seed(seed, "fresh-policy"),
            )
            policy.fit_action_normalizer(acts_flat)
        final = _train_weighted_diffusion(
            policy, obs_flat, acts_flat, weights, cfg, seed
        )
        result_residual = None
        result_policy = policy
    else:
        rows_z, rows_a, rows_ab, rows_h, rows_w = [], [], [], [], []
        lo = 0
        for ti, traj in enumerate(trajectories):
            z = traj["z"]
            T = z.shape[0]
            a_data = np.asarray(traj["actions"], dtype=float)
            w_traj = weights[lo : lo + T]
            for draw in range(BASE_DRAWS_PER_STEP):
                ab = _base_actions(base, z, ti, seed, draw=draw)
                if reward_model is not None:
                    _, h, _ = reward_model.forward_batch(z, ab)
                else:
                    h = np.zeros((T, HIDDEN_DIM))
                rows_z.append(z)
                rows_a.append(a_data)
                rows_ab.append(ab)
                rows_h.append(h)
                rows_w.append(w_traj)
            lo += T
        residual = ResidualPolicy(
            z_dim=z_flat.shape[1], seed=derive_seed(seed, "residual")
        )
        final = _train_residual(
            residual,
            np.concatenate(rows_z), np.concatenate(rows_a),
            np.concatenate(rows_ab), np.concatenate(rows_h),
            np.concatenate(rows_w), cfg, seed,
        )
        result_residual = residual
        result_policy = None

    base_hash_after = base.param_hash()
    retained = weights > 0.0
    manifest = {
        "scheme": cfg.scheme,
        "beta": cfg.beta,
        "alpha_reg": cfg.alpha_reg,
        "reward_source": cfg.reward_source,
        "seed": seed,
        "base_hash": base_hash_before,
        "n_steps": int(weights.size),
        "n_retained": int(np.sum(retained)),
        "mean_weight_retained": float(np.mean(weights[retained])),
        "final_loss": final,
    }
    return FinetuneResult(
        scheme=cfg.scheme,
        residual=result_residual,
        policy=result_policy,
        base_hash_before=base_hash_before,
        base_hash_after=base_hash_after,
        final_loss=final,
        manifest=manifest,
    )


def _train_residual(residual, z, a_data, a_base, h, w, cfg: FinetuneConfig, seed):
    keep = w > 0.0
    z, a_data, a_base, h, w = z[keep], a_data[keep], a_base[keep], h[keep], w[keep]
    n = z.shape[0]
    if n == 0:
        raise ContractViolationError("no retained steps to train on")
    opt = Adam(lr=cfg.lr)
    final = 0.0
    for epoch in range(cfg.epochs):
        order = rng_from(seed, "res-order", epoch).permutation(n)
        losses = []
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            loss, grads = residual_loss(
                (z[idx], a_data[idx], a_base[idx], h[idx], w[idx]),
                residual, cfg.alpha_reg,
            )
            opt.update(residual, grads)
            losses.append(loss)
        final = float(np.mean(losses))
    return final


def _train_weighted_diffusion(policy, observations, actions, weights, cfg, seed):
    keep = weights > 0.0
    obs = [o for o, k in zip(observations, keep) if k]
    acts = np.asarray(actions, dtype=float)[keep]
    w = np.asarray(weights, dtype=float)[keep]
    n = len(obs)
    if n == 0:
        raise ContractViolationError("no retained steps to train on")
    opt = Adam(lr=cfg.lr)
    final = 0.0
    step = 0
    for epoch in range(cfg.epochs):
        order = rng_from(seed, "wd-order", epoch).permutation(n)
        losses = []
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            loss, grads = policy.diffusion_train_step(
                [obs[i] for i in idx], acts[idx],
                seed=derive_seed(seed, "wd-step", step), weights=w[idx],
            )
            opt.update(policy, grads)
            losses.append(loss)
            step += 1
        final = float(np.mean(losses))
    return final
