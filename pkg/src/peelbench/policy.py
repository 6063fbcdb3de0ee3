"""Observation encoding and the DDPM-style diffusion base policy.

The policy encodes each observation into a 128-dim latent (64 visual +
64 proprioceptive/force), then an MLP denoiser conditioned on that
latent and a normalized timestep scalar runs ancestral denoising over a
short linear variance schedule to produce one delta end-effector action.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError
from .nn import ConvEncoder, DenseNet, params_hash
from .observe import IMAGE_HEIGHT, IMAGE_WIDTH, Observation
from .seeding import derive_seed, rng_from

ACTION_DIM = 3
Z_DIM = 128
#: Per-step |dx|, |dy| [m] and |dtheta| [rad] limits on emitted actions.
ACTION_LIMITS = np.array([0.03, 0.03, 0.3])
#: Train-mode crop window (height, width) before zero-padding back.
CROP_HEIGHT = 20
CROP_WIDTH = 28
#: Terminal cumulative signal fraction must fall below this.
ALPHA_BAR_CEILING = 0.05


@dataclass(frozen=True)
class EncodedObservation:
    """128-dim policy latent with its two components."""

    z: np.ndarray
    visual_feature: np.ndarray
    state_feature: np.ndarray

    def __post_init__(self):
        if self.z.shape != (Z_DIM,):
            raise ContractViolationError(f"z must be {Z_DIM}-dim")
        if not np.all(np.isfinite(self.z)):
            raise ContractViolationError("z must be finite")


@dataclass(frozen=True)
class Action:
    """Delta end-effector pose (dx, dy, dtheta) in the end-effector frame."""

    delta: np.ndarray
    clipped: int = 0

    def __post_init__(self):
        d = np.asarray(self.delta, dtype=float)
        object.__setattr__(self, "delta", d)
        if d.shape != (ACTION_DIM,):
            raise ContractViolationError("action must be a 3-vector")
        if not np.all(np.isfinite(d)):
            raise ContractViolationError("action must be finite")
        if np.any(np.abs(d) > ACTION_LIMITS + 1e-12):
            raise ContractViolationError("action exceeds per-step limits")


def clamp_action(delta: np.ndarray) -> Action:
    """Clamp a raw 3-vector to the per-step limits, counting clips."""
    d = np.asarray(delta, dtype=float)
    clipped = int(np.sum(np.abs(d) > ACTION_LIMITS))
    return Action(np.clip(d, -ACTION_LIMITS, ACTION_LIMITS), clipped)


def linear_beta_schedule(T: int, beta_start: float, beta_end: float) -> np.ndarray:
    betas = np.linspace(beta_start, beta_end, T)
    if not np.all((betas > 0.0) & (betas < 1.0)):
        raise ContractViolationError("betas must lie in (0,1)")
    if np.any(np.diff(betas) < 0.0):
        raise ContractViolationError("betas must be nondecreasing")
    alpha_bar = float(np.prod(1.0 - betas))
    if alpha_bar >= ALPHA_BAR_CEILING:
        raise ContractViolationError(
            f"terminal alpha-bar {alpha_bar:.4f} >= {ALPHA_BAR_CEILING}; "
            "increase T or beta_end so terminal corruption is near-isotropic"
        )
    return betas


class DiffusionPolicy:
    """Frozen-encoder-compatible diffusion policy over delta-pose actions."""

    def __init__(
        self,
        state_dim: int = 6,
        T: int = 16,
        beta_start: float = 1e-4,
        beta_end: float = 0.35,
        horizon: int = 1,
        dropout_rate: float = 0.1,
        seed: int = 0,
    ):
        if horizon != 1:
            raise ContractViolationError("only horizon 1 is implemented")
        self.T = int(T)
        self.horizon = int(horizon)
        self.betas = linear_beta_schedule(self.T, beta_start, beta_end)
        self.alphas = 1.0 - self.betas
        self.alpha_bars = np.cumprod(self.alphas)
        self.visual_encoder = ConvEncoder(
            IMAGE_HEIGHT, IMAGE_WIDTH, 2, out_dim=64,
            dropout_rate=dropout_rate, seed=derive_seed(seed, "visual"),
        )
        self.state_encoder = DenseNet(
            [state_dim, 64, 64], ["relu", "identity"],
            dropout_rate=dropout_rate, seed=derive_seed(seed, "state"),
        )
        self.denoiser = DenseNet(
            [ACTION_DIM + Z_DIM + 1, 64, 64, ACTION_DIM],
            ["relu", "relu", "identity"],
            dropout_rate=0.0, seed=derive_seed(seed, "denoiser"),
        )
        # Action normalizer: identity until fit to a dataset.
        self.action_low = -ACTION_LIMITS.copy()
        self.action_high = ACTION_LIMITS.copy()

    # ------------------------------------------------------------ params

    def params(self) -> list[np.ndarray]:
        return (
            self.visual_encoder.params()
            + self.state_encoder.params()
            + self.denoiser.params()
        )

    def set_params(self, arrays) -> None:
        arrays = list(arrays)
        nv = len(self.visual_encoder.params())
        ns = len(self.state_encoder.params())
        self.visual_encoder.set_params(arrays[:nv])
        self.state_encoder.set_params(arrays[nv : nv + ns])
        self.denoiser.set_params(arrays[nv + ns :])

    def param_hash(self) -> str:
        return params_hash(self.params() + [self.action_low, self.action_high])

    def clone(self) -> "DiffusionPolicy":
        twin = DiffusionPolicy(
            state_dim=self.state_encoder.in_dim,
            T=self.T,
            beta_start=float(self.betas[0]),
            beta_end=float(self.betas[-1]),
            horizon=self.horizon,
            dropout_rate=self.visual_encoder.dropout_rate,
            seed=0,
        )
        twin.set_params([a.copy() for a in self.params()])
        twin.action_low = self.action_low.copy()
        twin.action_high = self.action_high.copy()
        return twin

    def describe(self) -> dict:
        return {
            "kind": "diffusion-policy",
            "T": self.T,
            "horizon": self.horizon,
            "beta_start": float(self.betas[0]),
            "beta_end": float(self.betas[-1]),
            "state_dim": self.state_encoder.in_dim,
            "action_low": self.action_low.tolist(),
            "action_high": self.action_high.tolist(),
            "visual": self.visual_encoder.describe(),
            "state": self.state_encoder.describe(),
            "denoiser": self.denoiser.describe(),
        }

    # -------------------------------------------------------- normalizer

    def fit_action_normalizer(self, actions: np.ndarray) -> None:
        """Min-max per-dim normalization to [-1, 1] with a small pad."""
        a = np.asarray(actions, dtype=float)
        if a.ndim != 2 or a.shape[1] != ACTION_DIM or a.shape[0] == 0:
            raise ContractViolationError("actions must be (N, 3) and nonempty")
        low, high = a.min(axis=0), a.max(axis=0)
        span = np.maximum(high - low, 1e-6)
        self.action_low = low - 0.05 * span
        self.action_high = high + 0.05 * span

    def normalize_action(self, a: np.ndarray) -> np.ndarray:
        return 2.0 * (a - self.action_low) / (self.action_high - self.action_low) - 1.0

    def denormalize_action(self, a: np.ndarray) -> np.ndarray:
        return self.action_low + (a + 1.0) * (self.action_high - self.action_low) / 2.0

    # ---------------------------------------------------------- encoding

    @staticmethod
    def _crop_image(image: np.ndarray, seed: int) -> np.ndarray:
        rng = rng_from(seed, "crop")
        dr = int(rng.integers(0, IMAGE_HEIGHT - CROP_HEIGHT + 1))
        dc = int(rng.integers(0, IMAGE_WIDTH - CROP_WIDTH + 1))
        out = np.zeros_like(image)
        out[dr : dr + CROP_HEIGHT, dc : dc + CROP_WIDTH] = image[
            dr : dr + CROP_HEIGHT, dc : dc + CROP_WIDTH
        ]
        return out

    @staticmethod
    def state_input(obs: Observation) -> np.ndarray:
        return np.concatenate([obs.joint_angles, obs.force])

    def encode_observation(
        self, obs: Observation, mode: str = "eval", seed: int = 0
    ) -> EncodedObservation:
        z, _ = self._encode_batch([obs], mode=mode, seed=seed)
        return EncodedObservation(
            z=z[0], visual_feature=z[0, :64].copy(), state_feature=z[0, 64:].copy()
        )

    def _encode_batch(self, observations, mode="eval", seed=0):
        """Batched encoder forward; returns (z (B,128), caches)."""
        images = np.stack([o.depth_image for o in observations])
        if mode == "train":
            images = np.stack(
                [
                    self._crop_image(img, derive_seed(seed, "crop", i))
                    for i, img in enumerate(images)
                ]
            )
        states = np.stack([self.state_input(o) for o in observations])
        vis, vis_cache = self.visual_encoder.forward(
            images, mode=mode, seed=derive_seed(seed, "vis-drop")
        )
        st, st_cache = self.state_encoder.forward(
            states, mode=mode, seed=derive_seed(seed, "st-drop")
        )
        z = np.concatenate([vis, st], axis=1)
        return z, (vis_cache, st_cache)

    def _encoder_backward(self, caches, z_grad):
        vis_cache, st_cache = caches
        vis_grads, _ = self.visual_encoder.backward(vis_cache, z_grad[:, :64])
        st_grads, _ = self.state_encoder.backward(st_cache, z_grad[:, 64:])
        return vis_grads + st_grads

    # ---------------------------------------------------------- training

    def diffusion_train_step(self, observations, actions, seed: int, weights=None):
        """One epsilon-prediction MSE step; returns (loss, grads).

        Gradients align with params(): visual encoder, state encoder,
        then denoiser. Optional per-element weights scale each sample's
        squared error (mean-1 weights reduce to the unweighted loss).
        """
        if len(observations) == 0:
            raise ContractViolationError("batch must be nonempty")
        actions = np.asarray(actions, dtype=float)
        a_norm = self.normalize_action(actions)
        B = len(observations)
        if weights is None:
            w = np.ones(B)
        else:
            w = np.asarray(weights, dtype=float)
            if w.shape != (B,) or np.any(w < 0.0):
                raise ContractViolationError("weights must be (B,) nonnegative")
        z, enc_caches = self._encode_batch(observations, mode="train", seed=seed)
        rng = rng_from(seed, "diffusion")
        ts = rng.integers(1, self.T + 1, size=B)
        eps = rng.standard_normal((B, ACTION_DIM))
        ab = self.alpha_bars[ts - 1][:, None]
        a_noisy = np.sqrt(ab) * a_norm + np.sqrt(1.0 - ab) * eps
        x = np.concatenate([a_noisy, z, (ts / self.T)[:, None]], axis=1)
        eps_hat, cache = self.denoiser.forward(x)
        err = eps_hat - eps
        loss = float(np.sum(w[:, None] * err**2) / err.size)
        dout = 2.0 * w[:, None] * err / err.size
        den_grads, dx = self.denoiser.backward(cache, dout)
        z_grad = dx[:, ACTION_DIM : ACTION_DIM + Z_DIM]
        enc_grads = self._encoder_backward(enc_caches, z_grad)
        return loss, enc_grads + den_grads

    # ---------------------------------------------------------- sampling

    def sample_normalized(self, z: np.ndarray, seed: int) -> np.ndarray:
        """Ancestral denoising in normalized action space."""
        rng = rng_from(seed, "sample")
        a = rng.standard_normal(ACTION_DIM)
        for t in range(self.T, 0, -1):
            x = np.concatenate([a, z, [t / self.T]])
            eps_hat, _ = self.denoiser.forward(x, mode="eval")
            alpha = self.alphas[t - 1]
            ab = self.alpha_bars[t - 1]
            a = (a - self.betas[t - 1] / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(alpha)
            if t > 1:
                ab_prev = self.alpha_bars[t - 2]
                sigma = np.sqrt((1.0 - ab_prev) / (1.0 - ab) * self.betas[t - 1])
                a = a + sigma * rng.standard_normal(ACTION_DIM)
        return a

    def diffusion_sample(self, encoded: EncodedObservation, seed: int) -> Action:
        a = self.sample_normalized(encoded.z, seed)
        return clamp_action(self.denormalize_action(a))


def train_diffusion_policy(
    policy: DiffusionPolicy,
    observations,
    actions,
    epochs: int = 20,
    batch_size: int = 32,
    lr: float = 1e-3,
    seed: int = 0,
) -> list[float]:
    """Epsilon-prediction training loop; returns per-epoch mean losses."""
    from .nn import Adam

    actions = np.asarray(actions, dtype=float)
    if len(observations) != actions.shape[0] or actions.shape[0] == 0:
        raise ContractViolationError("observations and actions must align")
    policy.fit_action_normalizer(actions)
    opt = Adam(lr=lr)
    n = len(observations)
    losses = []
    step = 0
    for epoch in range(epochs):
        order = rng_from(seed, "order", epoch).permutation(n)
        epoch_losses = []
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            batch_obs = [observations[i] for i in idx]
            loss, grads = policy.diffusion_train_step(
                batch_obs, actions[idx], seed=derive_seed(seed, "step", step)
            )
            opt.update(policy, grads)
            epoch_losses.append(loss)
            step += 1
        losses.append(float(np.mean(epoch_losses)))
    return losses
