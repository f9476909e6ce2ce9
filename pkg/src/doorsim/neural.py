"""Minimal dense-network stack: tanh MLPs, Gaussian policy heads,
hand-written reverse-mode gradients, Adam with global-norm clipping, and a
bit-exact JSON checkpoint format.

Everything is float64 numpy.  Batch reductions use numpy's fixed
left-to-right accumulation, so gradients of a summed loss do not depend on
how a batch was assembled.
"""

import base64
import json
import math
from dataclasses import dataclass

import numpy as np

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_LOG_2PI = math.log(2.0 * math.pi)


class CheckpointError(RuntimeError):
    """Checkpoint file malformed or incompatible with the requested model."""


@dataclass
class Mlp:
    """Fully connected net: tanh on hidden layers, linear output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def _orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))  # make the decomposition unique
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


def mlp_init(sizes, rng: np.random.Generator, hidden_gain: float = math.sqrt(2.0),
             final_gain: float = 1.0) -> Mlp:
    """Orthogonal init; a small final_gain keeps initial policy outputs near zero."""
    weights, biases = [], []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = final_gain if i == len(sizes) - 2 else hidden_gain
        weights.append(_orthogonal(rng, n_in, n_out, gain))
        biases.append(np.zeros(n_out))
    return Mlp(weights=weights, biases=biases)


def mlp_forward(net: Mlp, x: np.ndarray):
    """Returns (y, cache); x is (batch, in) or (in,)."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x.reshape(1, -1) if squeeze else x
    if h.shape[1] != net.weights[0].shape[0]:
        raise ValueError(f"input width {h.shape[1]} does not match net input {net.weights[0].shape[0]}")
    inputs = []
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        h = h @ w + b
        if i != last:
            h = np.tanh(h)
    y = h[0] if squeeze else h
    return y, (inputs, squeeze)


def mlp_backward(net: Mlp, cache, dy: np.ndarray):
    """Exact gradients of the affine/tanh chain.

    dy is dLoss/dy with y the linear output.  Returns (grads, dx) where
    grads matches net.params() ordering.
    """
    inputs, squeeze = cache
    g = np.asarray(dy, dtype=float)
    if squeeze:
        g = g.reshape(1, -1)
    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.biases)
    for i in range(len(net.weights) - 1, -1, -1):
        x_in = inputs[i]
        grads_w[i] = x_in.T @ g
        grads_b[i] = g.sum(axis=0)
        g = g @ net.weights[i].T
        if i > 0:
            # hidden activation was tanh(pre); tanh(pre) equals the next
            # layer's cached input, so d tanh = 1 - input^2
            g = g * (1.0 - x_in * x_in)
    dx = g[0] if squeeze else g
    grads = []
    for gw, gb in zip(grads_w, grads_b):
        grads.append(gw)
        grads.append(gb)
    return grads, dx


def gaussian_log_prob(mean, log_std, action):
    """Diagonal Gaussian log density, summed over the action dimension."""
    mean = np.asarray(mean, dtype=float)
    a = np.asarray(action, dtype=float)
    log_std = np.asarray(log_std, dtype=float)
    z = (a - mean) * np.exp(-log_std)
    return (-0.5 * z * z - log_std - 0.5 * _LOG_2PI).sum(axis=-1)


def tanh_correction(z):
    """sum_i log(1 - tanh(z_i)^2), evaluated stably via softplus."""
    z = np.asarray(z, dtype=float)
    # log(1 - tanh(z)^2) = 2 * (log 2 - z - softplus(-2z))
    sp = np.logaddexp(0.0, -2.0 * z)
    return (2.0 * (math.log(2.0) - z - sp)).sum(axis=-1)


def squashed_gaussian_log_prob(mean, log_std, z):
    """Log density of a = tanh(z) with z ~ N(mean, exp(log_std)^2)."""
    return gaussian_log_prob(mean, log_std, z) - tanh_correction(z)


class Normalizer:
    """Running per-feature mean/variance (parallel Welford merges).

    Updates happen at well-defined points only (e.g. once per rollout), so
    training stays a pure function of its configuration.
    """

    def __init__(self, dim: int, clip: float = 10.0):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 1e-4
        self.clip = clip

    def update(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=float).reshape(-1, len(self.mean))
        m = x.shape[0]
        if m == 0:
            return
        batch_mean = x.mean(axis=0)
        batch_var = x.var(axis=0)
        delta = batch_mean - self.mean
        total = self.count + m
        self.mean = self.mean + delta * (m / total)
        self.var = (self.var * self.count + batch_var * m
                    + delta * delta * (self.count * m / total)) / total
        self.count = total

    def normalize(self, x: np.ndarray) -> np.ndarray:
        z = (np.asarray(x, dtype=float) - self.mean) / np.sqrt(self.var + 1e-8)
        return np.clip(z, -self.clip, self.clip)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var + 1e-8)

    def arrays(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.mean": self.mean, f"{prefix}.var": self.var,
                f"{prefix}.count": np.array([self.count])}

    @staticmethod
    def from_arrays(prefix: str, arrays: dict) -> "Normalizer":
        norm = Normalizer(len(arrays[f"{prefix}.mean"]))
        norm.mean = np.array(arrays[f"{prefix}.mean"])
        norm.var = np.array(arrays[f"{prefix}.var"])
        norm.count = float(arrays[f"{prefix}.count"][0])
        return norm


@dataclass
class GaussianPolicy:
    """PPO-style policy: mean MLP plus a state-independent log-std vector.

    obs_norm, when present, standardizes raw observations before the net;
    its statistics are frozen between explicit updates and stored in
    checkpoints so evaluation sees the training-time mapping.
    """

    mean_net: Mlp
    log_std: np.ndarray
    obs_norm: Normalizer | None = None

    @property
    def act_dim(self) -> int:
        return len(self.log_std)

    def params(self) -> list[np.ndarray]:
        return self.mean_net.params() + [self.log_std]

    def net_input(self, obs) -> np.ndarray:
        return self.obs_norm.normalize(obs) if self.obs_norm is not None else np.asarray(obs, dtype=float)

    def mean_action(self, obs) -> np.ndarray:
        y, _ = mlp_forward(self.mean_net, self.net_input(obs))
        return y

    def sample(self, obs, rng: np.random.Generator):
        mean, _ = mlp_forward(self.mean_net, self.net_input(obs))
        log_std = np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)
        noise = rng.standard_normal(mean.shape)
        action = mean + np.exp(log_std) * noise
        return action, gaussian_log_prob(mean, log_std, action)

    def entropy(self) -> float:
        return float(self.log_std.sum() + 0.5 * self.act_dim * (1.0 + _LOG_2PI))


def make_gaussian_policy(obs_dim: int, act_dim: int, rng: np.random.Generator,
                         hidden: int = 64, normalize_obs: bool = True) -> GaussianPolicy:
    net = mlp_init((obs_dim, hidden, hidden, act_dim), rng, final_gain=0.01)
    norm = Normalizer(obs_dim) if normalize_obs else None
    return GaussianPolicy(mean_net=net, log_std=np.zeros(act_dim), obs_norm=norm)


@dataclass
class SquashedGaussianPolicy:
    """SAC-style policy: one trunk with mean and log-std heads, tanh squashing."""

    net: Mlp  # output width 2 * act_dim: [mean, log_std]
    act_dim: int

    def params(self) -> list[np.ndarray]:
        return self.net.params()

    def heads(self, obs):
        y, cache = mlp_forward(self.net, obs)
        mean = y[..., :self.act_dim]
        log_std = np.clip(y[..., self.act_dim:], LOG_STD_MIN, LOG_STD_MAX)
        raw_log_std = y[..., self.act_dim:]
        return mean, log_std, raw_log_std, cache

    def sample(self, obs, rng: np.random.Generator):
        """Returns (action in [-1,1], log_prob, aux) with aux carrying the
        pre-squash sample and heads for gradient computation."""
        mean, log_std, raw_log_std, cache = self.heads(obs)
        noise = rng.standard_normal(mean.shape)
        z = mean + np.exp(log_std) * noise
        action = np.tanh(z)
        logp = squashed_gaussian_log_prob(mean, log_std, z)
        aux = {"mean": mean, "log_std": log_std, "raw_log_std": raw_log_std,
               "z": z, "cache": cache}
        return action, logp, aux

    def mean_action(self, obs) -> np.ndarray:
        mean, _, _, _ = self.heads(obs)
        return np.tanh(mean)


def make_squashed_policy(obs_dim: int, act_dim: int, rng: np.random.Generator,
                         hidden: int = 64) -> SquashedGaussianPolicy:
    net = mlp_init((obs_dim, hidden, hidden, 2 * act_dim), rng, final_gain=0.01)
    return SquashedGaussianPolicy(net=net, act_dim=act_dim)


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def for_params(params) -> "AdamState":
        return AdamState(m=[np.zeros_like(p) for p in params],
                         v=[np.zeros_like(p) for p in params])


def global_grad_norm(grads) -> float:
    total = 0.0
    for g in grads:
        total += float((g * g).sum())
    return math.sqrt(total)


def clip_grads(grads, max_norm: float) -> float:
    """Scale grads in place to the given global norm; returns the pre-clip norm."""
    norm = global_grad_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


def adam_step(state: AdamState, params, grads, lr: float,
              max_grad_norm: float | None = None) -> float:
    """In-place Adam update with optional global-norm clipping.

    Returns the pre-clip gradient norm.
    """
    norm = clip_grads(grads, max_grad_norm) if max_grad_norm is not None else global_grad_norm(grads)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return norm


# -- checkpoints -------------------------------------------------------------

CHECKPOINT_VERSION = "doorsim_checkpoint_v1"


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape),
            "dtype": "<f8",
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(spec: dict) -> np.ndarray:
    raw = base64.b64decode(spec["data"])
    a = np.frombuffer(raw, dtype=spec["dtype"]).astype("<f8", copy=True)
    return a.reshape(spec["shape"])


def save_checkpoint(path: str, algorithm: str, arm: str, obs_dim: int, act_dim: int,
                    step: int, arrays: dict[str, np.ndarray], extra: dict | None = None) -> None:
    """JSON header plus base64 little-endian float64 payloads (bit exact)."""
    doc = {
        "format": CHECKPOINT_VERSION,
        "algorithm": algorithm,
        "arm": arm,
        "obs_dim": obs_dim,
        "act_dim": act_dim,
        "step": step,
        "extra": extra or {},
        "arrays": {name: _encode_array(a) for name, a in arrays.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path: str) -> dict:
    """Returns the checkpoint document with arrays decoded to float64."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: not valid JSON ({exc})") from exc
    if doc.get("format") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: format {doc.get('format')!r} != {CHECKPOINT_VERSION!r}")
    doc["arrays"] = {name: _decode_array(spec) for name, spec in doc["arrays"].items()}
    return doc


def mlp_arrays(prefix: str, net: Mlp) -> dict[str, np.ndarray]:
    out = {}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}.w{i}"] = w
        out[f"{prefix}.b{i}"] = b
    return out


def mlp_from_arrays(prefix: str, arrays: dict[str, np.ndarray]) -> Mlp:
    weights, biases = [], []
    i = 0
    while f"{prefix}.w{i}" in arrays:
        weights.append(np.array(arrays[f"{prefix}.w{i}"]))
        biases.append(np.array(arrays[f"{prefix}.b{i}"]))
        i += 1
    if not weights:
        raise CheckpointError(f"no arrays found under prefix {prefix!r}")
    return Mlp(weights=weights, biases=biases)
