"""Small feedforward actor-critic with hand-written backward passes.

Parameters live as float64 numpy arrays. The actor outputs a diagonal
Gaussian through a global learnable log-std; the critic is an identical
trunk with scalar output. Gradients of every composed loss are exact
reverse-mode derivatives assembled by callers from the layer backward
helpers below, and are checked against central finite differences in the
test suite.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

LOG_STD_MIN = -4.0
LOG_STD_MAX = 1.0
HIDDEN_SIZES = (256, 128)

CKPT_MAGIC = b"JMPR"
CKPT_VERSION = 1


@dataclass
class PolicyParams:
    actor_w: list
    actor_b: list
    log_std: np.ndarray
    critic_w: list
    critic_b: list
    obs_dim: int
    act_dim: int


@dataclass
class GaussianDist:
    mean: np.ndarray
    log_std: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)


@dataclass
class OptState:
    m: list
    v: list
    step: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def _orthogonal(rng: np.random.Generator, shape, gain: float) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_policy(
    obs_dim: int,
    act_dim: int,
    seed: int,
    hidden=HIDDEN_SIZES,
    actor_out_gain: float = 0.01,
) -> PolicyParams:
    """Orthogonal init, gain 1.0 except the actor output layer."""
    rng = np.random.default_rng(seed)
    sizes = (obs_dim, *hidden)

    def make(out_dim, out_gain):
        ws, bs = [], []
        dims = (*sizes, out_dim)
        for i in range(len(dims) - 1):
            gain = out_gain if i == len(dims) - 2 else 1.0
            ws.append(_orthogonal(rng, (dims[i], dims[i + 1]), gain))
            bs.append(np.zeros(dims[i + 1]))
        return ws, bs

    actor_w, actor_b = make(act_dim, actor_out_gain)
    critic_w, critic_b = make(1, 1.0)
    return PolicyParams(
        actor_w=actor_w,
        actor_b=actor_b,
        log_std=np.zeros(act_dim),
        critic_w=critic_w,
        critic_b=critic_b,
        obs_dim=obs_dim,
        act_dim=act_dim,
    )


def _mlp_forward(ws, bs, x):
    """Returns (output, cache); hidden layers ELU, output linear."""
    acts = [x]
    pre = []
    h = x
    for i, (w, b) in enumerate(zip(ws, bs)):
        z = h @ w + b
        pre.append(z)
        h = elu(z) if i < len(ws) - 1 else z
        acts.append(h)
    return h, (acts, pre)


def _mlp_backward(ws, cache, dout):
    """Gradients of an _mlp_forward pass; returns (dws, dbs, dx)."""
    acts, pre = cache
    dws = [None] * len(ws)
    dbs = [None] * len(ws)
    d = dout
    for i in range(len(ws) - 1, -1, -1):
        if i < len(ws) - 1:
            d = d * elu_grad(pre[i])
        dws[i] = acts[i].T @ d
        dbs[i] = d.sum(axis=0)
        d = d @ ws[i].T
    return dws, dbs, d


def _as_batch(obs):
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim == 1:
        return obs[None, :], True
    return obs, False


def forward_actor(params: PolicyParams, obs) -> GaussianDist:
    batch, single = _as_batch(obs)
    if batch.shape[1] != params.obs_dim:
        raise ValueError(f"obs dim {batch.shape[1]} != {params.obs_dim}")
    mean, _ = _mlp_forward(params.actor_w, params.actor_b, batch)
    if single:
        mean = mean[0]
    log_std = np.clip(params.log_std, LOG_STD_MIN, LOG_STD_MAX)
    return GaussianDist(mean=mean, log_std=log_std)


def forward_actor_cached(params: PolicyParams, obs):
    batch, _ = _as_batch(obs)
    if batch.shape[1] != params.obs_dim:
        raise ValueError(f"obs dim {batch.shape[1]} != {params.obs_dim}")
    mean, cache = _mlp_forward(params.actor_w, params.actor_b, batch)
    return mean, cache


def actor_backward(params: PolicyParams, cache, dmean):
    dws, dbs, _ = _mlp_backward(params.actor_w, cache, dmean)
    return dws, dbs


def forward_critic(params: PolicyParams, obs):
    batch, single = _as_batch(obs)
    if batch.shape[1] != params.obs_dim:
        raise ValueError(f"obs dim {batch.shape[1]} != {params.obs_dim}")
    v, _ = _mlp_forward(params.critic_w, params.critic_b, batch)
    v = v[:, 0]
    return float(v[0]) if single else v


def forward_critic_cached(params: PolicyParams, obs):
    batch, _ = _as_batch(obs)
    v, cache = _mlp_forward(params.critic_w, params.critic_b, batch)
    return v[:, 0], cache


def critic_backward(params: PolicyParams, cache, dv):
    dws, dbs, _ = _mlp_backward(params.critic_w, cache, dv[:, None])
    return dws, dbs


def log_prob(dist: GaussianDist, action) -> np.ndarray:
    """Diagonal-Gaussian log density; batched over leading axes."""
    action = np.asarray(action, dtype=np.float64)
    z = (action - dist.mean) / dist.std
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(dist.log_std) \
        - 0.5 * dist.mean.shape[-1] * np.log(2 * np.pi)


def sample(dist: GaussianDist, rng: np.random.Generator):
    noise = rng.standard_normal(dist.mean.shape)
    action = dist.mean + dist.std * noise
    return action, log_prob(dist, action)


def entropy(dist: GaussianDist) -> float:
    return float(np.sum(dist.log_std) + 0.5 * dist.log_std.shape[-1]
                 * (1.0 + np.log(2 * np.pi)))


def param_arrays(params: PolicyParams) -> list:
    """Canonical flat ordering used by the optimizer and checkpoints."""
    out = []
    for w, b in zip(params.actor_w, params.actor_b):
        out.extend((w, b))
    out.append(params.log_std)
    for w, b in zip(params.critic_w, params.critic_b):
        out.extend((w, b))
    return out


def zero_grads(params: PolicyParams) -> list:
    return [np.zeros_like(a) for a in param_arrays(params)]


def set_param_arrays(params: PolicyParams, arrays: list) -> PolicyParams:
    """Rebuild a PolicyParams from arrays in canonical order."""
    it = iter(arrays)
    na = len(params.actor_w)
    nc = len(params.critic_w)
    actor_w, actor_b = [], []
    for _ in range(na):
        actor_w.append(next(it))
        actor_b.append(next(it))
    log_std = next(it)
    critic_w, critic_b = [], []
    for _ in range(nc):
        critic_w.append(next(it))
        critic_b.append(next(it))
    return PolicyParams(
        actor_w=actor_w,
        actor_b=actor_b,
        log_std=np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX),
        critic_w=critic_w,
        critic_b=critic_b,
        obs_dim=params.obs_dim,
        act_dim=params.act_dim,
    )


def init_opt(params: PolicyParams, lr: float = 3e-4) -> OptState:
    arrays = param_arrays(params)
    return OptState(
        m=[np.zeros_like(a) for a in arrays],
        v=[np.zeros_like(a) for a in arrays],
        lr=lr,
    )


def global_grad_norm(grads: list) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_grads(grads: list, max_norm: float) -> list:
    norm = global_grad_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        return [g * scale for g in grads]
    return grads


def opt_step(params: PolicyParams, grads: list, opt: OptState):
    """Bias-corrected adaptive-moment update; returns new (params, opt)."""
    arrays = param_arrays(params)
    step = opt.step + 1
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    new_arrays, new_m, new_v = [], [], []
    for a, g, m, v in zip(arrays, grads, opt.m, opt.v):
        m2 = b1 * m + (1 - b1) * g
        v2 = b2 * v + (1 - b2) * g * g
        a2 = a - opt.lr * (m2 / c1) / (np.sqrt(v2 / c2) + opt.eps)
        new_arrays.append(a2)
        new_m.append(m2)
        new_v.append(v2)
    new_params = set_param_arrays(params, new_arrays)
    new_opt = OptState(m=new_m, v=new_v, step=step, lr=opt.lr,
                       beta1=b1, beta2=b2, eps=opt.eps)
    return new_params, new_opt


# ---------------------------------------------------------------------------
# Checkpoint format (little-endian):
#   "JMPR" | u32 version | u32 stage | u8 mode | u32 proprio | u32 n_body
#   | u32 n_foot | u32 total | u32 act_dim
#   | u32 actor layers | per layer: u32 in, u32 out, f32 w row-major, f32 b
#   | f32 log_std | u32 critic layers | layers likewise
#   | u8 opt flag | if 1: u64 step, f64 lr/b1/b2/eps, per param f32 m, f32 v
# ---------------------------------------------------------------------------

def _pack_layers(ws, bs) -> bytes:
    parts = [struct.pack("<I", len(ws))]
    for w, b in zip(ws, bs):
        parts.append(struct.pack("<II", w.shape[0], w.shape[1]))
        parts.append(w.astype("<f4").tobytes())
        parts.append(b.astype("<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals if len(vals) > 1 else vals[0]

    def floats(self, count: int) -> np.ndarray:
        arr = np.frombuffer(self.data, dtype="<f4", count=count, offset=self.pos)
        self.pos += 4 * count
        return arr.astype(np.float64)


def _unpack_layers(r: _Reader):
    n = r.take("<I")
    ws, bs = [], []
    for _ in range(n):
        rows, cols = r.take("<II")
        ws.append(r.floats(rows * cols).reshape(rows, cols))
        bs.append(r.floats(cols))
    return ws, bs


def save_checkpoint(
    params: PolicyParams,
    stage_index: int,
    spec_header: tuple,
    opt: OptState | None = None,
) -> bytes:
    mode, proprio, n_body, n_foot, total = spec_header
    parts = [
        CKPT_MAGIC,
        struct.pack("<II", CKPT_VERSION, stage_index),
        struct.pack("<BIIII", mode, proprio, n_body, n_foot, total),
        struct.pack("<I", params.act_dim),
        _pack_layers(params.actor_w, params.actor_b),
        params.log_std.astype("<f4").tobytes(),
        _pack_layers(params.critic_w, params.critic_b),
    ]
    if opt is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts.append(struct.pack("<B", 1))
        parts.append(struct.pack("<Qdddd", opt.step, opt.lr, opt.beta1,
                                 opt.beta2, opt.eps))
        for m, v in zip(opt.m, opt.v):
            parts.append(np.asarray(m).astype("<f4").tobytes())
            parts.append(np.asarray(v).astype("<f4").tobytes())
    return b"".join(parts)


def load_checkpoint(data: bytes):
    """Returns (params, stage_index, spec_header, opt_or_None)."""
    if data[:4] != CKPT_MAGIC:
        raise ValueError("bad checkpoint magic")
    r = _Reader(data)
    r.pos = 4
    version, stage = r.take("<II")
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    mode, proprio, n_body, n_foot, total = r.take("<BIIII")
    act_dim = r.take("<I")
    actor_w, actor_b = _unpack_layers(r)
    log_std = r.floats(act_dim)
    critic_w, critic_b = _unpack_layers(r)
    params = PolicyParams(
        actor_w=actor_w,
        actor_b=actor_b,
        log_std=log_std,
        critic_w=critic_w,
        critic_b=critic_b,
        obs_dim=actor_w[0].shape[0],
        act_dim=act_dim,
    )
    opt = None
    if r.take("<B") == 1:
        step, lr, b1, b2, eps = r.take("<Qdddd")
        m, v = [], []
        for a in param_arrays(params):
            m.append(r.floats(a.size).reshape(a.shape))
            v.append(r.floats(a.size).reshape(a.shape))
        opt = OptState(m=m, v=v, step=step, lr=lr, beta1=b1, beta2=b2, eps=eps)
    return params, stage, (mode, proprio, n_body, n_foot, total), opt


def checkpoint_checksum(data: bytes) -> str:
    import hashlib

    return hashlib.sha256(data).hexdigest()
