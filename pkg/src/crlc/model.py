"""Two-headed MLP with hand-written backprop, SGD and a cosine schedule.

Shared backbone (affine + ReLU stack) feeding

* an RL head: affine, ReLU, affine, then unit normalization;
* S clustering sub-heads: affine, ReLU, affine, clamp to [-25, 25], softmax.

The sub-heads are stored stacked along a leading axis so one batched matmul
serves all of them.
"""
import hashlib
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from crlc.losses import LOGIT_BOUND, loss_cluster, softmax

_MAGIC = b"CRLCMODL"
_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    n_clusters: int
    backbone: tuple = (256, 256)
    feature_dim: int = 128
    rl_hidden: int = 256
    head_hidden: int = 256
    n_subheads: int = 10

    def __post_init__(self):
        object.__setattr__(self, "backbone", tuple(int(w) for w in self.backbone))
        if self.input_dim < 1 or self.n_clusters < 2 or self.n_subheads < 1:
            raise ValueError(f"invalid model spec {self}")
        if not self.backbone:
            raise ValueError("backbone needs at least one layer")


def _he_uniform(rng, fan_in, shape):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class ForwardOut:
    z: np.ndarray              # (B, d) unit rows
    probs: np.ndarray          # (S, B, C)
    logits: np.ndarray         # (S, B, C), clamped
    cache: dict = field(repr=False)


class TwoHeadModel:
    def __init__(self, spec: ModelSpec, seed=0):
        self.spec = spec
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        p = {}
        widths = (spec.input_dim,) + spec.backbone
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            p[f"backbone.{i}.W"] = _he_uniform(rng, a, (a, b))
            p[f"backbone.{i}.b"] = np.zeros(b)
        H, S = widths[-1], spec.n_subheads
        p["rl.0.W"] = _he_uniform(rng, H, (H, spec.rl_hidden))
        p["rl.0.b"] = np.zeros(spec.rl_hidden)
        p["rl.1.W"] = _he_uniform(rng, spec.rl_hidden, (spec.rl_hidden, spec.feature_dim))
        p["rl.1.b"] = np.zeros(spec.feature_dim)
        p["c.0.W"] = _he_uniform(rng, H, (S, H, spec.head_hidden))
        p["c.0.b"] = np.zeros((S, spec.head_hidden))
        p["c.1.W"] = _he_uniform(rng, spec.head_hidden, (S, spec.head_hidden, spec.n_clusters))
        p["c.1.b"] = np.zeros((S, spec.n_clusters))
        self.params = p
        self.grads = {k: np.zeros_like(v) for k, v in p.items()}
        self.frozen = set()

    @property
    def n_backbone(self):
        return len(self.spec.backbone)

    def group(self, prefix):
        return [k for k in self.params if k.startswith(prefix)]

    def freeze(self, prefix):
        self.frozen.update(self.group(prefix))

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def backbone_checksum(self) -> str:
        h = hashlib.sha256()
        for k in self.group("backbone."):
            h.update(self.params[k].tobytes())
        return h.hexdigest()

    # -- forward / backward -------------------------------------------------

    def forward(self, x) -> ForwardOut:
        p = self.params
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ValueError(f"expected input of shape (B, {self.spec.input_dim}), got {x.shape}")
        acts = [x]
        h = x
        for i in range(self.n_backbone):
            h = np.maximum(h @ p[f"backbone.{i}.W"] + p[f"backbone.{i}.b"], 0.0)
            acts.append(h)

        r1 = np.maximum(h @ p["rl.0.W"] + p["rl.0.b"], 0.0)
        e = r1 @ p["rl.1.W"] + p["rl.1.b"]
        norm = np.linalg.norm(e, axis=1, keepdims=True)
        if np.any(norm == 0.0):
            raise ValueError("zero representation vector cannot be unit-normalized")
        z = e / norm

        c1 = np.maximum(np.matmul(h[None], p["c.0.W"]) + p["c.0.b"][:, None, :], 0.0)
        raw = np.matmul(c1, p["c.1.W"]) + p["c.1.b"][:, None, :]
        logits = np.clip(raw, -LOGIT_BOUND, LOGIT_BOUND)
        probs = softmax(logits)
        cache = dict(acts=acts, r1=r1, z=z, norm=norm, c1=c1, raw=raw)
        return ForwardOut(z=z, probs=probs, logits=logits, cache=cache)

    def backward(self, cache, dz=None, dlogits=None):
        """Accumulate parameter gradients for upstream ``dL/dz`` and
        ``dL/dlogits`` (either may be None)."""
        if cache is None:
            raise ValueError("backward called without a forward cache")
        p, g = self.params, self.grads
        acts = cache["acts"]
        h = acts[-1]
        dh = np.zeros_like(h)

        if dz is not None:
            z, norm, r1 = cache["z"], cache["norm"], cache["r1"]
            # d(e/|e|)/de = (I - z z^T) / |e|
            de = (dz - z * np.sum(dz * z, axis=1, keepdims=True)) / norm
            g["rl.1.W"] += r1.T @ de
            g["rl.1.b"] += de.sum(axis=0)
            dr1 = (de @ p["rl.1.W"].T) * (r1 > 0)
            g["rl.0.W"] += h.T @ dr1
            g["rl.0.b"] += dr1.sum(axis=0)
            dh += dr1 @ p["rl.0.W"].T

        if dlogits is not None:
            raw, c1 = cache["raw"], cache["c1"]
            dl = np.where(np.abs(raw) > LOGIT_BOUND, 0.0, dlogits)
            g["c.1.W"] += np.matmul(c1.transpose(0, 2, 1), dl)
            g["c.1.b"] += dl.sum(axis=1)
            dc1 = np.matmul(dl, p["c.1.W"].transpose(0, 2, 1)) * (c1 > 0)
            g["c.0.W"] += np.matmul(h.T[None], dc1)
            g["c.0.b"] += dc1.sum(axis=1)
            dh += np.matmul(dc1, p["c.0.W"].transpose(0, 2, 1)).sum(axis=0)

        if "backbone.0.W" in self.frozen:
            return
        for i in reversed(range(self.n_backbone)):
            dpre = dh * (acts[i + 1] > 0)
            g[f"backbone.{i}.W"] += acts[i].T @ dpre
            g[f"backbone.{i}.b"] += dpre.sum(axis=0)
            if i:
                dh = dpre @ p[f"backbone.{i}.W"].T

    # -- checkpoints --------------------------------------------------------

    def save(self, path):
        header = json.dumps(
            {"spec": {**self.spec.__dict__, "backbone": list(self.spec.backbone)},
             "params": [[k, list(v.shape)] for k, v in self.params.items()]},
            sort_keys=True,
        ).encode()
        with open(path, "wb") as fh:
            fh.write(struct.pack("<8sII", _MAGIC, _VERSION, len(header)))
            fh.write(header)
            for v in self.params.values():
                fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "TwoHeadModel":
        with open(path, "rb") as fh:
            raw = fh.read()
        magic, version, hlen = struct.unpack_from("<8sII", raw)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        off = struct.calcsize("<8sII")
        header = json.loads(raw[off:off + hlen])
        off += hlen
        model = cls(ModelSpec(**header["spec"]), seed=0)
        for name, shape in header["params"]:
            n = int(np.prod(shape))
            arr = np.frombuffer(raw, dtype="<f8", count=n, offset=off)
            model.params[name][...] = arr.reshape(shape)
            off += 8 * n
        return model


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def lr_at(t, T, lr_init=0.1, lr_min=0.001):
    """Cosine decay from ``lr_init`` at t=0 to ``lr_min`` at t=T."""
    if T <= 0:
        return lr_init
    if not 0 <= t <= T:
        raise ValueError(f"epoch {t} outside schedule horizon [0, {T}]")
    return lr_min + (lr_init - lr_min) * (1.0 + math.cos(math.pi * t / T)) / 2.0


@dataclass
class SgdState:
    lr_init: float = 0.1
    lr_min: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 5e-4
    nesterov: bool = False
    schedule: str = "cosine"
    epoch: int = 0
    horizon: int = 1
    velocity: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.nesterov:
            raise NotImplementedError("Nesterov momentum is not supported")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    @property
    def lr(self):
        if self.schedule == "constant":
            return self.lr_init
        return lr_at(self.epoch, self.horizon, self.lr_init, self.lr_min)


def sgd_step(model: TwoHeadModel, state: SgdState, names=None):
    """``v <- mu v + (g + wd w); w <- w - lr v``, then clear gradients.

    Only ``names`` (default: all unfrozen parameters) are updated.
    """
    lr = state.lr
    if names is None:
        names = [k for k in model.params if k not in model.frozen]
    for k in names:
        w, g = model.params[k], model.grads[k]
        v = state.velocity.get(k)
        step = g + state.weight_decay * w
        if v is None:
            v = state.velocity[k] = step.copy()
        else:
            v *= state.momentum
            v += step
        w -= lr * v
    model.zero_grad()


def multihead_cluster_loss(subhead_batches, weights, critic):
    """Mean of ``loss_cluster`` over sub-heads.

    ``subhead_batches[s]`` holds the ProbBatch list produced by sub-head ``s``
    for the same pairing of samples.
    """
    if len(subhead_batches) == 0:
        raise ValueError("need at least one sub-head")
    return float(np.mean([loss_cluster(b, weights, critic) for b in subhead_batches]))
