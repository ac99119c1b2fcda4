"""Run configuration, seed streams and run reports."""
import dataclasses
import datetime as _dt
import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from crlc.critics import CriticConfig, CriticKind
from crlc.data import ViewConfig
from crlc.losses import LossWeights

PC_BACKENDS = ("InBatch", "MemoryBank")
STAGE2_MODES = ("TrainBackbone", "FreezeBackbone")


def seed_stream(master: int, name: str) -> np.random.Generator:
    """Independent generator for a named component.

    Rule: ``SeedSequence(master, spawn_key=(crc32(name),))``. Streams in use:
    ``data``, ``init``, ``batch``, ``augment``, ``bank``, ``labeled``,
    ``neighbors``.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(int(master), spawn_key=(key,)))


@dataclass
class RunConfig:
    # dataset: {"kind": "mixture", C, D, n_per_class, separation, seed}
    #       or {"kind": "csv", "path": ..., "class_count": optional}
    dataset: dict = field(default_factory=lambda: {
        "kind": "mixture", "C": 4, "D": 16, "n_per_class": 500, "separation": 6.0, "seed": 0,
    })
    backbone: list = field(default_factory=lambda: [256, 256])
    feature_dim: int = 128
    rl_hidden: int = 256
    head_hidden: int = 256
    n_subheads: int = 10
    views: dict = field(default_factory=lambda: {
        "noise_sigma": 0.5, "mask_prob": 0.1, "scale_jitter": 0.1,
    })
    critic: str = "LogDot"
    tau: float = 0.1
    gamma: float = 0.01
    lambda1: float = 1.0
    lambda2: float = 10.0
    lambda3: float = 1.0
    batch_size: int = 256
    epochs: int = 200
    seed: int = 0
    lr_init: float = 0.1
    lr_min: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: str = "cosine"
    pc_backend: str = "InBatch"
    alpha: float = 0.5
    bank_negatives: int = 0          # 0 -> batch_size candidates
    n_neighbors: int = 50
    stage1_epochs: int = 100
    stage2_mode: str = "TrainBackbone"
    stage2_lr: float = 0.05
    labels_per_class: int = 1
    labeled_batch: int = 64
    eval_every: int = 10

    def __post_init__(self):
        self.validate()

    def validate(self):
        CriticKind(self.critic)
        self.critic_config()
        self.loss_weights()
        self.view_config()
        if self.pc_backend not in PC_BACKENDS:
            raise ValueError(f"pc_backend must be one of {PC_BACKENDS}")
        if self.stage2_mode not in STAGE2_MODES:
            raise ValueError(f"stage2_mode must be one of {STAGE2_MODES}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.epochs < 0 or self.stage1_epochs < 0:
            raise ValueError("epoch counts must be nonnegative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.bank_negatives < 0 or self.n_neighbors < 1 or self.n_subheads < 1:
            raise ValueError("bank_negatives >= 0, n_neighbors >= 1, n_subheads >= 1 required")
        if not 0 < self.lr_min <= self.lr_init:
            raise ValueError("need 0 < lr_min <= lr_init")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError("schedule must be 'cosine' or 'constant'")
        if self.eval_every < 1 or self.labels_per_class < 1 or self.labeled_batch < 1:
            raise ValueError("eval_every, labels_per_class, labeled_batch must be positive")
        if self.dataset.get("kind") not in ("mixture", "csv"):
            raise ValueError("dataset.kind must be 'mixture' or 'csv'")

    def critic_config(self) -> CriticConfig:
        return CriticConfig(CriticKind(self.critic), self.tau, self.gamma)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2, self.lambda3)

    def view_config(self) -> ViewConfig:
        return ViewConfig(**self.views)

    @property
    def n_candidates(self) -> int:
        if self.pc_backend == "MemoryBank" and self.bank_negatives:
            return self.bank_negatives
        return self.batch_size

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config field(s): {', '.join(unknown)}")
        base = cls()
        merged = {}
        for k, v in d.items():
            default = getattr(base, k)
            merged[k] = {**default, **v} if isinstance(default, dict) and isinstance(v, dict) else v
        return cls(**merged)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        return cls.from_dict(raw)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


EPOCH_FIELDS = (
    "stage", "epoch", "lr", "loss_total", "loss_pc", "loss_fc", "loss_ce",
    "entropy", "infonce_pc", "infonce_fc", "acc", "nmi", "ari",
)


@dataclass
class RunReport:
    config: dict
    seed: int
    per_epoch: list = field(default_factory=list)
    final_metrics: dict = field(default_factory=dict)
    runtime_s: float = 0.0
    extra: dict = field(default_factory=dict)
    model: object = field(default=None, repr=False, compare=False)

    def to_dict(self, reproducible: bool = False) -> dict:
        out = {
            "config": self.config,
            "seed": self.seed,
            "per_epoch": self.per_epoch,
            "final_metrics": self.final_metrics,
            "runtime_s": 0.0 if reproducible else round(self.runtime_s, 6),
        }
        if self.extra:
            out["extra"] = self.extra
        if not reproducible:
            out["metadata"] = {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat()}
        return out

    def to_json(self, reproducible: bool = False) -> str:
        return json.dumps(self.to_dict(reproducible), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def curves_csv(self) -> str:
        lines = [",".join(EPOCH_FIELDS)]
        for rec in self.per_epoch:
            lines.append(",".join("" if rec.get(k) is None else repr(rec[k]) for k in EPOCH_FIELDS))
        return "\n".join(lines) + "\n"


def comparable(report: dict) -> dict:
    """Drop wall-clock fields so two report dicts can be compared."""
    return {k: v for k, v in report.items() if k not in ("metadata", "runtime_s")}
