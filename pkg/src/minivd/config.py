"""Run configuration: one JSON-serializable object drives every run."""

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace


@dataclass(frozen=True)
class DataConfig:
    kind: str = "synthetic"  # "synthetic" generates in memory; "files" loads JSON
    # synthetic world parameters
    train_dialogues: int = 2000
    val_dialogues: int = 200
    test_dialogues: int = 200
    rounds: int = 5
    candidates: int = 20
    grid_height: int = 4
    grid_width: int = 4
    feature_dim: int = 64
    min_objects: int = 2
    max_objects: int = 5
    data_seed: int = 7
    # file-backed datasets (paths per split, plus matching feature files)
    paths: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 64
    hidden_dim: int = 64
    i_max: int = 3


@dataclass(frozen=True)
class TextConfig:
    caption_len: int = 24
    question_len: int = 16
    answer_len: int = 8
    min_count: int = 5


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 4e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    text: TextConfig = field(default_factory=TextConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    loss: str = "mle"  # "mle" or "wle"
    tau: float = 1.0
    gamma: float = 0.5
    batch_size: int = 32
    epochs: int = 2
    seed: int = 0
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.loss not in ("mle", "wle"):
            raise ValueError(f"loss must be 'mle' or 'wle', got {self.loss!r}")
        if self.data.feature_dim != self.model.hidden_dim:
            raise ValueError(
                "image feature width must match the model hidden width "
                f"({self.data.feature_dim} vs {self.model.hidden_dim})"
            )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, payload):
        payload = dict(payload)
        sub = {
            "data": DataConfig,
            "model": ModelConfig,
            "text": TextConfig,
            "optim": OptimConfig,
        }
        kwargs = {}
        for key, value in payload.items():
            if key in sub:
                kwargs[key] = sub[key](**value)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    def config_hash(self):
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def with_overrides(self, **kwargs):
        return replace(self, **kwargs)
