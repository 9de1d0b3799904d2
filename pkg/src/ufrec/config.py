"""Training configuration: defaults < config file < CLI flags."""

import json
from dataclasses import asdict, dataclass, fields


@dataclass
class TrainConfig:
    d: int = 64
    batch: int = 512
    lr: float = 0.01
    max_len: int = 50
    M: int = 3
    K: int = 3
    heads: int = 2
    e_all: int = 200
    patience: int = 20
    e_b: int = 5
    e_t: int = 20
    alpha_s: float = 1.0
    alpha_f: float = 1.0
    alpha_l: float = 1.0
    num_train_negatives: int = 100
    uniform_ratio: float = 0.6
    frequent_ratio: float = 0.7
    partition_mode: str = "ratio"
    split_order: str = "valid_last"
    # ablation switches (A, B, C, D)
    time_multi: bool = True
    seq_enh: bool = True
    item_enh: bool = True
    pop_sim: bool = True
    seed: int = 0
    eval_seed: int = 2024
    eval_negatives: int = 100
    val_k: int = 10
    num_buckets: int = 64
    calendar_fields: str = "year,month,day,weekday"
    year_base: int = 1970
    year_buckets: int = 128
    layer_norm: bool = False
    num_blocks: int = 1
    channel_consistency: float = 0.0
    force_channel: str = ""
    frozen_target: str = "snapshot"
    ema_decay: float = 0.9
    se_reduction: str = "last"
    rec_positions: str = "all"
    top_l: int = 20
    theta: float = -1.0
    gamma: float = -1.0

    def validate(self):
        if not 0 <= self.e_b <= self.e_t <= self.e_all:
            raise ValueError(f"need 0 <= e_b <= e_t <= e_all, got {self.e_b}, {self.e_t}, {self.e_all}")
        for name in ("uniform_ratio", "frequent_ratio"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        for name in ("alpha_s", "alpha_f", "alpha_l", "channel_consistency"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("d", "batch", "max_len", "M", "K", "heads", "e_all", "num_buckets",
                     "year_buckets", "num_blocks", "top_l", "num_train_negatives"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if (2 * self.d) % self.heads:
            raise ValueError("2*d must be divisible by heads")
        choices = {
            "partition_mode": ("ratio", "balanced"),
            "split_order": ("valid_last", "test_last"),
            "force_channel": ("", "interval", "context"),
            "frozen_target": ("snapshot", "ema"),
            "se_reduction": ("last", "mean"),
            "rec_positions": ("all", "last"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        return self

    def to_dict(self):
        return asdict(self)

    def replace(self, **changes):
        return TrainConfig(**{**asdict(self), **changes}).validate()

    @property
    def theta_or_none(self):
        return None if self.theta <= 0 else self.theta

    @property
    def gamma_or_none(self):
        return None if self.gamma <= 0 else self.gamma


ABLATION_FLAGS = {"a": "time_multi", "b": "seq_enh", "c": "item_enh", "d": "pop_sim"}


def field_types():
    return {f.name: f.type for f in fields(TrainConfig)}


def coerce(name, value):
    kind = field_types()[name]
    kind = kind if isinstance(kind, type) else {"int": int, "float": float, "bool": bool, "str": str}[kind]
    if kind is bool:
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: cannot read {value!r} as a boolean")
    if kind is int and isinstance(value, float) and not value.is_integer():
        raise ValueError(f"{name}: expected an integer, got {value}")
    return kind(value)


def read_config_file(path):
    """JSON document or flat ``key=value`` lines (``#`` starts a comment)."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        raw = json.loads(text)
    else:
        raw = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            raw[k.strip()] = v.strip()
    known = field_types()
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ValueError(f"{path}: unknown config keys {unknown}")
    return {k: coerce(k, v) for k, v in raw.items()}


def apply_ablations(values, letters):
    """``letters`` like ``"b,d"`` switches off the named components."""
    for tok in (t.strip().lower() for t in letters.split(",")):
        if not tok:
            continue
        if tok not in ABLATION_FLAGS:
            raise ValueError(f"unknown ablation {tok!r}; use a, b, c, d")
        values[ABLATION_FLAGS[tok]] = False
    return values


def build_config(file_values=None, cli_values=None):
    values = {}
    values.update(file_values or {})
    values.update({k: v for k, v in (cli_values or {}).items() if v is not None})
    return TrainConfig(**values).validate()
