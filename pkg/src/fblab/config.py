"""Training/sweep configuration and the line-oriented ``key=value`` config format.

Defaults reproduce the published training setup (K=6, N=18, forward SNR 1 dB,
J=10^7, batch 25000, 100 epochs, lr 0.01 decayed by 0.95 per epoch, clipping
at norm 1, two 50-neuron GRU layers per side). Desk-scale runs override
J, batch, epochs and the hidden sizes.
"""
import dataclasses
from dataclasses import dataclass, field, fields

from fblab.decoder import DIRECTIONS, HEADS, MAX_SOFTMAX_K, MERGE_CASES
from fblab.encoder import ENCODER_MODES, POWER_LAYERS

SCHEMES = ("neural", "linear", "repetition", "tbcc")


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class TrainConfig:
    K: int = 6
    N: int = 18
    sigma1_sq: float = 10 ** -0.1
    sigma2_sq: float = 0.01
    J: int = 10_000_000
    batch: int = 25_000
    epochs: int = 100
    lr0: float = 0.01
    lr_decay: float = 0.95
    clip_norm: float = 1.0
    enc_hidden: int = 50
    enc_layers: int = 2
    dec_hidden: int = 50
    dec_layers: int = 2
    direction: str = "bi"
    merge_case: int = 5
    head: str = "softmax"
    enc_mode: str = "feedback"
    power_layer: str = "norm+power"
    stop_feedback_grad: bool = False
    freeze_J: int = 0  # 0 means "use J"
    linear_feedback: bool = True
    checkpoint_every: int = 0
    checkpoint_path: str = ""
    seed: int = 0

    def validate(self):
        if self.K < 1 or self.N < 1:
            raise ConfigError(f"K and N must be >= 1 (K={self.K}, N={self.N})")
        if self.head == "softmax" and self.K > MAX_SOFTMAX_K:
            raise ConfigError(f"softmax head supports K <= {MAX_SOFTMAX_K}, got {self.K}")
        if self.batch < 1 or self.J % self.batch:
            raise ConfigError(f"batch {self.batch} must divide J {self.J}")
        if self.sigma1_sq <= 0 or self.sigma2_sq < 0:
            raise ConfigError("noise variances must satisfy sigma1_sq > 0, sigma2_sq >= 0")
        if self.clip_norm <= 0 or self.lr0 <= 0 or self.epochs < 0:
            raise ConfigError("clip_norm and lr0 must be positive, epochs >= 0")
        for name, value, allowed in (
            ("direction", self.direction, DIRECTIONS), ("merge_case", self.merge_case, MERGE_CASES),
            ("head", self.head, HEADS), ("enc_mode", self.enc_mode, ENCODER_MODES),
            ("power_layer", self.power_layer, POWER_LAYERS),
        ):
            if value not in allowed:
                raise ConfigError(f"{name}={value!r} not in {allowed}")
        return self

    @property
    def freeze_samples(self):
        return self.freeze_J or self.J

    def replace(self, **kw):
        return dataclasses.replace(self, **kw).validate()


@dataclass
class SweepSpec:
    grid: list = field(default_factory=lambda: [1.0, 0.1, 0.01])
    grid_unit: str = "linear"
    target_errors: int = 100
    max_trials: int = 1_000_000
    schemes: list = field(default_factory=lambda: ["repetition", "tbcc"])

    def validate(self):
        if not self.grid:
            raise ConfigError("sweep grid is empty")
        if self.grid_unit not in ("linear", "db"):
            raise ConfigError(f"grid_unit must be 'linear' or 'db', got {self.grid_unit!r}")
        if self.grid_unit == "linear" and any(v < 0 for v in self.grid):
            raise ConfigError("linear grid values must be >= 0")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ConfigError(f"unknown scheme {s!r}")
        return self

    def variances(self):
        if self.grid_unit == "db":
            return [10.0 ** (v / 10.0) for v in self.grid]
        return [float(v) for v in self.grid]


def _field_types(cls):
    return {f.name: f for f in fields(cls)}


def _parse_scalar(text, default):
    if isinstance(default, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(default, int):
        return int(float(text)) if "e" in text.lower() else int(text)
    if isinstance(default, float):
        return float(text)
    return text


def _parse_value(name, text, fdef):
    default = fdef.default if fdef.default is not dataclasses.MISSING else fdef.default_factory()
    if isinstance(default, list):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if name == "schemes":
            return items
        return [float(t) for t in items]
    return _parse_scalar(text, default)


def parse_config(text, source="<config>"):
    """Parse config text into ``(TrainConfig, SweepSpec)``; unknown keys are errors."""
    train_fields = _field_types(TrainConfig)
    sweep_fields = _field_types(SweepSpec)
    train_kw, sweep_kw, seen = {}, {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: expected key=value, got {raw.strip()!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"{source}: duplicate key {key!r} (first on line {seen[key]})", lineno)
        seen[key] = lineno
        if key in train_fields:
            target, fdef = train_kw, train_fields[key]
        elif key in sweep_fields:
            target, fdef = sweep_kw, sweep_fields[key]
        else:
            raise ConfigError(f"{source}: unknown key {key!r}", lineno)
        try:
            target[key] = _parse_value(key, value, fdef)
        except ValueError as exc:
            raise ConfigError(f"{source}: bad value for {key!r}: {exc}", lineno) from None
    try:
        return TrainConfig(**train_kw).validate(), SweepSpec(**sweep_kw).validate()
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), source=str(path))


def format_config(cfg, sweep=None):
    """Resolved configuration as config-file text (every key, defaults included)."""
    lines = []
    for obj in (cfg, sweep):
        if obj is None:
            continue
        for f in fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"
