"""Training configuration, the learning-rate schedule, and flat key=value config files.

A config file holds one ``key = value`` pair per line; ``#`` starts a
comment. Keys are the field names of :class:`TrainConfig` and
:class:`mvmol.model.ModelConfig`; unknown keys are an error::

    steps = 500
    batch_size = 16
    d_model = 64
    category_weights = MolText:1,MolMol:1,TextText:1
"""
import math
from dataclasses import dataclass, fields, replace

from ..errors import InputError
from ..model import ModelConfig


@dataclass(frozen=True)
class TrainConfig:
    stage: int = 1
    steps: int = 500
    batch_size: int = 16
    peak_lr: float = 1e-3
    final_lr: float = 1e-4
    warmup_steps: int = 50
    weight_decay: float = 0.05
    tau: float = 0.1
    grad_clip: float = 1.0
    seed: int = 0
    checkpoint_every: int = 0
    log_every: int = 0
    # ablation switches
    use_cmc: bool = True
    use_cmm: bool = True
    use_kge_c: bool = True
    use_kge_m: bool = True
    use_kgc: bool = True
    # stage-2 category mix; empty means proportional to category counts
    category_weights: str = ""

    def __post_init__(self):
        if self.steps < 1:
            raise InputError("steps must be positive")
        if not 0 <= self.warmup_steps < self.steps:
            raise InputError("need 0 <= warmup_steps < steps")
        if self.peak_lr <= 0 or self.final_lr <= 0:
            raise InputError("learning rates must be positive")
        if self.tau <= 0:
            raise InputError("tau must be positive")
        if self.batch_size < 1:
            raise InputError("batch_size must be positive")

    def parsed_category_weights(self):
        """``{"MolText": w, ...}`` or None for proportional sampling."""
        if not self.category_weights.strip():
            return None
        out = {}
        for part in self.category_weights.split(","):
            name, _, w = part.partition(":")
            try:
                out[name.strip()] = float(w)
            except ValueError:
                raise InputError(f"bad category weight {part!r}") from None
        return out


def lr_at(step, cfg):
    """Linear warmup from 0 to ``peak_lr``, then cosine annealing to ``final_lr`` at the last step."""
    if step < cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    span = cfg.steps - 1 - cfg.warmup_steps
    progress = 1.0 if span <= 0 else min((step - cfg.warmup_steps) / span, 1.0)
    return cfg.final_lr + (cfg.peak_lr - cfg.final_lr) * (1.0 + math.cos(math.pi * progress)) / 2.0


def _coerce(value, typ, key):
    try:
        if typ is bool:
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        return typ(value)
    except ValueError:
        raise InputError(f"config key {key!r}: cannot parse {value!r} as {typ.__name__}") from None


def parse_config(lines, train=None, model=None):
    """Apply key=value lines on top of existing configs; returns ``(train, model)``."""
    train = train or TrainConfig()
    model = model or ModelConfig()
    tf = {f.name: f for f in fields(TrainConfig)}
    mf = {f.name: f for f in fields(ModelConfig)}
    t_up, m_up = {}, {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise InputError(f"config line {lineno}: expected key = value")
        if key in tf:
            t_up[key] = _coerce(value, _field_type(tf[key]), key)
        elif key in mf:
            m_up[key] = _coerce(value, _field_type(mf[key]), key)
        else:
            raise InputError(f"config line {lineno}: unknown key {key!r}")
    return replace(train, **t_up), replace(model, **m_up)


def _field_type(f):
    return f.type if isinstance(f.type, type) else {"int": int, "float": float, "bool": bool, "str": str}[f.type]


def load_config(path, train=None, model=None):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh, train, model)
