"""Flat ``key = value`` run configuration.

One setting per line, ``#`` starts a comment, blank lines are ignored.
Unknown keys and unparsable values raise :class:`ConfigError`.  The resolved
configuration is written back in the same format (sorted keys), and parsing
that echo reproduces the object exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .network import MODES, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "run"
    data: str = ""  # dataset directory; defaults to <out>/data
    # dataset
    n_source: int = 50
    n_target: int = 30
    source_per_id: int = 40
    target_per_id: int = 30
    gap: float = 1.0
    # recognition training
    lr: float = 0.05
    adapt_lr: float = 0.02
    momentum: float = 0.9
    batch_size: int = 32
    baseline_epochs: int = 8
    adapt_epochs: int = 4
    lr_decays: int = 2
    lam: float = 0.01
    sinkhorn_iters: int = 10
    eps_momentum: float = 0.9
    eps_fixed: float | None = None
    eps_per_term: bool = True
    eps_squared: bool = True
    lf: int = 2
    mode: str = "baseline"
    # discriminator
    disc_lr: float = 0.1
    disc_epochs: int = 12
    disc_batch_size: int = 32
    disc_joint: bool = False  # keep training the discriminator during adaptation
    # files; empty means the default location under ``out``
    weights: str = ""
    disc_weights: str = ""
    baseline_weights: str = ""
    # ablation
    lf_sweep: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        if not 1 <= self.lf <= 4:
            raise ConfigError(f"lf must be in 1..4, got {self.lf}")
        if self.lam < 0:
            raise ConfigError("lam must be nonnegative")
        if self.gap < 0 or self.gap > 1:
            raise ConfigError("gap must lie in [0, 1]")
        for name in ("n_source", "n_target", "source_per_id", "target_per_id", "batch_size", "sinkhorn_iters"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.eps_fixed is not None and not self.eps_fixed > 0:
            raise ConfigError("eps_fixed must be positive")

    @property
    def data_dir(self):
        return self.data or f"{self.out}/data"

    def train_config(self, **overrides):
        kw = {f.name: getattr(self, f.name) for f in fields(TrainConfig)}
        kw.update(overrides)
        return TrainConfig(**kw)

    def with_(self, **kw):
        try:
            return replace(self, **kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _parse_value(name, text):
    default = getattr(RunConfig(), name)
    kind = _FIELDS[name].type
    if text == "none" and "None" in str(kind):
        return None
    try:
        if isinstance(default, bool):
            if text not in ("true", "false"):
                raise ValueError(text)
            return text == "true"
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float) or "float" in str(kind):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None
    return text


def _format_value(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse(text, base=None):
    """Apply the settings in ``text`` on top of ``base`` (defaults if omitted)."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, value)
    base = base or RunConfig()
    try:
        return replace(base, **values)
    except ConfigError as exc:
        raise ConfigError(str(exc)) from None


def load(path, base=None):
    with open(path) as fh:
        return parse(fh.read(), base)


def dumps(cfg):
    return "".join(f"{name} = {_format_value(getattr(cfg, name))}\n" for name in sorted(_FIELDS))


def save(path, cfg):
    with open(path, "w") as fh:
        fh.write(dumps(cfg))
