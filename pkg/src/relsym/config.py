"""Pipeline configuration: built-in profiles plus ``key = value`` overrides."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    # data
    n_samples: int = 200_000
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    min_objects: int = 2
    max_objects: int = 4
    episode_length: int = 8
    # training
    epochs: int = 4000
    batch_size: int = 128
    learning_rate: float = 1e-4
    grad_clip_norm: float = 10.0
    pre_gs_norm: float = 3.0
    temperature: float = 1.0
    gs_mode: str = "st"
    ablation: str = "relational"
    # induction and planning
    min_support: int = 50
    timeout_s: float = 10.0
    tol_cm: float = 5.0
    eval_pairs: int = 100
    eval_objects: str = "2,3,4"
    eval_actions: str = "1,2,3"
    rollout_horizon: int = 8
    workers: int = 1
    backend: str = ""
    planner_cmd: str = ""
    seed: int = 0
    # files
    workdir: str = "run"

    def __post_init__(self):
        if self.n_samples < 10:
            raise ConfigError("n_samples must be at least 10")
        if not (0 < self.train_fraction < 1 and 0 <= self.val_fraction < 1
                and self.train_fraction + self.val_fraction < 1):
            raise ConfigError("train_fraction + val_fraction must lie in (0, 1)")
        if not 2 <= self.min_objects <= self.max_objects:
            raise ConfigError("need 2 <= min_objects <= max_objects")
        if self.gs_mode not in ("soft", "hard", "st"):
            raise ConfigError(f"gs_mode must be soft, hard or st, not {self.gs_mode!r}")
        if self.ablation not in ("relational", "all_ones"):
            raise ConfigError(f"ablation must be relational or all_ones, not {self.ablation!r}")
        for key in ("episode_length", "epochs", "batch_size", "min_support", "eval_pairs",
                    "rollout_horizon", "workers"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be at least 1")
        for key in ("learning_rate", "grad_clip_norm", "pre_gs_norm", "temperature", "timeout_s",
                    "tol_cm"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be positive")
        if self.planner_cmd and ("{domain}" not in self.planner_cmd
                                 or "{problem}" not in self.planner_cmd):
            raise ConfigError("planner_cmd needs {domain} and {problem} placeholders")
        self.object_counts()
        self.action_counts()

    @property
    def split(self) -> tuple[float, float, float]:
        test = 1.0 - self.train_fraction - self.val_fraction
        return (self.train_fraction, self.val_fraction, test)

    def train_config(self, seed: int | None = None) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, grad_clip_norm=self.grad_clip_norm,
                           pre_gs_norm=self.pre_gs_norm, seed=self.seed if seed is None else seed,
                           temperature=self.temperature, gs_mode=self.gs_mode)

    def object_counts(self) -> tuple[int, ...]:
        return _int_list("eval_objects", self.eval_objects)

    def action_counts(self) -> tuple[int, ...]:
        return _int_list("eval_actions", self.eval_actions)

    def path(self, name: str) -> Path:
        return Path(self.workdir) / name

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


def _int_list(key: str, text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated integers, got {text!r}") from None
    if not values:
        raise ConfigError(f"{key}: empty list")
    return values


PROFILES = {
    "paper": PipelineConfig(),
    "desk": PipelineConfig(n_samples=25_000, epochs=200),
}

_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "int":
            return int(raw.replace("_", ""))
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_overrides(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_config(profile: str = "desk", path=None, **overrides) -> PipelineConfig:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r} (choose from {sorted(PROFILES)})")
    values = {}
    if path is not None:
        values.update(parse_overrides(Path(path).read_text(), str(path)))
    for key, value in overrides.items():
        if key not in _TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        if value is not None:
            values[key] = value
    return replace(PROFILES[profile], **values)
