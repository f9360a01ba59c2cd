"""Experiment configuration: ``key = value`` text files.

Blank lines and ``#`` comments are ignored; unknown keys are an error.
"""

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional, Tuple

from .training import Hyperparams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    alpha: float = 100.0
    thr: float = 0.2
    scales: Tuple[float, ...] = (0.5, 1.0, 1.5, 2.0)
    lr: float = 0.01
    lr_selftrain: Optional[float] = None  # self-training step size; None -> lr
    momentum: float = 0.9
    weight_decay: float = 5e-4
    iters_pretrain: int = 2000
    iters_selftrain: int = 2000
    batch: int = 8
    seed: int = 0
    data_root: str = "data"
    out_dir: str = "out"
    n_train: int = 200
    n_val: int = 50
    workers: int = 1

    def hyperparams(self, phase: str, seed: Optional[int] = None, scales=None, reactivation: bool = True) -> Hyperparams:
        iters = {"pretrain": self.iters_pretrain, "selftrain": self.iters_selftrain}[phase]
        lr = self.lr_selftrain if phase == "selftrain" and self.lr_selftrain is not None else self.lr
        return Hyperparams(
            alpha=self.alpha,
            thr=self.thr,
            scales=tuple(scales) if scales is not None else self.scales,
            learning_rate=lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            iterations=iters,
            batch_size=self.batch,
            seed=self.seed if seed is None else seed,
            reactivation=reactivation,
        )

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "scales":
                v = ", ".join(repr(s) for s in v)
            elif v is None:
                continue
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def with_overrides(self, **kw) -> "Config":
        return replace(self, **kw)


_TYPES = {f.name: f.type for f in fields(Config)}


def _convert(key: str, raw: str):
    t = _TYPES[key]
    try:
        if key == "scales":
            vals = tuple(float(s) for s in raw.split(",") if s.strip())
            if not vals:
                raise ValueError("empty list")
            return vals
        if t in (int, "int"):
            return int(raw)
        if t in (float, "float", Optional[float], "Optional[float]"):
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigError(f"bad value for {key!r}: {raw!r} ({e})") from None


def parse(text: str, source: str = "<config>") -> Config:
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{n}: expected 'key = value'")
        if key not in _TYPES:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    cfg = Config(**values)
    try:
        cfg.hyperparams("pretrain")
        cfg.hyperparams("selftrain")
    except ValueError as e:
        raise ConfigError(f"{source}: {e}") from None
    if cfg.n_train < 1 or cfg.n_val < 1 or cfg.workers < 1:
        raise ConfigError(f"{source}: n_train, n_val and workers must be >= 1")
    return cfg


def load(path) -> Config:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e.strerror or e}") from None
    cfg = parse(text, str(path))
    # relative paths are taken relative to the config file
    base = path.parent
    return cfg.with_overrides(
        data_root=str(_resolve(base, cfg.data_root)),
        out_dir=str(_resolve(base, cfg.out_dir)),
    )


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q
