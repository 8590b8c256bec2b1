"""Flat ``section.key = value`` run configuration.

Sections: ``run``, ``dataset``, ``encoder``, ``train``, ``eval``. Seeds of the
dataset, encoder and model default to ``run.seed`` unless set explicitly.
The config hash covers every resolved value except filesystem locations.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from mvnad.cprn.encoder import EncoderConfig
from mvnad.cprn.model import ABLATIONS, TrainConfig, ablation_mode
from mvnad.synth import DatasetManifest

PROTOCOLS = ("per_view",)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    fpr_limit: float = 0.3
    protocol: str = "per_view"

    def __post_init__(self):
        if not 0 < self.fpr_limit <= 1:
            raise ValueError("eval.fpr_limit must lie in (0, 1]")
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"eval.protocol must be one of {PROTOCOLS}")


@dataclass
class RunConfig:
    seed: int = 0
    categories: tuple[str, ...] = ()
    ablation: str = ""
    dataset_root: str = ""
    dataset: DatasetManifest = field(default_factory=DatasetManifest)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def model_config(self) -> TrainConfig:
        return ablation_mode(self.train, self.ablation) if self.ablation else self.train

    def canonical_text(self) -> str:
        """Resolved configuration, one ``section.key=value`` per line, sorted."""
        lines = [f"run.seed={self.seed}", f"run.categories={','.join(self.categories)}",
                 f"run.ablation={self.ablation}"]
        for section, obj in (("dataset", self.dataset), ("encoder", self.encoder),
                             ("train", self.model_config()), ("eval", self.eval)):
            for f in fields(obj):
                lines.append(f"{section}.{f.name}={_fmt(getattr(obj, f.name))}")
        return "\n".join(sorted(lines)) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]

    def stamp(self) -> dict[str, str]:
        return {"config_hash": self.config_hash(), "seed": str(self.seed)}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, dict):
        return ",".join(f"{k}:{_fmt(x)}" for k, x in v.items())
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def parse_flat(text: str, source: str = "<config>") -> dict[str, str]:
    kv: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"{source}:{lineno}: key {key!r} needs a section prefix")
        if key in kv:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        kv[key] = value
    return kv


def _coerce(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw, 0)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None


def _section(cls, kv: dict[str, str], prefix: str, overrides: dict | None = None):
    base = cls()
    names = {f.name for f in fields(cls)}
    vals = dict(overrides or {})
    for key, raw in kv.items():
        if not key.startswith(prefix + "."):
            continue
        name = key[len(prefix) + 1 :]
        if name not in names:
            raise ConfigError(f"unknown config key {key!r}")
        vals[name] = _coerce(raw, getattr(base, name), key)
    try:
        return replace(base, **vals)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{prefix}: {exc}") from None


def build_config(kv: dict[str, str], seed: int | None = None) -> RunConfig:
    known_sections = {"run", "dataset", "encoder", "train", "eval"}
    for key in kv:
        if key.split(".", 1)[0] not in known_sections:
            raise ConfigError(f"unknown config section in {key!r}")
    run_keys = {"run.seed", "run.categories", "run.ablation"}
    for key in kv:
        if key.startswith("run.") and key not in run_keys:
            raise ConfigError(f"unknown config key {key!r}")
    run_seed = seed if seed is not None else _coerce(kv.get("run.seed", "0"), 0, "run.seed")
    if run_seed < 0 or run_seed >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    ablation = kv.get("run.ablation", "")
    if ablation and ablation not in ABLATIONS:
        raise ConfigError(f"run.ablation must be one of {ABLATIONS}, got {ablation!r}")
    cats = tuple(c.strip() for c in kv.get("run.categories", "").split(",") if c.strip())

    ds_kv = {k: v for k, v in kv.items() if k.startswith("dataset.") and k != "dataset.root"}
    try:
        manifest = DatasetManifest.from_mapping({k[8:]: v for k, v in ds_kv.items()})
    except ValueError as exc:
        raise ConfigError(f"dataset: {exc}") from None
    if "dataset.master_seed" not in kv:
        manifest = replace(manifest, master_seed=run_seed)
    enc = _section(EncoderConfig, kv, "encoder", None if "encoder.seed" in kv else {"seed": run_seed})
    train = _section(TrainConfig, kv, "train", None if "train.seed" in kv else {"seed": run_seed})
    ev = _section(EvalConfig, kv, "eval")
    return RunConfig(run_seed, cats, ablation, kv.get("dataset.root", ""), manifest, enc, train, ev)


def load_config(path: str | Path | None, seed: int | None = None) -> RunConfig:
    if path is None:
        return build_config({}, seed)
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} does not exist")
    return build_config(parse_flat(p.read_text(), str(p)), seed)


def read_stamp_file(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out
