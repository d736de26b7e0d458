"""Flat ``key = value`` run configuration with named presets.

Precedence: defaults < preset expansion < explicit file keys < CLI flags.
Unknown keys are hard errors; silent typos are the top reproducibility
hazard.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

ABLATIONS = ("s1", "s2", "s3", "s4")


class ConfigError(ValueError):
    """Bad key, bad value, or an unusable combination."""


@dataclass
class RunConfig:
    preset: str = "desk"
    ablation: str = "s4"
    seed: int = 0
    out: str = "runs/out"

    # dataset files; when unset, a synthetic dataset is generated in memory
    features: str = ""
    attributes: str = ""
    splits: str = ""
    normalize: str = "none"

    # synthetic dataset
    n_seen: int = 5
    n_unseen: int = 5
    d_x: int = 32
    d_h: int = 8
    train_per_class: int = 100
    test_per_class: int = 30
    sigma: float = 0.1

    # networks
    hidden: int = 64
    d_z: int = 0                # 0 means "same as d_h"
    leaky_slope: float = 0.2

    # objectives and optimizer
    beta: float = 0.01
    gp_lambda: float = 10.0
    gamma: float = 1.0
    alpha1: float = 1.0
    alpha2: float = 1.0
    epsilon: float = 0.05
    n_critic: int = 5
    lr: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 100
    n_syn: int = 200

    # auxiliary classifiers
    pretrain_epochs: int = 30
    pretrain_lr: float = 5e-2
    rec_epochs: int = 30
    rec_lr: float = 5e-2

    checkpoint_every: int = 0


# config-file key -> dataclass field ("lambda" is a Python keyword)
_KEY_TO_FIELD = {"lambda": "gp_lambda"}
_FIELD_TO_KEY = {v: k for k, v in _KEY_TO_FIELD.items()}
_FIELDS = {f.name: f.type for f in fields(RunConfig)}

# objective weights (beta, lambda, gamma, alpha1, alpha2) per benchmark
# feature set; desk is laptop scale
PRESETS = {
    "cub": dict(beta=0.01, gp_lambda=10.0, gamma=3.0, alpha1=1.0, alpha2=2.0, hidden=4096),
    "flo": dict(beta=0.01, gp_lambda=10.0, gamma=0.01, alpha1=1.0, alpha2=1.0, hidden=4096),
    "awa1": dict(beta=0.01, gp_lambda=10.0, gamma=0.001, alpha1=10.0, alpha2=2.0, hidden=4096),
    "awa2": dict(beta=0.01, gp_lambda=10.0, gamma=0.01, alpha1=5.0, alpha2=4.0, hidden=4096),
    "desk": dict(beta=0.01, gp_lambda=10.0, gamma=1.0, alpha1=1.0, alpha2=1.0, hidden=64),
}


def _field_for(key: str) -> str:
    name = _KEY_TO_FIELD.get(key, key)
    if name not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    return name


def _coerce(key: str, name: str, raw: str):
    kind = RunConfig.__dataclass_fields__[name].type
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines (# comments, blank lines allowed) into a
    field -> value dict, validating every key."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        name = _field_for(key)
        if name in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[name] = _coerce(key, name, raw)
    return out


def build_config(file_values: dict = None, overrides: dict = None) -> RunConfig:
    """Defaults, then preset expansion, then file keys, then CLI overrides."""
    file_values = dict(file_values or {})
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    preset = overrides.get("preset", file_values.get("preset", RunConfig.preset))
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r} (have {sorted(PRESETS)})")
    merged = dict(PRESETS[preset])
    merged["preset"] = preset
    merged.update(file_values)
    merged.update(overrides)
    cfg = RunConfig(**merged)
    if cfg.ablation not in ABLATIONS:
        raise ConfigError(f"ablation must be one of {ABLATIONS}, got {cfg.ablation!r}")
    paths = (cfg.features, cfg.attributes, cfg.splits)
    if any(paths) and not all(paths):
        raise ConfigError("features, attributes and splits must be set together")
    return cfg


def load_config(path, overrides: dict = None) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return build_config(parse_config_text(fh.read(), str(path)), overrides)


def format_config(cfg: RunConfig) -> str:
    """Echo as sorted, reparseable ``key = value`` lines."""
    lines = []
    for name in sorted(_FIELDS):
        value = getattr(cfg, name)
        key = _FIELD_TO_KEY.get(name, name)
        text = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def apply_ablation(cfg: RunConfig) -> RunConfig:
    """Ablation wiring: s1 baseline generative module only; s2 adds the
    inference module and joint maximization; s3 adds latent-feature
    recognition; s4 adds the alignment loss."""
    cfg = RunConfig(**{f.name: getattr(cfg, f.name) for f in fields(RunConfig)})
    if cfg.ablation == "s1":
        cfg.alpha1 = 0.0
        cfg.alpha2 = 0.0
        cfg.gamma = 0.0
    elif cfg.ablation in ("s2", "s3"):
        cfg.gamma = 0.0
    return cfg


def wants_latent_augmentation(ablation: str) -> bool:
    return ablation in ("s3", "s4")
