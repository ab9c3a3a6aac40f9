"""Run configuration: ``key=value`` files, per-dataset presets and merging."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Callable, Mapping

from .model import ConfigError, ModelConfig
from .training import TrainConfig


def _bool(s: str | bool) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "y", "on"):
        return True
    if v in ("0", "false", "no", "n", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_bool(s):
    if s is None or str(s).strip().lower() in ("", "none", "auto"):
        return None
    return _bool(s)


def _floats(s) -> tuple[float, ...]:
    if isinstance(s, (list, tuple)):
        return tuple(float(x) for x in s)
    return tuple(float(x) for x in str(s).replace(",", " ").split())


def _ints(s) -> tuple[int, ...]:
    if isinstance(s, (list, tuple)):
        return tuple(int(x) for x in s)
    out: list[int] = []
    for tok in str(s).replace(",", " ").split():
        if "-" in tok[1:]:
            lo, hi = tok.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(tok))
    return tuple(out)


def _str(s) -> str:
    return str(s).strip()


# key -> (parser, default). Model defaults are the standard two-layer GCN
# setting: 64 hidden units, 0.5 dropout, ReLU.
KEYS: dict[str, tuple[Callable[[Any], Any], Any]] = {
    "arch": (_str, "nhgcn"),
    "hidden": (int, 64),
    "activation": (_str, "relu"),
    "combiner": (_str, "add"),
    "self_loop": (_bool, True),
    "dropout_agg": (float, 0.5),
    "dropout_comb": (float, 0.5),
    "hop": (int, 1),
    "inv_threshold": (float, 2.0),
    "share_weights": (_opt_bool, None),
    "renormalize_after_mask": (_bool, False),
    "lr": (float, 0.01),
    "weight_decay": (float, 5e-4),
    "max_epochs": (int, 500),
    "patience": (int, 100),
    "seed": (int, 0),
    "seeds": (_ints, tuple(range(10))),
    "split_ratios": (_floats, (0.6, 0.2, 0.2)),
    "nh_label_source": (_str, "predicted_all"),
    "dataset": (_str, ""),
    "out": (_str, ""),
    "workers": (int, 1),
    "plots": (_bool, True),
}

MODEL_KEYS = (
    "arch", "hidden", "activation", "combiner", "self_loop", "dropout_agg", "dropout_comb",
    "hop", "inv_threshold", "share_weights", "renormalize_after_mask",
)
TRAIN_KEYS = ("lr", "weight_decay", "max_epochs", "patience", "seed", "split_ratios", "nh_label_source")

_PRESET_FIELDS = ("hidden", "lr", "weight_decay", "dropout_agg", "dropout_comb",
                  "activation", "hop", "self_loop", "combiner", "inv_threshold")


def _table(rows: Mapping[str, tuple]) -> dict[str, dict[str, Any]]:
    return {name: dict(zip(_PRESET_FIELDS, vals)) for name, vals in rows.items()}


# Tuned settings per benchmark: hidden, lr, weight decay, dropout (aggregation),
# dropout (combiner), activation, hop, self-loop, combiner, 1/T.
PRESETS: dict[str, dict[str, dict[str, Any]]] = {
    "nhgcn": _table({
        "cora": (512, 0.1, 1e-3, 0.9, 0.3, "relu", 1, True, "maxpooling", 2.25),
        "citeseer": (512, 0.001, 0.0, 0.7, 0.5, "relu", 1, True, "maxpooling", 3.25),
        "pubmed": (512, 0.1, 1e-4, 0.5, 0.0, "relu", 1, True, "add", 3.5),
        "photo": (512, 0.05, 5e-5, 0.9, 0.7, "relu", 3, False, "maxpooling", 3.75),
        "computers": (512, 0.05, 5e-5, 0.4, 0.4, "relu", 1, False, "add", 4.0),
        "chameleon": (512, 0.002, 0.0, 0.0, 0.7, "tanh", 2, False, "add", 4.1),
        "actor": (512, 0.1, 1e-3, 0.7, 0.5, "relu", 2, True, "add", 3.5),
        "squirrel": (512, 0.002, 0.0, 0.4, 0.6, "tanh", 1, False, "maxpooling", 4.0),
        "texas": (512, 0.08, 1e-4, 0.7, 0.5, "relu", 1, False, "add", 5.0),
        "cornell": (64, 0.01, 5e-4, 0.6, 0.5, "relu", 3, False, "maxpooling", 3.8),
    }),
    "nhgcn_ss": _table({
        "cora": (256, 0.05, 0.0, 0.9, 0.4, "relu", 3, True, "maxpooling", 4.0),
        "citeseer": (512, 0.001, 0.0, 0.6, 0.3, "relu", 3, True, "maxpooling", 3.5),
        "pubmed": (512, 0.1, 1e-4, 0.5, 0.6, "relu", 2, True, "concatenate", 3.0),
        "photo": (128, 0.08, 5e-5, 0.8, 0.0, "relu", 1, False, "add", 3.0),
        "computers": (64, 0.1, 5e-5, 0.6, 0.3, "relu", 3, False, "add", 6.0),
        "chameleon": (512, 0.002, 0.0, 0.0, 0.6, "tanh", 1, False, "maxpooling", 4.25),
        "actor": (512, 0.1, 1e-3, 0.8, 0.9, "relu", 1, True, "concatenate", 4.75),
        "squirrel": (256, 0.001, 5e-5, 0.0, 0.5, "tanh", 1, False, "add", 4.75),
        "texas": (512, 0.1, 1e-3, 0.5, 0.0, "relu", 3, True, "concatenate", 4.8),
        "cornell": (64, 0.01, 5e-4, 0.4, 0.5, "relu", 1, False, "maxpooling", 3.7),
    }),
}


def preset(arch: str, dataset_name: str) -> dict[str, Any]:
    return dict(PRESETS.get(arch, {}).get(dataset_name.strip().lower(), {}))


def parse_value(key: str, raw: Any) -> Any:
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return KEYS[key][0](raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from None


def read_config_file(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    out: dict[str, Any] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = parse_value(key, raw)
    return out


def merge(file_values: Mapping[str, Any], overrides: Mapping[str, Any], dataset_name: str | None = None) -> dict[str, Any]:
    """defaults < dataset preset for the chosen arch < config file < command line."""
    cfg = {k: d for k, (_, d) in KEYS.items()}
    arch = overrides.get("arch") or file_values.get("arch") or cfg["arch"]
    if dataset_name:
        cfg.update(preset(arch, dataset_name))
    cfg.update(file_values)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg


def _fmt_value(v: Any) -> str:
    if isinstance(v, (tuple, list)):
        return ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return "auto"
    return str(v)


def write_config_file(path: str | Path, cfg: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for key in KEYS:
            if key in cfg:
                fh.write(f"{key}={_fmt_value(cfg[key])}\n")
    return path


def model_config(cfg: Mapping[str, Any], in_dim: int, n_classes: int) -> ModelConfig:
    return ModelConfig(in_dim=in_dim, n_classes=n_classes, **{k: cfg[k] for k in MODEL_KEYS})


def train_config(cfg: Mapping[str, Any], seed: int | None = None) -> TrainConfig:
    d = {k: cfg[k] for k in TRAIN_KEYS}
    if seed is not None:
        d["seed"] = seed
    return TrainConfig(**d)
