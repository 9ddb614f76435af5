"""YAML run configuration in natural units.

A run file has up to four sections: scenario, net, train, eval.  Every
section and every field is optional; omitted fields keep the dataclass
defaults.  Units are the ones people quote: carrier in GHz, speed in km/h,
slots in ms, apertures in wavelengths.  Unknown fields are errors, not
warnings, so typos cannot silently fall back to defaults.

The net section carries architecture knobs only; sequence lengths and the
port grid always come from the scenario so the two cannot disagree.
"""

from dataclasses import dataclass

import yaml

from .dataset import ScenarioConfig
from .evaluation import EvalConfig
from .model import NetConfig
from .training import TrainConfig


class ConfigError(Exception):
    """A run file that cannot be turned into valid configs."""


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig
    net: NetConfig
    train: TrainConfig
    eval: EvalConfig


def _require_mapping(value, where):
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(value).__name__}")
    return dict(value)


def _reject_unknown(section, raw, allowed):
    unknown = set(raw) - set(allowed)
    if unknown:
        known = ", ".join(sorted(allowed))
        raise ConfigError(
            f"{section}: unknown field(s) {sorted(unknown)}; known fields: {known}"
        )


def _pair(section, raw, key, names):
    """Fetch a two-field sub-mapping like grid: {n: 50, m: 100}."""
    sub = _require_mapping(raw[key], f"{section}.{key}")
    _reject_unknown(f"{section}.{key}", sub, names)
    missing = [n for n in names if n not in sub]
    if missing:
        raise ConfigError(f"{section}.{key}: missing field(s) {missing}")
    return tuple(sub[n] for n in names)


_SCENARIO_FIELDS = (
    "carrier_ghz",
    "grid",
    "aperture_wavelengths",
    "paths",
    "speed_kmh",
    "t0_slots",
    "slot_ms",
    "symbols_per_slot",
    "csi_delay_ms",
    "delay_spread_ns",
    "k_factor_db",
    "angle_spread_deg",
    "departure_spread_deg",
    "ue_count",
    "segments_per_ue",
    "instants_per_segment",
    "history_len",
    "horizon",
    "train_fraction",
    "seed",
)

_PASSTHROUGH = (
    "slot_ms",
    "symbols_per_slot",
    "csi_delay_ms",
    "delay_spread_ns",
    "k_factor_db",
    "angle_spread_deg",
    "departure_spread_deg",
    "ue_count",
    "segments_per_ue",
    "instants_per_segment",
    "history_len",
    "horizon",
    "train_fraction",
    "seed",
)


def scenario_from_dict(raw) -> ScenarioConfig:
    raw = _require_mapping(raw, "scenario")
    _reject_unknown("scenario", raw, _SCENARIO_FIELDS)
    kwargs = {}
    if "carrier_ghz" in raw:
        kwargs["carrier_hz"] = float(raw["carrier_ghz"]) * 1e9
    if "grid" in raw:
        n, m = _pair("scenario", raw, "grid", ("n", "m"))
        kwargs["grid_n"] = int(n)
        kwargs["grid_m"] = int(m)
    if "aperture_wavelengths" in raw:
        y, z = _pair("scenario", raw, "aperture_wavelengths", ("y", "z"))
        kwargs["aperture_y"] = float(y)
        kwargs["aperture_z"] = float(z)
    if "paths" in raw:
        kwargs["n_paths"] = int(raw["paths"])
    if "speed_kmh" in raw:
        lo, hi = _pair("scenario", raw, "speed_kmh", ("min", "max"))
        kwargs["speed_kmh_min"] = float(lo)
        kwargs["speed_kmh_max"] = float(hi)
    if "t0_slots" in raw:
        values = raw["t0_slots"]
        if not isinstance(values, (list, tuple)) or not values:
            raise ConfigError("scenario.t0_slots: expected a nonempty list")
        kwargs["t0_candidates"] = tuple(int(v) for v in values)
    for name in _PASSTHROUGH:
        if name in raw:
            kwargs[name] = raw[name]
    try:
        return ScenarioConfig(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"scenario: {exc}") from exc


_NET_FIELDS = ("d_model", "heads", "backbone_heads", "layers", "lora_rank", "max_positions")


def net_from_dict(raw, scenario: ScenarioConfig) -> NetConfig:
    raw = _require_mapping(raw, "net")
    _reject_unknown("net", raw, _NET_FIELDS)
    kwargs = {
        "history_len": scenario.history_len,
        "horizon": scenario.horizon,
        "ports_z": scenario.grid_n,
        "ports_y": scenario.grid_m,
    }
    rename = {"layers": "n_layers"}
    for name in _NET_FIELDS:
        if name in raw:
            kwargs[rename.get(name, name)] = int(raw[name])
    try:
        return NetConfig(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"net: {exc}") from exc


_TRAIN_FIELDS = (
    "epochs",
    "batch_size",
    "peak_lr",
    "warmup_steps",
    "min_lr",
    "beta1",
    "beta2",
    "eps",
    "grad_clip",
    "seed",
    "checkpoint_every",
)


def train_from_dict(raw) -> TrainConfig:
    raw = _require_mapping(raw, "train")
    _reject_unknown("train", raw, _TRAIN_FIELDS)
    try:
        return TrainConfig(**raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"train: {exc}") from exc


_EVAL_FIELDS = (
    "bs_arrays",
    "speeds_kmh",
    "snr_db",
    "n_ue",
    "baselines",
    "n_windows",
    "seed",
)


def eval_from_dict(raw) -> EvalConfig:
    raw = _require_mapping(raw, "eval")
    _reject_unknown("eval", raw, _EVAL_FIELDS)
    kwargs = dict(raw)
    if "bs_arrays" in kwargs:
        arrays = kwargs["bs_arrays"]
        if not isinstance(arrays, (list, tuple)):
            raise ConfigError("eval.bs_arrays: expected a list of [ny, nz] pairs")
        try:
            kwargs["bs_arrays"] = tuple((int(a[0]), int(a[1])) for a in arrays)
        except (TypeError, IndexError, ValueError) as exc:
            raise ConfigError("eval.bs_arrays: expected a list of [ny, nz] pairs") from exc
    for name in ("speeds_kmh", "snr_db"):
        if name in kwargs:
            kwargs[name] = tuple(float(v) for v in kwargs[name])
    if "baselines" in kwargs:
        kwargs["baselines"] = tuple(str(b) for b in kwargs["baselines"])
    try:
        return EvalConfig(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"eval: {exc}") from exc


def config_from_dict(raw, source="<dict>") -> RunConfig:
    raw = _require_mapping(raw, source)
    _reject_unknown(source, raw, ("scenario", "net", "train", "eval"))
    scenario = scenario_from_dict(raw.get("scenario"))
    return RunConfig(
        scenario=scenario,
        net=net_from_dict(raw.get("net"), scenario),
        train=train_from_dict(raw.get("train")),
        eval=eval_from_dict(raw.get("eval")),
    )


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        # PyYAML marks carry the line/column of the offending token
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return config_from_dict(raw, source=str(path))
