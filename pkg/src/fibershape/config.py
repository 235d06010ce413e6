"""Flat key-value run configuration.

One `key = value` pair per line, `#` comments, blank lines ignored.  Keys
carry their section as a dotted prefix (link., train., ssf.) so the whole
file stays diff-able and can be embedded verbatim in a run manifest.
Command-line flags override file values.
"""

from dataclasses import fields

from .channel import LinkConfig
from .errors import ConfigError
from .ssf import SsfConfig

_LINK_KEYS = {
    "n_spans": int,
    "span_length_km": float,
    "attenuation_db_per_km": float,
    "gamma_per_w_km": float,
    "dispersion_ps_nm_km": float,
    "noise_figure_db": float,
    "symbol_rate_hz": float,
    "n_channels": int,
    "channel_spacing_hz": float,
    "center_wavelength_nm": float,
    "tx_awgn_snr_db": float,
}

_TRAIN_KEYS = {
    "m": int,
    "hidden_layers": int,
    "hidden_units": int,
    "learning_rate": float,
    "batch_schedule": str,
    "max_iterations": int,
    "seed": int,
    "launch_power_dbm": float,
    "power_learning_rate": float,
    "early_stop_window": int,
    "early_stop_rel_change": float,
    "kappa_path": str,
    "mi_samples": int,
}

_SSF_KEYS = {
    "n_symbols": int,
    "oversampling": int,
    "rolloff": float,
    "step_km": float,
    "seed": int,
}


def parse_config(path) -> dict:
    """Read the file into a flat {dotted key: typed value} mapping."""
    raw = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}")
    with fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line.strip()!r}")
            key, _, value = stripped.partition("=")
            key = key.strip()
            value = value.strip()
            if key in raw:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            raw[key] = value
    return {k: _convert(k, v, path) for k, v in raw.items()}


def _key_table(key):
    section, _, name = key.partition(".")
    table = {"link": _LINK_KEYS, "train": _TRAIN_KEYS, "ssf": _SSF_KEYS}.get(section)
    if table is None or name not in table:
        raise ConfigError(f"unknown config key {key!r}")
    return table[name]


def _convert(key, value, path=""):
    typ = _key_table(key)
    if typ is str:
        return value
    try:
        # accept 2e9 and 50_000 spellings for integer fields
        return typ(value) if typ is not int else int(float(value.replace("_", "")))
    except ValueError:
        raise ConfigError(f"{path}: key {key!r}: cannot parse {value!r} as {typ.__name__}")


def apply_overrides(cfg: dict, overrides: dict) -> dict:
    """Layer CLI-sourced values (already typed) over the file values."""
    merged = dict(cfg)
    for key, value in overrides.items():
        if value is None:
            continue
        _key_table(key)  # typo guard for programmatic callers
        merged[key] = value
    return merged


def build_link_config(cfg: dict) -> LinkConfig:
    kwargs = {}
    for name in _LINK_KEYS:
        key = f"link.{name}"
        if key in cfg:
            kwargs[name] = cfg[key]
    return LinkConfig(**kwargs)


def build_ssf_config(cfg: dict) -> SsfConfig:
    """SSF grid settings from ssf.*, shared physics from link.*."""
    link_shared = (
        "symbol_rate_hz", "n_channels", "channel_spacing_hz", "span_length_km",
        "gamma_per_w_km", "dispersion_ps_nm_km", "attenuation_db_per_km",
        "noise_figure_db", "center_wavelength_nm",
    )
    kwargs = {}
    for name in link_shared:
        key = f"link.{name}"
        if key in cfg:
            kwargs[name] = cfg[key]
    for name in _SSF_KEYS:
        key = f"ssf.{name}"
        if key in cfg:
            kwargs[name] = cfg[key]
    valid = {f.name for f in fields(SsfConfig)}
    assert set(kwargs) <= valid
    return SsfConfig(**kwargs)


def parse_batch_schedule(text: str):
    """"0:8,100:2048" -> ((0, 8), (100, 2048))."""
    entries = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        pieces = part.split(":")
        if len(pieces) != 2:
            raise ConfigError(f"batch schedule entry {part!r} is not iteration:multiple")
        try:
            entries.append((int(pieces[0]), int(pieces[1])))
        except ValueError:
            raise ConfigError(f"batch schedule entry {part!r} is not iteration:multiple")
    if not entries:
        raise ConfigError("batch schedule is empty")
    return tuple(entries)


def parse_power_range(text: str):
    """"-6.5:1:9.5" -> [-6.5, -5.5, ..., 9.5] (stop inclusive).

    A single number is a one-point list.  Comma lists work too.
    """
    text = text.strip()
    if not text:
        raise ConfigError("empty power list")
    if ":" in text:
        pieces = text.split(":")
        if len(pieces) != 3:
            raise ConfigError(f"power range {text!r} is not start:step:stop")
        try:
            start, step, stop = (float(p) for p in pieces)
        except ValueError:
            raise ConfigError(f"power range {text!r} is not numeric")
        if step <= 0:
            raise ConfigError("power range step must be positive")
        if stop < start:
            raise ConfigError("power range stop must be >= start")
        n = int(round((stop - start) / step))
        powers = [start + i * step for i in range(n + 1)]
        # guard the float endpoint: never emit past stop
        return [round(p, 12) for p in powers if p <= stop + 1e-9]
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse powers {text!r}")
