"""Layered configuration of the three phases.

Values are looked up, in order, in explicit (command line) settings, a
``key = value`` config file, a named preset of ``htlcsim_configs`` and
finally the builtin ``*_dflts`` sections of ``htlcsim_configs``.

>>> c = resolve_configs({"peers": "30"}, defaults_from="hub_network")
>>> c["peers"], c["sigma_topology"], c["gini"]
(30, 0.0, 0.5)
"""

import os
from collections import ChainMap
from configparser import ConfigParser
from typing import Iterable, Mapping, Optional

from htlcsim import htlcsim_configs, htlcsim_configs_file
from htlcsim.engine import SimConfig
from htlcsim.netgen import GenerationParams
from htlcsim.routing import DistanceWeights

DFLT_SECTIONS = ("generate_dflts", "simulate_dflts", "analyze_dflts")
CONFIG_FILE_SECTION = "htlcsim"

# config key -> GenerationParams field
generation_fields = {
    "seed": "seed",
    "peers": "n_peers",
    "avg_channels": "avg_channels_per_peer",
    "sigma_topology": "topology_sigma",
    "p_uncoop_before": "p_uncoop_before",
    "p_uncoop_after": "p_uncoop_after",
    "avg_capacity": "avg_channel_capacity",
    "gini": "capacity_gini",
    "payment_rate": "payment_rate",
    "n_payments": "n_payments",
    "sigma_amount": "amount_sigma",
    "same_recipient_fraction": "same_recipient_fraction",
    "base_fee": "base_fee",
    "proportional_fee": "proportional_fee",
    "timelock_delta": "timelock_delta",
    "min_htlc": "min_htlc",
}

# config key -> SimConfig field
simulation_fields = {
    "seed": "seed",
    "p_uncoop_before": "p_uncoop_before",
    "p_uncoop_after": "p_uncoop_after",
    "latency_min": "latency_min",
    "latency_max": "latency_max",
    "processing_latency": "processing_latency",
    "timeout_ms": "payment_timeout",
    "block_interval_ms": "block_interval",
    "validity_window_ms": "validity_window",
    "final_timelock": "final_timelock",
}


def builtin_defaults(configs: Mapping = None) -> dict:
    configs = htlcsim_configs if configs is None else configs
    dflts = {}
    for section in DFLT_SECTIONS:
        dflts.update(configs.get(section, {}))
    return dflts


def _normalize_key(key: str) -> str:
    return key.strip().lstrip("-").replace("-", "_")


def coerce_value(key: str, value, dflts: Mapping = None):
    """Cast ``value`` to the type of the builtin default of ``key``.

    >>> (coerce_value("peers", "250"), coerce_value("gini", "0.3"),
    ...  coerce_value("avg-capacity", "1e6"))
    (250, 0.3, 1000000)
    """
    dflts = builtin_defaults() if dflts is None else dflts
    key = _normalize_key(key)
    if key not in dflts:
        raise ValueError(f"Unknown configuration key: {key}")
    dflt = dflts[key]
    if not isinstance(value, str):
        value = str(value)
    value = value.strip()
    if isinstance(dflt, bool):
        if value.lower() in ("true", "yes", "1"):
            return True
        if value.lower() in ("false", "no", "0"):
            return False
        raise ValueError(f"{key} should be a boolean, was {value!r}")
    try:
        if isinstance(dflt, int):
            x = float(value)
            if not x.is_integer():
                raise ValueError
            return int(x)
        if isinstance(dflt, float):
            return float(value)
    except ValueError:
        raise ValueError(
            f"{key} should be a {type(dflt).__name__}, was {value!r}"
        ) from None
    return value


def coerce_configs(items: Mapping, dflts: Mapping = None) -> dict:
    dflts = builtin_defaults() if dflts is None else dflts
    return {
        _normalize_key(k): coerce_value(k, v, dflts)
        for k, v in items.items()
        if v is not None
    }


def read_config_file(path: str) -> dict:
    """Read a ``key = value`` file, with or without an ini ``[section]`` header.

    Keys may use dashes or underscores. Values are cast to the type of their defaults.
    """
    path = os.path.abspath(os.path.expanduser(path))
    if not os.path.isfile(path):
        raise ValueError(f"No such config file: {path}")
    with open(path) as fp:
        text = fp.read()
    if not any(line.lstrip().startswith("[") for line in text.splitlines()):
        text = f"[{CONFIG_FILE_SECTION}]\n" + text
    c = ConfigParser()
    c.read_string(text, source=path)
    items = {}
    for section in c.sections():
        items.update(c[section])
    return coerce_configs(items)


def preset(name: str, configs: Mapping = None) -> dict:
    configs = htlcsim_configs if configs is None else configs
    try:
        return coerce_configs(configs[name])
    except KeyError:
        raise ValueError(
            f"{htlcsim_configs_file} json didn't have a {name} field. "
            f"Choose from: {', '.join(presets(configs))}"
        ) from None


def presets(configs: Mapping = None) -> Iterable[str]:
    configs = htlcsim_configs if configs is None else configs
    return [k for k in configs if k not in DFLT_SECTIONS]


def resolve_configs(
    explicit: Mapping = None,
    config_file: Optional[str] = None,
    defaults_from: Optional[str] = None,
) -> dict:
    """Flags override the config file, which overrides the preset, which overrides builtins.

    :param explicit: Settings given explicitly (``None`` values are ignored)
    :param config_file: Path of a ``key = value`` file
    :param defaults_from: Name of a preset of ``htlcsim_configs``
    """
    explicit = coerce_configs(explicit or {})
    from_file = read_config_file(config_file) if config_file else {}
    from_preset = preset(defaults_from) if defaults_from else {}
    return dict(ChainMap(explicit, from_file, from_preset, builtin_defaults()))


def generation_params_from(configs: Mapping) -> GenerationParams:
    return GenerationParams(
        **{field: configs[key] for key, field in generation_fields.items() if key in configs}
    )


def sim_config_from(configs: Mapping) -> SimConfig:
    kwargs = {
        field: configs[key] for key, field in simulation_fields.items() if key in configs
    }
    weights = {k: configs[k] for k in ("fee_weight", "timelock_weight") if k in configs}
    return SimConfig(weights=DistanceWeights(**weights), **kwargs)
