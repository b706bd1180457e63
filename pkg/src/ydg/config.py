"""Run configuration: INI-style sections over documented defaults.

Unknown sections or keys are rejected so typos never silently fall back to
defaults.
"""
import configparser
import copy

from .dataset import Thresholds
from .sampler import SampleConfig

_SC = SampleConfig()
_TH = Thresholds()

DEFAULTS = {
    "sampler": {
        "wn_range": _SC.wn_range,
        "zeta_range": _SC.zeta_range,
        "gain_range": _SC.gain_range,
        "zero_loc_range": _SC.zero_loc_range,
        "p_zero": _SC.p_zero,
        "q_gain_range": _SC.q_gain_range,
        "seed": 0,
    },
    "filter": {
        "s_inf_max": _TH.s_inf_max,
        "t_settle_max": _TH.t_settle_max,
        "v_min": _TH.v_min,
        "horizon": _TH.horizon,
        "dt": _TH.dt,
        "band": _TH.band,
        "trim_sigma": _TH.trim_sigma,
    },
    "network": {"hidden": (256, 256, 256)},
    "schedule": {"T": 200, "beta_1": 1e-4, "beta_T": 0.05},
    "train": {
        "steps": 20000,
        "batch": 256,
        "lr": 1e-3,
        "lr_schedule": "cosine",
        "beta1": 0.9,
        "beta2": 0.999,
        "eps_hat": 1e-8,
        "seed": 0,
    },
    "guidance": {"lambda": 1.1, "n_shots": 15, "cond_drop_p": 0.1},
    "eval": {
        "n_plants": 200,
        "mode": "dataset",
        "seed": 1,
        "noise_seed": 2,
        "lambdas": (0.5, 1.0, 1.1, 2.0, 4.0),
        "target_sinf": 1.5,
        "target_ts": 8.0,
    },
}


class ConfigError(ValueError):
    pass


def _convert(section, key, text):
    default = DEFAULTS[section][key]
    try:
        if isinstance(default, tuple):
            kind = type(default[0])
            return tuple(kind(v) for v in text.split(","))
        if isinstance(default, bool):
            return text.strip().lower() in ("1", "true", "yes", "on")
        return type(default)(text.strip())
    except ValueError as e:
        raise ConfigError(f"bad value for [{section}] {key}: {text!r}") from e


def load_config(path=None):
    """Defaults overlaid with the INI file at ``path`` (if any)."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        with open(path) as f:
            parser.read_file(f)
    except (OSError, configparser.Error) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    for section in parser.sections():
        if section not in cfg:
            raise ConfigError(f"unknown config section [{section}]")
        for key, text in parser.items(section):
            if key not in cfg[section]:
                raise ConfigError(f"unknown config key '{key}' in [{section}]")
            cfg[section][key] = _convert(section, key, text)
    return cfg


def sample_config(cfg):
    s = cfg["sampler"]
    return SampleConfig(s["wn_range"], s["zeta_range"], s["gain_range"], s["zero_loc_range"],
                        s["p_zero"], s["q_gain_range"], s["seed"])


def thresholds(cfg):
    return Thresholds(**cfg["filter"])
