"""YAML experiment configuration.

One file describes one experiment.  Every section is optional and falls
back to the defaults below; unknown keys are rejected so typos surface as
errors naming the offending key path.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from importlib import resources

import yaml

from .channel_models import Degenerate, Empirical, LogNormal, sample_trace
from .coincidence import CoincidenceConfig
from .decoy import DecoyParams
from .events import BackgroundConfig, DeviceEfficiencies, PartyEfficiency, SourceConfig
from .keyrate import ConstantEfficiency, TableEfficiency

DEFAULTS = {
    "seed": 0,
    "source": {"pair_rate": 1.0e7, "intrinsic_qber": 0.0234},
    "devices": {
        "alice": {"source_coupling": 1.0, "polarization_analyzer": 1.0, "detector": 1.0},
        "bob": {"source_coupling": 0.5, "polarization_analyzer": 0.8, "detector": 0.5},
    },
    "background": {"bob_background_rate": 2700.0, "alice_dark_rate": 0.0, "bob_dark_rate": 0.0},
    "channel": {
        "model": "lognormal",
        "sigma": 2.0,
        "mean_eta": 1.45e-3,
        "eta0": None,
        "literal_location": False,
        "histogram_csv": None,
        "block_duration": 0.01,
        "duration": 180.0,
    },
    "coincidence": {"window_ns": 5.0, "accidental_shift_ns": None},
    "error_correction": {"model": "table", "f": 1.22,
                         "points": [[0.0430, 1.2202], [0.0551, 1.2697]]},
    "simulation": {
        "mode": "link",
        "chunk_duration": 1.0,
        "jitter_ns": 0.0,
        "alice_stream": None,
        "bob_stream": None,
    },
    "pdtc": {
        "block_duration": 0.01,
        "n_bins": 50,
        "subtract_accidentals": True,
        "eta_b_device": None,
        "calibration_duration": 10.0,
    },
    "snrf": {
        "durations_ms": [5, 10, 20, 30, 50, 100],
        "thresholds_cps": None,
        "n_thresholds": 41,
        "mode": "singles",
        "background_rate": None,
        "window_blocks": None,
    },
    "decoy": {
        "mu": None,
        "nu": 0.05,
        "y0": 1.0e-8,
        "e_detector": 0.033,
        "e0": 0.5,
        "f_ec": 1.22,
        "sift_factor": 0.5,
        "mean_losses_db": [5, 10, 15, 20, 25, 30, 35, 40, 45, 50],
        "sigmas": [0.18, 1.8],
    },
    "satellite": {
        "pair_rate": 1.0e8,
        "intrinsic_qber": 0.025,
        "alice_efficiency": 0.8,
        "sample_duration": 2.0,
        "trace_block_duration": 0.005,
        "chunk_duration": 0.1,
        "durations_ms": [5, 10, 20, 30, 50, 100],
        "entries": [],
    },
}

_ENTRY_KEYS = ("elevation_deg", "mean_loss_db", "sigma", "background_rate", "dwell_time")


class ConfigError(ValueError):
    """Schema violation; ``path`` is the dotted key path of the bad value."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


def _merge(defaults, given, path):
    if given is None:
        return copy.deepcopy(defaults)
    if not isinstance(given, dict):
        raise ConfigError(path or "<root>", "expected a mapping")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        sub = f"{path}.{key}" if path else str(key)
        if key not in defaults:
            raise ConfigError(sub, "unknown key")
        if isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], value, sub)
        else:
            out[key] = value
    return out


def _number(value, path, *, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    return float(value)


def _build(path, factory, **kwargs):
    try:
        return factory(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(path, str(exc)) from None


@dataclass
class ExperimentConfig:
    raw: dict

    @property
    def seed(self):
        s = self.raw["seed"]
        if isinstance(s, bool) or not isinstance(s, int) or s < 0:
            raise ConfigError("seed", f"expected a nonnegative integer, got {s!r}")
        return s

    def source(self):
        s = self.raw["source"]
        return _build("source", SourceConfig,
                      pair_rate=_number(s["pair_rate"], "source.pair_rate"),
                      intrinsic_qber=_number(s["intrinsic_qber"], "source.intrinsic_qber"))

    def _party(self, who):
        d = self.raw["devices"][who]
        kwargs = {k: _number(v, f"devices.{who}.{k}") for k, v in d.items()}
        return _build(f"devices.{who}", PartyEfficiency, **kwargs)

    def devices(self):
        return DeviceEfficiencies(self._party("alice"), self._party("bob"))

    def background(self):
        b = self.raw["background"]
        kwargs = {k: _number(v, f"background.{k}") for k, v in b.items()}
        return _build("background", BackgroundConfig, **kwargs)

    def channel_model(self):
        c = self.raw["channel"]
        kind = c["model"]
        if kind == "lognormal":
            return _build("channel", LogNormal,
                          sigma=_number(c["sigma"], "channel.sigma"),
                          mean_eta=_number(c["mean_eta"], "channel.mean_eta"),
                          literal_location=bool(c["literal_location"]))
        if kind == "degenerate":
            return _build("channel", Degenerate, eta0=_number(c["eta0"], "channel.eta0"))
        if kind == "empirical":
            if not c["histogram_csv"]:
                raise ConfigError("channel.histogram_csv", "required for the empirical model")
            try:
                return Empirical.read_csv(c["histogram_csv"])
            except (OSError, ValueError) as exc:
                raise ConfigError("channel.histogram_csv", str(exc)) from None
        raise ConfigError("channel.model", f"expected lognormal, degenerate or empirical, got {kind!r}")

    @property
    def block_duration(self):
        return _number(self.raw["channel"]["block_duration"], "channel.block_duration")

    @property
    def duration(self):
        return _number(self.raw["channel"]["duration"], "channel.duration")

    def trace(self):
        blk = self.block_duration
        n = int(round(self.duration / blk))
        if n < 1:
            raise ConfigError("channel.duration", "shorter than one block")
        return _build("channel", sample_trace, model=self.channel_model(), n_blocks=n,
                      block_duration=blk, seed=self.seed)

    def coincidence(self):
        c = self.raw["coincidence"]
        return _build("coincidence", CoincidenceConfig,
                      window=_number(c["window_ns"], "coincidence.window_ns"),
                      accidental_shift=_number(c["accidental_shift_ns"],
                                               "coincidence.accidental_shift_ns", allow_none=True))

    def error_correction(self):
        e = self.raw["error_correction"]
        if e["model"] == "constant":
            return _build("error_correction", ConstantEfficiency,
                          f=_number(e["f"], "error_correction.f"))
        if e["model"] == "table":
            pts = e["points"]
            if not isinstance(pts, list) or not all(isinstance(p, list) and len(p) == 2 for p in pts):
                raise ConfigError("error_correction.points", "expected a list of [qber, f] pairs")
            return _build("error_correction", TableEfficiency, points=tuple(tuple(p) for p in pts))
        raise ConfigError("error_correction.model", f"expected table or constant, got {e['model']!r}")

    def simulation(self):
        s = self.raw["simulation"]
        if s["mode"] not in ("link", "local"):
            raise ConfigError("simulation.mode", f"expected link or local, got {s['mode']!r}")
        return s

    def section(self, name):
        return self.raw[name]

    def decoy_params(self):
        d = self.raw["decoy"]
        kwargs = {k: _number(d[k], f"decoy.{k}", allow_none=(k == "mu"))
                  for k in ("mu", "nu", "y0", "e_detector", "e0", "f_ec", "sift_factor")}
        return _build("decoy", DecoyParams, **kwargs)

    def durations(self, section="snrf"):
        vals = self.raw[section]["durations_ms"]
        if not isinstance(vals, list) or not vals:
            raise ConfigError(f"{section}.durations_ms", "expected a non-empty list")
        return tuple(_number(v, f"{section}.durations_ms[{i}]") * 1e-3 for i, v in enumerate(vals))

    def satellite_entries(self):
        entries = self.raw["satellite"]["entries"]
        if not isinstance(entries, list) or not entries:
            raise ConfigError("satellite.entries", "expected a non-empty list")
        out = []
        for i, e in enumerate(entries):
            path = f"satellite.entries[{i}]"
            if not isinstance(e, dict):
                raise ConfigError(path, "expected a mapping")
            extra = set(e) - set(_ENTRY_KEYS)
            if extra:
                raise ConfigError(f"{path}.{sorted(extra)[0]}", "unknown key")
            missing = [k for k in _ENTRY_KEYS if k not in e]
            if missing:
                raise ConfigError(f"{path}.{missing[0]}", "missing")
            out.append({k: _number(e[k], f"{path}.{k}") for k in _ENTRY_KEYS})
        return out


def load_config(source=None):
    """Parse a YAML file path (or an already-loaded mapping) into a config."""
    if source is None:
        data = {}
    elif isinstance(source, dict):
        data = source
    else:
        try:
            with open(source) as fh:
                data = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError("<file>", str(exc)) from None
        except yaml.YAMLError as exc:
            raise ConfigError("<file>", f"invalid YAML: {exc}") from None
    return ExperimentConfig(_merge(DEFAULTS, data if data is not None else {}, ""))


def bundled_config_path(name):
    """Filesystem path of a config shipped in ``fsoqkd/data``."""
    return resources.files("fsoqkd") / "data" / f"{name}.yaml"


def load_bundled(name):
    return load_config(str(bundled_config_path(name)))
