import dataclasses
import math
import os
from dataclasses import dataclass, fields
from typing import Any, Mapping

import yaml
from dotenv import load_dotenv

from utils.errors import ConfigError

load_dotenv(override=True)

METHODS = ("dualgfl", "dualgflstat", "fedavg", "fedavgauc", "fedavghed")
BID_MODES = ("fixed_quality", "strategic_quality")

DEFAULTS_PATH = os.path.join(os.path.dirname(__file__), "defaults.yaml")


def default_output_dir() -> str:
    return os.environ.get("DUALGFL_OUTPUT_DIR", os.path.join(os.getcwd(), "output"))


@dataclass(frozen=True)
class SimConfig:
    n_clients: int
    n_servers: int
    winners_per_round: int
    capacity: int
    rounds: int
    seed: int
    method: str
    cohort_size: int | None
    grid_spacing: float
    model_size_bits: float
    bandwidth_hz: float
    tx_power_w: float
    noise_psd: float
    path_loss_ref_km: float
    path_loss_exponent: float
    kappa: float
    cycles_per_sample: float
    clock_hz: float
    compute_jitter: float
    theta_low: float
    theta_high: float
    coalition_theta_low: float
    coalition_theta_high: float
    cost_distribution: str
    bid_mode: str
    quality_weights: tuple[float, ...]
    quality_cost_curvature: float
    bandwidth_per_client: float
    edge_bandwidth: float
    budget: float
    ema_coefficient: float
    payoff_prior: float | None
    n_samples: int
    n_features: int
    n_classes: int
    class_separation: float
    test_fraction: float
    dirichlet_beta: float
    local_epochs: int
    learning_rate: float
    batch_size: int

    def replace(self, **overrides) -> "SimConfig":
        return config_from_mapping({**self.to_dict(), **overrides})

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["quality_weights"] = list(self.quality_weights)
        return out


_FIELD_TYPES = {f.name: f.type for f in fields(SimConfig)}


def _coerce(key: str, value: Any) -> Any:
    kind = _FIELD_TYPES[key]
    optional = kind in (int | None, float | None)
    if value is None:
        if optional:
            return None
        raise ConfigError(key, "value is required")
    try:
        if kind in (int, int | None):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if kind in (float, float | None):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if kind is str:
            if not isinstance(value, str):
                raise TypeError
            return value
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return (float(value),)
        return tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(key, f"cannot interpret {value!r} as {kind}") from None


def _check(key: str, ok: bool, message: str):
    if not ok:
        raise ConfigError(key, message)


def validate(config: SimConfig) -> SimConfig:
    c = config
    _check("n_clients", c.n_clients >= 1, "must be >= 1")
    _check("n_servers", c.n_servers >= 1, "must be >= 1")
    _check("winners_per_round", 1 <= c.winners_per_round <= c.n_servers,
           "must satisfy 1 <= winners_per_round <= n_servers")
    _check("capacity", c.capacity >= 1 and c.capacity * c.n_servers >= c.n_clients,
           "capacity * n_servers must be >= n_clients")
    _check("rounds", c.rounds >= 1, "must be >= 1")
    _check("local_epochs", c.local_epochs >= 1, "must be >= 1")
    _check("dirichlet_beta", c.dirichlet_beta > 0, "must be > 0")
    _check("method", c.method in METHODS, f"must be one of {', '.join(METHODS)}")
    _check("bid_mode", c.bid_mode in BID_MODES, f"must be one of {', '.join(BID_MODES)}")
    _check("cohort_size", c.cohort_size is None or 1 <= c.cohort_size <= c.n_clients,
           "must be between 1 and n_clients")
    for key in ("grid_spacing", "model_size_bits", "bandwidth_hz", "noise_psd",
                "path_loss_ref_km", "kappa", "cycles_per_sample", "clock_hz",
                "bandwidth_per_client", "budget", "learning_rate", "class_separation"):
        value = getattr(c, key)
        _check(key, math.isfinite(value) and value > 0, "must be a positive number")
    _check("edge_bandwidth", math.isfinite(c.edge_bandwidth) and c.edge_bandwidth >= 0, "must be >= 0")
    _check("tx_power_w", c.tx_power_w >= 0, "must be >= 0")
    _check("path_loss_exponent", c.path_loss_exponent > 0, "must be > 0")
    _check("compute_jitter", 0 <= c.compute_jitter < 1, "must lie in [0, 1)")
    _check("theta_low", 0 <= c.theta_low <= c.theta_high, "must satisfy 0 <= theta_low <= theta_high")
    _check("coalition_theta_low", 0 <= c.coalition_theta_low < c.coalition_theta_high,
           "must satisfy 0 <= coalition_theta_low < coalition_theta_high")
    _check("cost_distribution", c.cost_distribution == "uniform" or c.cost_distribution.startswith("beta:"),
           "must be 'uniform' or 'beta:<a>,<b>'")
    _check("quality_weights", len(c.quality_weights) == 1 and c.quality_weights[0] >= 0,
           "the simulator bids a single quality attribute; give one nonnegative weight")
    _check("quality_cost_curvature", c.quality_cost_curvature > 0, "must be > 0")
    _check("ema_coefficient", 0 <= c.ema_coefficient <= 1, "must lie in [0, 1]")
    _check("payoff_prior", c.payoff_prior is None or c.payoff_prior >= 0, "must be >= 0")
    _check("n_samples", c.n_samples >= c.n_clients, "dataset must hold at least one sample per client")
    _check("n_features", c.n_features >= 1, "must be >= 1")
    _check("n_classes", c.n_classes >= 2, "must be >= 2")
    _check("test_fraction", 0 < c.test_fraction < 1, "must lie in (0, 1)")
    _check("batch_size", c.batch_size >= 1, "must be >= 1")
    return config


def load_defaults() -> dict[str, Any]:
    with open(DEFAULTS_PATH, "r") as f:
        return yaml.safe_load(f)


def config_from_mapping(document: Mapping[str, Any] | None) -> SimConfig:
    """Overlay a flat mapping on the defaults and return a validated SimConfig."""
    document = document or {}
    if not isinstance(document, Mapping):
        raise ConfigError("<document>", "config must be a flat key-value mapping")
    for key in document:
        if key not in _FIELD_TYPES:
            raise ConfigError(str(key), "unknown key")
    merged = {**load_defaults(), **document}
    values = {key: _coerce(key, merged.get(key)) for key in _FIELD_TYPES}
    return validate(SimConfig(**values))


def load_config(path: str) -> SimConfig:
    if not os.path.exists(path):
        raise ConfigError("<path>", f"config file not found: {path}")
    try:
        with open(path, "r") as f:
            document = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError("<document>", f"parse error: {e}") from e
    return config_from_mapping(document)


def emit_config(config: SimConfig, path: str | None = None) -> str:
    text = yaml.safe_dump(config.to_dict(), sort_keys=False)
    if path is not None:
        with open(path, "w") as f:
            f.write(text)
    return text
