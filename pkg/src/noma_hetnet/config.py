"""System constants, unit conversions, and config file handling.

All transmit powers enter in dBm and are converted to watts at the
evaluation boundary; channel gains are linear power gains (|h|^2,
dimensionless). The total band B is split by the backhaul fraction eta:
eta*B feeds the RSU-to-HAP links (OFDMA, eta*B/M each), (1-eta)*B is the
shared NOMA access band.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace


class ConfigError(ValueError):
    """A SystemConfig value violates its documented range."""


def dbm_to_watt(p_dbm: float) -> float:
    """10^((p - 30)/10): dBm -> watts."""
    if not isinstance(p_dbm, (int, float)) or not math.isfinite(p_dbm):
        raise ConfigError(f"dBm value must be finite, got {p_dbm!r}")
    return 10.0 ** ((p_dbm - 30.0) / 10.0)


def noise_power(noise_psd: float, bandwidth: float) -> float:
    """AWGN floor over a band, in watts. `noise_psd` is in dBm/Hz."""
    if bandwidth <= 0:
        raise ConfigError(f"bandwidth must be > 0, got {bandwidth!r}")
    return dbm_to_watt(noise_psd) * bandwidth


@dataclass(frozen=True)
class SystemConfig:
    # topology
    num_vues: int = 50             # N
    num_rsus: int = 5              # M
    rsu_radius: float = 50.0       # m, serving disk radius per RSU
    rsu_spacing: float | None = None  # m along the road; None -> 4 * rsu_radius
    hap_altitude: float = 1.0e6    # m, platform height above the road plane

    # spectrum / radio
    total_bandwidth: float = 20e6  # Hz (B)
    noise_psd: float = -174.0      # dBm/Hz
    max_power_vue: float = 23.0    # dBm, uplink cap per VUE
    max_power_rsu: float = 43.0    # dBm, fixed RSU backhaul transmit power

    # association / pricing
    weight_alpha: float = 0.99           # fronthaul weight in the caching preference, in (0,1)
    pricing_omega_init: float = 1e22     # Omega_0, utility per watt of cross-tier interference
    omega_step: float | None = None      # delta; None -> 0.05 * pricing_omega_init
    omega_max: float | None = None       # pricing clamp; None -> 10 * pricing_omega_init
    hap_interference_threshold: float = 1e-15  # W, mean cross-tier floor that triggers a price cut

    # caching
    cache_capacity: int = 10       # x_max, items per RSU
    cache_hit_prob: float = 0.5    # per-VUE probability its content is cached somewhere

    # tiers / QoS
    hap_user_count: int | None = None  # |L_l|; None -> min(ceil(0.1 N), N - 1)
    hap_vue_power: float | None = None  # dBm, constant HAP-VUE uplink power; None -> max_power_vue
    qos_rate: float = 0.0          # bit/s, per-VUE rate floor (0 disables the constraint)

    # channel model (defaults are conventional urban / LoS values, all overridable)
    pathloss_exponent: float = 3.5    # terrestrial log-distance exponent
    pathloss_ref_db: float = 38.0     # dB at the 1 m reference distance
    pathloss_ref_dist: float = 1.0    # m
    carrier_freq: float = 2e9         # Hz, free-space loss on the HAP links
    rician_k_db: float = 10.0         # K-factor of the HAP-link fading
    min_link_dist: float = 1.0        # m, clamps the path-loss singularity at d -> 0

    seed: int = 0                  # 64-bit snapshot seed

    # --- resolved accessors -------------------------------------------------

    @property
    def max_power_vue_watt(self) -> float:
        return dbm_to_watt(self.max_power_vue)

    @property
    def max_power_rsu_watt(self) -> float:
        return dbm_to_watt(self.max_power_rsu)

    @property
    def hap_vue_power_watt(self) -> float:
        dbm = self.max_power_vue if self.hap_vue_power is None else self.hap_vue_power
        return dbm_to_watt(dbm)

    @property
    def resolved_rsu_spacing(self) -> float:
        return 4.0 * self.rsu_radius if self.rsu_spacing is None else self.rsu_spacing

    @property
    def resolved_hap_user_count(self) -> int:
        if self.hap_user_count is not None:
            return self.hap_user_count
        return min(math.ceil(0.1 * self.num_vues), self.num_vues - 1)

    @property
    def resolved_omega_step(self) -> float:
        if self.omega_step is not None:
            return self.omega_step
        return 0.05 * self.pricing_omega_init

    @property
    def resolved_omega_max(self) -> float:
        if self.omega_max is not None:
            return self.omega_max
        return 10.0 * self.pricing_omega_init

    def validate(self) -> "SystemConfig":
        """Raise ConfigError on the first violated invariant; return self."""
        if self.num_vues < 1:
            raise ConfigError(f"num_vues must be >= 1, got {self.num_vues}")
        if self.num_rsus < 1:
            raise ConfigError(f"num_rsus must be >= 1, got {self.num_rsus}")
        if self.total_bandwidth <= 0:
            raise ConfigError(f"total_bandwidth must be > 0, got {self.total_bandwidth}")
        if not 0.0 < self.weight_alpha < 1.0:
            raise ConfigError(f"weight_alpha must lie in (0, 1), got {self.weight_alpha}")
        if not 0.0 <= self.cache_hit_prob <= 1.0:
            raise ConfigError(f"cache_hit_prob must lie in [0, 1], got {self.cache_hit_prob}")
        if self.cache_capacity < 0:
            raise ConfigError(f"cache_capacity must be >= 0, got {self.cache_capacity}")
        hap_count = self.resolved_hap_user_count
        if not 0 <= hap_count < self.num_vues:
            raise ConfigError(
                f"hap_user_count must satisfy 0 <= count < num_vues, got {hap_count}"
            )
        for name in ("noise_psd", "max_power_vue", "max_power_rsu"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ConfigError(f"{name} must be finite, got {value}")
        if self.hap_vue_power is not None and not math.isfinite(self.hap_vue_power):
            raise ConfigError(f"hap_vue_power must be finite, got {self.hap_vue_power}")
        if self.rsu_radius <= 0:
            raise ConfigError(f"rsu_radius must be > 0, got {self.rsu_radius}")
        if self.resolved_rsu_spacing <= 0:
            raise ConfigError(f"rsu_spacing must be > 0, got {self.rsu_spacing}")
        if self.hap_altitude <= 0:
            raise ConfigError(f"hap_altitude must be > 0, got {self.hap_altitude}")
        if self.min_link_dist <= 0:
            raise ConfigError(f"min_link_dist must be > 0, got {self.min_link_dist}")
        if self.pricing_omega_init < 0:
            raise ConfigError(f"pricing_omega_init must be >= 0, got {self.pricing_omega_init}")
        if self.qos_rate < 0:
            raise ConfigError(f"qos_rate must be >= 0, got {self.qos_rate}")
        if self.cache_capacity == 0 and self.cache_hit_prob == 1.0:
            raise ConfigError(
                "infeasible caching config: cache_hit_prob=1 demands a slot per VUE "
                "but cache_capacity=0"
            )
        return self

    def as_dict(self) -> dict:
        return asdict(self)


_INT_FIELDS = {"num_vues", "num_rsus", "cache_capacity", "hap_user_count", "seed"}
_OPTIONAL_FIELDS = {"omega_step", "omega_max", "hap_user_count", "hap_vue_power",
                    "rsu_spacing"}


def _coerce(name: str, value):
    if value is None:
        if name in _OPTIONAL_FIELDS:
            return None
        raise ConfigError(f"field {name} cannot be null")
    if isinstance(value, str):
        if value.strip().lower() in {"none", "null"} and name in _OPTIONAL_FIELDS:
            return None
        value = float(value)
    if name in _INT_FIELDS:
        ivalue = int(value)
        if ivalue != value:
            raise ConfigError(f"field {name} expects an integer, got {value!r}")
        return ivalue
    return float(value)


def config_from_mapping(mapping: dict) -> SystemConfig:
    """Build a SystemConfig from a key/value mapping (keys = field names)."""
    known = {f.name for f in fields(SystemConfig)}
    unknown = sorted(set(mapping) - known)
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
    kwargs = {name: _coerce(name, value) for name, value in mapping.items()}
    return SystemConfig(**kwargs)


def load_config(path) -> SystemConfig:
    """Read a JSON config file whose keys mirror SystemConfig field names."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return config_from_mapping(data)


def apply_overrides(config: SystemConfig, overrides: dict) -> SystemConfig:
    """Return a copy of `config` with `field=value` overrides applied."""
    known = {f.name for f in fields(SystemConfig)}
    parsed = {}
    for name, value in overrides.items():
        if name not in known:
            raise ConfigError(f"unknown config field: {name}")
        parsed[name] = _coerce(name, value)
    return replace(config, **parsed)
