"""Seeded, reproducible network snapshots: topology, channels, caching.

A Scenario is a pure function of its (config, seed) pair and is immutable
after construction, so it can be shared read-only across any number of
concurrent evaluators. Randomness is split into three independent PCG64
streams spawned from the seed in a fixed order:

    stream 0 -> positions, stream 1 -> fading, stream 2 -> caching

so e.g. changing the cache draw never perturbs the channel realization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError, SystemConfig

# Fading realizations are clamped away from exact zero so every stored
# |h|^2 stays strictly positive.
_FADE_FLOOR = 1e-30

_SPEED_OF_LIGHT = 299792458.0  # m/s


@dataclass(frozen=True)
class ChannelSet:
    """Linear power gains |h|^2 for every link; never complex coefficients."""

    gain_vue_rsu: np.ndarray   # (N, M)
    gain_vue_hap: np.ndarray   # (N,)
    gain_rsu_hap: np.ndarray   # (M,)

    def validate(self) -> "ChannelSet":
        for name in ("gain_vue_rsu", "gain_vue_hap", "gain_rsu_hap"):
            g = getattr(self, name)
            if not np.all(np.isfinite(g)) or not np.all(g > 0):
                raise ValueError(f"{name} must be finite and strictly positive")
        return self


@dataclass(frozen=True)
class CacheMatrix:
    """Binary caching indicators, one row per VUE, one column per RSU."""

    entries: np.ndarray  # (N, M), int8

    def validate(self, cache_capacity: int) -> "CacheMatrix":
        x = self.entries
        if not np.isin(x, (0, 1)).all():
            raise ValueError("cache entries must be 0/1")
        if (x.sum(axis=1) > 1).any():
            raise ValueError("each VUE's content may be cached at most once")
        if (x.sum(axis=0) > cache_capacity).any():
            raise ValueError(f"RSU cache occupancy exceeds capacity {cache_capacity}")
        return self

    def caching_rsu(self, n: int) -> int | None:
        """Index of the RSU holding VUE n's content, or None."""
        hits = np.flatnonzero(self.entries[n])
        return int(hits[0]) if hits.size else None


@dataclass(frozen=True)
class Scenario:
    config: SystemConfig
    rsu_positions: np.ndarray  # (M, 2), m
    vue_positions: np.ndarray  # (N, 2), m
    channel: ChannelSet
    cache: CacheMatrix
    # derived, filled in __post_init__
    dist_vue_rsu: np.ndarray = field(init=False, repr=False)   # (N, M), m
    nearest_rsu: np.ndarray = field(init=False, repr=False)    # (N,), argmin distance

    def __post_init__(self):
        d = np.linalg.norm(
            self.vue_positions[:, None, :] - self.rsu_positions[None, :, :], axis=-1
        )
        object.__setattr__(self, "dist_vue_rsu", d)
        object.__setattr__(self, "nearest_rsu", d.argmin(axis=1))
        for arr in (self.rsu_positions, self.vue_positions, self.dist_vue_rsu,
                    self.nearest_rsu, self.channel.gain_vue_rsu,
                    self.channel.gain_vue_hap, self.channel.gain_rsu_hap,
                    self.cache.entries):
            arr.setflags(write=False)

    @property
    def num_vues(self) -> int:
        return self.config.num_vues

    @property
    def num_rsus(self) -> int:
        return self.config.num_rsus

    def to_dict(self) -> dict:
        return {
            "config": self.config.as_dict(),
            "rsu_positions": self.rsu_positions.tolist(),
            "vue_positions": self.vue_positions.tolist(),
            "gain_vue_rsu": self.channel.gain_vue_rsu.tolist(),
            "gain_vue_hap": self.channel.gain_vue_hap.tolist(),
            "gain_rsu_hap": self.channel.gain_rsu_hap.tolist(),
            "cache": self.cache.entries.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def scenario_from_dict(data: dict) -> Scenario:
    from .config import config_from_mapping

    config = config_from_mapping(data["config"])
    return Scenario(
        config=config,
        rsu_positions=np.asarray(data["rsu_positions"], dtype=float),
        vue_positions=np.asarray(data["vue_positions"], dtype=float),
        channel=ChannelSet(
            gain_vue_rsu=np.asarray(data["gain_vue_rsu"], dtype=float),
            gain_vue_hap=np.asarray(data["gain_vue_hap"], dtype=float),
            gain_rsu_hap=np.asarray(data["gain_rsu_hap"], dtype=float),
        ),
        cache=CacheMatrix(entries=np.asarray(data["cache"], dtype=np.int8)),
    )


def scenario_from_json(text: str) -> Scenario:
    return scenario_from_dict(json.loads(text))


def terrestrial_pathloss_db(config: SystemConfig, dist_m: np.ndarray) -> np.ndarray:
    """Log-distance path loss PL0 + 10*gamma*log10(d/d0), d clamped below."""
    d = np.maximum(dist_m, config.min_link_dist)
    return config.pathloss_ref_db + 10.0 * config.pathloss_exponent * np.log10(
        d / config.pathloss_ref_dist
    )


def free_space_pathloss_db(config: SystemConfig, dist_m: np.ndarray) -> np.ndarray:
    """Free-space loss 20*log10(4 pi d f / c) at the configured carrier."""
    d = np.maximum(dist_m, config.min_link_dist)
    return 20.0 * np.log10(4.0 * np.pi * d * config.carrier_freq / _SPEED_OF_LIGHT)


def _rician_power_fade(rng: np.random.Generator, k_db: float, size) -> np.ndarray:
    k = 10.0 ** (k_db / 10.0)
    los = np.sqrt(k / (k + 1.0))
    scatter = np.sqrt(1.0 / (2.0 * (k + 1.0)))
    x = rng.standard_normal(size)
    y = rng.standard_normal(size)
    return (los + scatter * x) ** 2 + (scatter * y) ** 2


def generate_scenario(config: SystemConfig) -> Scenario:
    """Draw a snapshot: topology, fading, and caching state, all seeded.

    RSUs sit on a straight road at the configured spacing; each VUE falls
    uniformly in the disk of a uniformly chosen RSU (at least min_link_dist
    from its center). Terrestrial links fade Rayleigh over log-distance
    path loss; both HAP link types fade Rician over free-space loss. Each
    cache hit lands at the VUE's nearest RSU, then every RSU column is
    clipped to capacity keeping the lowest VUE ids.
    """
    config.validate()
    n, m = config.num_vues, config.num_rsus
    streams = np.random.SeedSequence(config.seed).spawn(3)
    pos_rng = np.random.Generator(np.random.PCG64(streams[0]))
    fade_rng = np.random.Generator(np.random.PCG64(streams[1]))
    cache_rng = np.random.Generator(np.random.PCG64(streams[2]))

    radius = config.rsu_radius
    spacing = config.resolved_rsu_spacing
    rsu_x = (np.arange(m) - (m - 1) / 2.0) * spacing
    rsu_positions = np.column_stack([rsu_x, np.zeros(m)])

    home = pos_rng.integers(0, m, size=n)
    u = pos_rng.random(n)
    theta = pos_rng.random(n) * 2.0 * np.pi
    d_min = min(config.min_link_dist, radius)
    r = np.sqrt(d_min**2 + u * (radius**2 - d_min**2))
    vue_positions = rsu_positions[home] + np.column_stack(
        [r * np.cos(theta), r * np.sin(theta)]
    )

    dist = np.linalg.norm(
        vue_positions[:, None, :] - rsu_positions[None, :, :], axis=-1
    )
    pl_terr = terrestrial_pathloss_db(config, dist)
    rayleigh = np.maximum(fade_rng.standard_exponential((n, m)), _FADE_FLOOR)
    gain_vue_rsu = 10.0 ** (-pl_terr / 10.0) * rayleigh

    dist_vue_hap = np.sqrt(config.hap_altitude**2 + (vue_positions**2).sum(axis=1))
    dist_rsu_hap = np.sqrt(config.hap_altitude**2 + (rsu_positions**2).sum(axis=1))
    fade_vue_hap = np.maximum(
        _rician_power_fade(fade_rng, config.rician_k_db, n), _FADE_FLOOR
    )
    fade_rsu_hap = np.maximum(
        _rician_power_fade(fade_rng, config.rician_k_db, m), _FADE_FLOOR
    )
    gain_vue_hap = 10.0 ** (-free_space_pathloss_db(config, dist_vue_hap) / 10.0) * fade_vue_hap
    gain_rsu_hap = 10.0 ** (-free_space_pathloss_db(config, dist_rsu_hap) / 10.0) * fade_rsu_hap

    # content lands in the cache of the RSU the VUE sits closest to
    hit = cache_rng.random(n) < config.cache_hit_prob
    nearest = dist.argmin(axis=1)
    entries = np.zeros((n, m), dtype=np.int8)
    entries[np.flatnonzero(hit), nearest[hit]] = 1
    for col in range(m):
        holders = np.flatnonzero(entries[:, col])
        if holders.size > config.cache_capacity:
            entries[holders[config.cache_capacity:], col] = 0

    channel = ChannelSet(gain_vue_rsu, gain_vue_hap, gain_rsu_hap).validate()
    cache = CacheMatrix(entries).validate(config.cache_capacity)
    return Scenario(config, rsu_positions, vue_positions, channel, cache)


def make_scenario(config: SystemConfig | None = None, **overrides) -> Scenario:
    """Convenience wrapper: generate_scenario over a config with overrides."""
    base = config if config is not None else SystemConfig()
    if overrides:
        from dataclasses import replace

        base = replace(base, **overrides)
    return generate_scenario(base)
