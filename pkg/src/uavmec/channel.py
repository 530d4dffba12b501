"""Air-to-ground uplink model: elevation-dependent line-of-sight mixing,
distance power law, small-scale Nakagami fading, log-normal shadowing.

The solvers only ever see the *expected* channel gain as a function of the
squared horizontal distance; the random sampler exists for Monte Carlo
validation of that expectation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.constants import c as _SPEED_OF_LIGHT

_LN10_OVER_10 = math.log(10.0) / 10.0


@dataclass(frozen=True)
class ChannelParams:
    bandwidth_hz: float = 20e6
    noise_w: float = 1e-13            # -100 dBm noise floor
    carrier_hz: float = 2e9
    ref_dist_m: float = 1.0
    los_sigmoid_a: float = 9.61       # environment constants (urban-ish)
    los_sigmoid_b: float = 0.16
    pathloss_exp_los: float = 2.0
    pathloss_exp_nlos: float = 3.5
    mean_power: float = 1.0           # average fading power (unit by default)
    nakagami_los: float = 3.0
    nakagami_nlos: float = 1.0        # shape 1 is Rayleigh-equivalent
    shadow_std_los_db: float = 4.0
    shadow_std_nlos_db: float = 8.0
    shadow_mean_correction: bool = False

    def validate(self):
        from .scenario import ScenarioError
        if self.bandwidth_hz <= 0:
            raise ScenarioError("channel.bandwidth_hz", "must be positive")
        if self.noise_w <= 0:
            raise ScenarioError("channel.noise_w", "must be positive")
        if self.carrier_hz <= 0 or self.ref_dist_m <= 0:
            raise ScenarioError("channel", "carrier and ref distance must be positive")
        if self.los_sigmoid_a <= 0 or self.los_sigmoid_b < 0:
            raise ScenarioError("channel.los_sigmoid_a",
                                "need a > 0 and b >= 0")
        if self.pathloss_exp_los <= 0 or self.pathloss_exp_nlos <= 0:
            raise ScenarioError("channel", "path-loss exponents must be positive")
        if self.mean_power <= 0:
            raise ScenarioError("channel.mean_power", "must be positive")
        if min(self.nakagami_los, self.nakagami_nlos) < 0.5:
            raise ScenarioError("channel", "nakagami shapes must be >= 0.5")
        if min(self.shadow_std_los_db, self.shadow_std_nlos_db) < 0:
            raise ScenarioError("channel", "shadow stds must be >= 0")

    @property
    def ref_loss(self) -> float:
        """Free-space loss factor at the reference distance."""
        return (4.0 * math.pi * self.ref_dist_m * self.carrier_hz
                / _SPEED_OF_LIGHT) ** 2


@dataclass(frozen=True)
class LinkGeometry:
    """User-to-UAV geometry for one slot."""

    horiz_dist_m: float
    altitude_m: float

    def __post_init__(self):
        if self.horiz_dist_m < 0:
            raise ValueError("horizontal distance must be >= 0")
        if self.altitude_m <= 0:
            raise ValueError("altitude must be positive")

    @property
    def slant_dist_m(self) -> float:
        return math.hypot(self.horiz_dist_m, self.altitude_m)

    @property
    def elevation_rad(self) -> float:
        return math.atan2(self.altitude_m, self.horiz_dist_m)

    @property
    def elevation_deg(self) -> float:
        return math.degrees(self.elevation_rad)


def los_probability(geometry: LinkGeometry, params: ChannelParams) -> float:
    """Sigmoid in the elevation angle (degrees); b = 0 degenerates to the
    constant 1/(1+a)."""
    a, b = params.los_sigmoid_a, params.los_sigmoid_b
    theta = geometry.elevation_deg
    return 1.0 / (1.0 + a * math.exp(-b * (theta - a)))


def path_loss(geometry: LinkGeometry, kind: str, params: ChannelParams) -> float:
    """Linear power attenuation factor (>= 1 in sane geometries).

    `kind` selects the exponent ('los' or 'nlos').  Slant distances inside
    the reference distance are clamped to it with a warning; the model is
    not meant for near-field geometry.
    """
    if kind == "los":
        beta = params.pathloss_exp_los
    elif kind == "nlos":
        beta = params.pathloss_exp_nlos
    else:
        raise ValueError(f"kind must be 'los' or 'nlos', got {kind!r}")
    d = geometry.slant_dist_m
    if d < params.ref_dist_m:
        warnings.warn("slant distance below reference distance, clamping",
                      RuntimeWarning, stacklevel=2)
        d = params.ref_dist_m
    return params.ref_loss * (d / params.ref_dist_m) ** beta


def _shadow_mean_factor(sigma_db: float) -> float:
    # E[10^(-X/10)] for X ~ N(0, sigma_db^2)
    return math.exp(0.5 * (_LN10_OVER_10 * sigma_db) ** 2)


def expected_channel_gain(geometry: LinkGeometry, params: ChannelParams) -> float:
    """LoS/NLoS-averaged mean linear gain.

    Fading is unit-mean by construction; shadowing has mean > 1 in linear
    units, included only when `shadow_mean_correction` is set (the common
    convention treats the dB shadow offset as zero-mean and ignores the
    lognormal mean shift).
    """
    p = los_probability(geometry, params)
    c_los = c_nlos = 1.0
    if params.shadow_mean_correction:
        c_los = _shadow_mean_factor(params.shadow_std_los_db)
        c_nlos = _shadow_mean_factor(params.shadow_std_nlos_db)
    g_los = params.mean_power * c_los / path_loss(geometry, "los", params)
    g_nlos = params.mean_power * c_nlos / path_loss(geometry, "nlos", params)
    return p * g_los + (1.0 - p) * g_nlos


def sample_channel_gain(geometry: LinkGeometry, params: ChannelParams,
                        seed, size=None):
    """Random linear gain draw(s): LoS state, Nakagami power, shadowing.

    `seed` may be an int or a Generator.  With `size=None` returns a float.
    Draw order is fixed (state, LoS power, NLoS power, LoS shadow, NLoS
    shadow) so results are reproducible under vectorization.
    """
    rng = np.random.default_rng(seed) if not isinstance(
        seed, np.random.Generator) else seed
    n = 1 if size is None else int(size)
    p = los_probability(geometry, params)
    is_los = rng.random(n) < p
    pw = params.mean_power
    pow_los = rng.gamma(params.nakagami_los, pw / params.nakagami_los, n)
    pow_nlos = rng.gamma(params.nakagami_nlos, pw / params.nakagami_nlos, n)
    sh_los = 10.0 ** (-rng.normal(0.0, params.shadow_std_los_db, n) / 10.0)
    sh_nlos = 10.0 ** (-rng.normal(0.0, params.shadow_std_nlos_db, n) / 10.0)
    g_los = pow_los * sh_los / path_loss(geometry, "los", params)
    g_nlos = pow_nlos * sh_nlos / path_loss(geometry, "nlos", params)
    out = np.where(is_los, g_los, g_nlos)
    return float(out[0]) if size is None else out


def uplink_rate(gain: float, tx_power_w: float, params: ChannelParams) -> float:
    """Shannon rate in bits/s at the given linear channel gain."""
    if gain < 0:
        raise ValueError("channel gain must be >= 0")
    snr = tx_power_w * gain / params.noise_w
    return params.bandwidth_hz * math.log2(1.0 + snr)


# ---------------------------------------------------------------------------
# vectorized forms over squared horizontal distance, used by the solvers.
# s = horizontal distance squared (m^2); altitude fixed per UAV.

def gain_from_sq_dist(s, altitude_m: float, params: ChannelParams):
    """expected_channel_gain vectorized over s = horiz_dist^2."""
    s = np.asarray(s, dtype=float)
    d2 = s + altitude_m ** 2
    theta = np.degrees(np.arctan2(altitude_m, np.sqrt(s)))
    p = 1.0 / (1.0 + params.los_sigmoid_a
               * np.exp(-params.los_sigmoid_b * (theta - params.los_sigmoid_a)))
    c_los = c_nlos = 1.0
    if params.shadow_mean_correction:
        c_los = _shadow_mean_factor(params.shadow_std_los_db)
        c_nlos = _shadow_mean_factor(params.shadow_std_nlos_db)
    k0 = params.ref_loss
    d0sq = params.ref_dist_m ** 2
    inv_los = (d2 / d0sq) ** (-0.5 * params.pathloss_exp_los) / k0
    inv_nlos = (d2 / d0sq) ** (-0.5 * params.pathloss_exp_nlos) / k0
    return params.mean_power * (p * c_los * inv_los
                                + (1.0 - p) * c_nlos * inv_nlos)


def rate_from_sq_dist(s, altitude_m: float, tx_power_w: float,
                      params: ChannelParams):
    """Expected-gain Shannon rate, vectorized over s = horiz_dist^2."""
    g = gain_from_sq_dist(s, altitude_m, params)
    return params.bandwidth_hz * np.log2(
        1.0 + tx_power_w * g / params.noise_w)


def rate_slope_sq_dist(s, altitude_m: float, tx_power_w: float,
                       params: ChannelParams, rel_step: float = 1e-6):
    """dR/ds by symmetric difference.  The rate decays smoothly over many
    km^2, so a relative step gives ~9 significant digits, plenty for the
    first-order model built on top of it."""
    s = np.asarray(s, dtype=float)
    h = np.maximum(np.abs(s), 1.0) * rel_step
    lo = np.maximum(s - h, 0.0)
    hi = s + h
    r_lo = rate_from_sq_dist(lo, altitude_m, tx_power_w, params)
    r_hi = rate_from_sq_dist(hi, altitude_m, tx_power_w, params)
    return (r_hi - r_lo) / (hi - lo)
