"""Scenario parameters: defaults, validation, loading, and seed management."""

from __future__ import annotations

import dataclasses
import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

STARS_TYPES = ("relaxed", "independent", "coupled")

_LEVEL_MIN = 1        # 2^0, degenerate single-level factor (paper enumerates it)
_LEVEL_MAX = 2 ** 15  # total-level range cap, x <= 15


class ScenarioError(ValueError):
    """Raised on unparseable scenario files or invariant violations."""


def dbm_to_watt(x_dbm: float) -> float:
    return 10.0 ** ((x_dbm - 30.0) / 10.0)


def watt_to_dbm(x_w: float) -> float:
    if x_w <= 0.0:
        raise ScenarioError(f"cannot express non-positive power {x_w} W in dBm")
    return 10.0 * math.log10(x_w) + 30.0


@dataclass(frozen=True)
class ScenarioParams:
    """All physical and algorithmic constants of one experiment.

    Immutable after load; safe to share across workers by value.  Fields are
    the snake_case keys accepted in scenario files.  ``sensing_sinr_min_db``
    and ``sensing_inr_max_db`` may be None to drop the respective constraint.
    """

    # system size
    n_antennas: int = 4
    n_users: int = 2
    n_elements: int = 8

    # radio constants
    carrier_freq_hz: float = 3.5e9
    ref_pathloss_db: float = -20.0
    pathloss_exponent: float = 2.2
    rician_factor: float = 3.0
    noise_user_dbm: float = -90.0
    noise_sensing_dbm: float = -90.0

    # budgets and QoS thresholds
    bs_power_budget_dbm: float = 30.0
    stars_power_budget_dbm: float = 25.0
    rate_min_bpshz: float = 1.0
    sensing_sinr_min_db: float | None = 3.0
    sensing_inr_max_db: float | None = 10.0

    # power model
    decode_constant: float = 0.3
    p_pin_w: float = 0.33e-3
    p_cir_w: float = 0.1
    p_bs_w: float = 10.0

    # quantization level bounds (per factor, powers of two)
    quant_min: int = 1
    quant_max: int = 2 ** 15

    # sensing target
    absorption_coeff: float = 0.8

    # geometry (distances in meters, angles in degrees relative to the BS)
    bs_stars_distance_m: float = 30.0
    stars_user_distance_m: float = 50.0
    bs_target_distance_m: float = 5.0
    target_stars_distance_m: float | None = None  # derived from geometry if None
    target_angle_deg: float = 0.0
    stars_angle_deg: float = 45.0
    user_angle_deg: float = 45.0
    user_spread_deg: float = 10.0
    element_spacing_wavelengths: float = 0.5

    # STARS architecture and algorithm knobs
    stars_type: str = "coupled"
    relaxed_fixed_amplitude: bool = False  # fair-comparison mode: beta pinned at 0.5
    pdd_learning_rate: float = 0.5
    seed: int = 1

    # ---- derived quantities -------------------------------------------------

    @property
    def noise_user_w(self) -> float:
        return dbm_to_watt(self.noise_user_dbm)

    @property
    def noise_sensing_w(self) -> float:
        return dbm_to_watt(self.noise_sensing_dbm)

    @property
    def bs_power_budget_w(self) -> float:
        return dbm_to_watt(self.bs_power_budget_dbm)

    @property
    def stars_power_budget_w(self) -> float:
        return dbm_to_watt(self.stars_power_budget_dbm)

    @property
    def sensing_sinr_min(self) -> float | None:
        v = self.sensing_sinr_min_db
        return None if v is None else 10.0 ** (v / 10.0)

    @property
    def sensing_inr_max(self) -> float | None:
        v = self.sensing_inr_max_db
        return None if v is None else 10.0 ** (v / 10.0)

    @property
    def wavelength_m(self) -> float:
        return 299792458.0 / self.carrier_freq_hz

    def target_stars_distance(self) -> float:
        """BS-target and BS-STARS legs give the target-STARS distance unless set."""
        if self.target_stars_distance_m is not None:
            return self.target_stars_distance_m
        d1, d2 = self.bs_target_distance_m, self.bs_stars_distance_m
        dphi = math.radians(self.stars_angle_deg - self.target_angle_deg)
        return math.sqrt(d1 * d1 + d2 * d2 - 2.0 * d1 * d2 * math.cos(dphi))

    def user_angles_deg(self) -> np.ndarray:
        """K user directions spread uniformly over user_angle +/- user_spread."""
        k = self.n_users
        if k == 1:
            return np.array([self.user_angle_deg])
        off = np.linspace(-self.user_spread_deg, self.user_spread_deg, k)
        return self.user_angle_deg + off

    # ---- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **kwargs) -> "ScenarioParams":
        p = dataclasses.replace(self, **kwargs)
        p.validate()
        return p

    # ---- validation ---------------------------------------------------------

    def validate(self) -> None:
        def positive(name):
            if not getattr(self, name) > 0:
                raise ScenarioError(f"{name} must be strictly positive")

        for name in ("n_antennas", "n_users", "n_elements"):
            v = getattr(self, name)
            if not (isinstance(v, (int, np.integer)) and v >= 1):
                raise ScenarioError(f"{name} must be a positive integer, got {v!r}")
        for name in (
            "carrier_freq_hz",
            "p_pin_w",
            "p_cir_w",
            "p_bs_w",
            "bs_stars_distance_m",
            "stars_user_distance_m",
            "bs_target_distance_m",
        ):
            positive(name)
        if self.target_stars_distance_m is not None and self.target_stars_distance_m <= 0:
            raise ScenarioError("target_stars_distance_m must be strictly positive")
        for name in ("target_angle_deg", "stars_angle_deg", "user_angle_deg"):
            v = getattr(self, name)
            if not -180.0 <= v <= 180.0:
                raise ScenarioError(f"{name} out of range [-180, 180]: {v}")
        if self.rician_factor < 0:
            raise ScenarioError("rician_factor must be >= 0")
        if self.pathloss_exponent < 2.0:
            warnings.warn(
                f"pathloss_exponent {self.pathloss_exponent} below 2 (free space)",
                stacklevel=2,
            )
        for name in ("quant_min", "quant_max"):
            v = getattr(self, name)
            if not (isinstance(v, (int, np.integer)) and _LEVEL_MIN <= v <= _LEVEL_MAX):
                raise ScenarioError(f"{name} out of range [{_LEVEL_MIN}, {_LEVEL_MAX}]")
            if v & (v - 1):
                raise ScenarioError(f"{name} must be a power of two, got {v}")
        if self.quant_min > self.quant_max:
            raise ScenarioError("quant_min exceeds quant_max")
        if not 0.0 < self.absorption_coeff <= 1.0:
            raise ScenarioError("absorption_coeff must lie in (0, 1]")
        if self.stars_type not in STARS_TYPES:
            raise ScenarioError(f"unknown stars_type {self.stars_type!r}")
        if not 0.0 < self.pdd_learning_rate <= 1.0:
            raise ScenarioError("pdd_learning_rate must lie in (0, 1]")
        if self.rate_min_bpshz < 0:
            raise ScenarioError("rate_min_bpshz must be >= 0")
        if not isinstance(self.seed, (int, np.integer)):
            raise ScenarioError("seed must be an integer")


_FIELD_NAMES = {f.name for f in dataclasses.fields(ScenarioParams)}


def scenario_from_dict(doc: dict) -> ScenarioParams:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a JSON object")
    unknown = sorted(set(doc) - _FIELD_NAMES)
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {', '.join(unknown)}")
    clean = {}
    for key, val in doc.items():
        fld = ScenarioParams.__dataclass_fields__[key]
        if fld.type in ("int", int) and isinstance(val, float) and val.is_integer():
            val = int(val)
        clean[key] = val
    params = ScenarioParams(**clean)
    params.validate()
    return params


def load_scenario(path) -> ScenarioParams:
    """Load a scenario file (flat JSON object); absent keys take defaults."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc}") from exc
    text = text.strip()
    doc = {} if not text else _parse_json(text, path)
    return scenario_from_dict(doc)


def _parse_json(text: str, path) -> dict:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"parse failure in {path}: {exc}") from exc


def save_scenario(params: ScenarioParams, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(params.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_rng(params: ScenarioParams, run_index: int = 0) -> np.random.Generator:
    """Child generator for one Monte-Carlo realization, derived by counter."""
    return np.random.default_rng([int(params.seed) & 0xFFFFFFFF, int(run_index)])
