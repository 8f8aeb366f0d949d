"""STARS surface state: coefficients, feasibility, PIN power, quantization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .scenario import STARS_TYPES

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class StarsConfig:
    """Per-element amplitudes, phases, on-off states and quantization levels.

    theta_{T|R},m = alpha_m * beta_{T|R},m * exp(j phi_{T|R},m) is the only way
    coefficient vectors are derived from this record.
    """

    stars_type: str
    beta_t: np.ndarray
    beta_r: np.ndarray
    phi_t: np.ndarray
    phi_r: np.ndarray
    alpha: np.ndarray = field(default=None)
    l_beta: int = 128
    l_phi: int = 128
    quantized: bool = False

    def __post_init__(self):
        if self.stars_type not in STARS_TYPES:
            raise ValueError(f"unknown stars_type {self.stars_type!r}")
        m = len(self.beta_t)
        alpha = self.alpha if self.alpha is not None else np.ones(m)
        for name, arr in (
            ("beta_t", self.beta_t), ("beta_r", self.beta_r),
            ("phi_t", self.phi_t), ("phi_r", self.phi_r), ("alpha", alpha),
        ):
            object.__setattr__(self, name, np.asarray(arr, dtype=float).copy())
            if len(getattr(self, name)) != m:
                raise ValueError(f"{name} length != {m}")

    @property
    def n_elements(self) -> int:
        return len(self.beta_t)

    @property
    def n_on(self) -> int:
        return int(np.round(self.alpha).sum())

    def with_(self, **kwargs) -> "StarsConfig":
        return replace(self, **kwargs)


def default_levels(stars_type: str) -> tuple[int, int]:
    """Near-continuous levels (x = 15-equivalent resolution) for fresh configs."""
    return {
        "relaxed": (2 ** 4, 2 ** 4),
        "independent": (2 ** 7, 2 ** 4),
        "coupled": (2 ** 7, 2 ** 7),
    }[stars_type]


def initial_config(
    stars_type: str,
    n_elements: int,
    rng: np.random.Generator,
    fixed_amplitude: float | None = None,
) -> StarsConfig:
    """Symmetric split amplitudes with uniform random phases, all elements on.

    Coupled surfaces start with the quarter-turn offset already in place so the
    whole pipeline operates inside the architecture from the first pass.
    """
    beta = math.sqrt(0.5) if fixed_amplitude is None else fixed_amplitude
    lb, lp = default_levels(stars_type)
    phi_t = rng.uniform(0.0, TWO_PI, n_elements)
    if stars_type == "coupled":
        phi_r = np.mod(phi_t + 0.5 * math.pi, TWO_PI)
    else:
        phi_r = rng.uniform(0.0, TWO_PI, n_elements)
    return StarsConfig(
        stars_type=stars_type,
        beta_t=np.full(n_elements, beta),
        beta_r=np.full(n_elements, beta),
        phi_t=phi_t,
        phi_r=phi_r,
        alpha=np.ones(n_elements),
        l_beta=lb,
        l_phi=lp,
    )


def coefficients(cfg: StarsConfig, side: str) -> np.ndarray:
    """theta_Y = alpha * beta_Y * exp(j phi_Y) for side Y in {'T', 'R'}."""
    if side == "T":
        return cfg.alpha * cfg.beta_t * np.exp(1j * cfg.phi_t)
    if side == "R":
        return cfg.alpha * cfg.beta_r * np.exp(1j * cfg.phi_r)
    raise ValueError(f"side must be 'T' or 'R', got {side!r}")


def pin_count(stars_type: str, l_beta: int, l_phi: int) -> int:
    """Average PIN diodes needed per element for the given resolution."""
    if l_beta < 1 or l_phi < 1:
        raise ValueError("quantization levels must be >= 1")
    lb, lp = math.log2(l_beta), math.log2(l_phi)
    if stars_type == "relaxed":
        return math.ceil(2.0 * lb + 2.0 * lp)
    if stars_type == "independent":
        return math.ceil(lb + 2.0 * lp)
    if stars_type == "coupled":
        return math.ceil(lb + lp + 1.0)
    raise ValueError(f"unknown stars_type {stars_type!r}")


def stars_power(cfg: StarsConfig, p_pin_w: float, p_cir_w: float) -> float:
    """(sum alpha) * N_PIN * P_PIN + P_CIR."""
    n_pin = pin_count(cfg.stars_type, cfg.l_beta, cfg.l_phi)
    return float(cfg.alpha.sum()) * n_pin * p_pin_w + p_cir_w


_FLOOR_EPS = 1e-9  # guards floor() against representation noise at codepoints


def _floor_quant(values: np.ndarray, levels: int) -> np.ndarray:
    return np.floor(values * levels + _FLOOR_EPS) / levels


def quantize(cfg: StarsConfig) -> StarsConfig:
    """Floor-quantize both sides independently; no re-projection onto the
    unit-energy circle (evaluation accepts the quantized pair as-is)."""
    if cfg.l_beta < 1 or cfg.l_phi < 1:
        raise ValueError("quantization levels must be >= 1")
    phi_step = TWO_PI / cfg.l_phi
    return cfg.with_(
        beta_t=_floor_quant(cfg.beta_t, cfg.l_beta),
        beta_r=_floor_quant(cfg.beta_r, cfg.l_beta),
        phi_t=np.floor(np.mod(cfg.phi_t, TWO_PI) / TWO_PI * cfg.l_phi + _FLOOR_EPS) * phi_step,
        phi_r=np.floor(np.mod(cfg.phi_r, TWO_PI) / TWO_PI * cfg.l_phi + _FLOOR_EPS) * phi_step,
        quantized=True,
    )


def check_feasibility(cfg: StarsConfig, tol: float = 1e-9) -> list[str]:
    """Empty list iff all architecture invariants hold within tol."""
    out = []
    for name, arr in (("beta_t", cfg.beta_t), ("beta_r", cfg.beta_r)):
        bad = np.flatnonzero((arr < -tol) | (arr > 1.0 + tol))
        for m in bad:
            out.append(f"{name}[{m}] = {arr[m]:.6g} outside [0, 1]")
    bad = np.flatnonzero(np.abs(cfg.alpha * (1.0 - cfg.alpha)) > tol)
    for m in bad:
        out.append(f"alpha[{m}] = {cfg.alpha[m]:.6g} not binary")
    if cfg.stars_type in ("independent", "coupled"):
        s = cfg.beta_t ** 2 + cfg.beta_r ** 2
        bad = np.flatnonzero(np.abs(s - 1.0) > tol)
        for m in bad:
            out.append(f"amplitude sum {s[m]:.6g} != 1 at element {m}")
    if cfg.stars_type == "coupled":
        c = np.cos(cfg.phi_t - cfg.phi_r)
        bad = np.flatnonzero(np.abs(c) > max(tol, 1e-6))
        for m in bad:
            out.append(f"cos(phi_T - phi_R) = {c[m]:.6g} != 0 at element {m}")
    return out
