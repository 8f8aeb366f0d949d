"""Performance functionals: SINRs, rates, powers, EE, beampatterns."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSet, array_response
from .scenario import ScenarioParams
from .stars import StarsConfig, coefficients, stars_power

BEAMPATTERN_FLOOR_DB = -200.0


@dataclass(frozen=True)
class BeamformerSet:
    """Communication precoders (K, N), sensing precoder (N, N), combiner (N,)."""

    w_c: np.ndarray
    w_s: np.ndarray
    u_s: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w_c", np.asarray(self.w_c, dtype=complex))
        object.__setattr__(self, "w_s", np.asarray(self.w_s, dtype=complex))
        object.__setattr__(self, "u_s", np.asarray(self.u_s, dtype=complex))
        if self.w_c.ndim != 2 or self.w_s.shape != (self.w_c.shape[1],) * 2:
            raise ValueError("inconsistent beamformer shapes")

    @property
    def n_users(self) -> int:
        return self.w_c.shape[0]

    def transmit_power(self) -> float:
        return float(np.sum(np.abs(self.w_c) ** 2) + np.sum(np.abs(self.w_s) ** 2))


def effective_user_rows(theta_t: np.ndarray, channels: ChannelSet) -> np.ndarray:
    """(K, N) rows theta_T^T H_k."""
    return np.einsum("m,kmn->kn", theta_t, channels.h)


def comm_sinr(
    k: int,
    theta_t: np.ndarray,
    channels: ChannelSet,
    bf: BeamformerSet,
    sigma_k2_w: float,
) -> float:
    row = channels.h[k].T @ theta_t  # theta_T^T H_k
    sig = abs(row @ bf.w_c[k]) ** 2
    itf = sum(abs(row @ bf.w_c[j]) ** 2 for j in range(bf.n_users) if j != k)
    itf += float(np.sum(np.abs(row @ bf.w_s) ** 2))
    return float(sig / (itf + sigma_k2_w))


def comm_sinr_all(theta_t, channels, bf, sigma_k2_w) -> np.ndarray:
    return np.array(
        [comm_sinr(k, theta_t, channels, bf, sigma_k2_w) for k in range(bf.n_users)]
    )


def sensing_channel(theta_r: np.ndarray, channels: ChannelSet, absorption: float) -> np.ndarray:
    """H_s = a0 g_s g_s^H + a0^2 G^H diag(theta_R) G, an N x N matrix."""
    direct = absorption * np.outer(channels.g_s, np.conj(channels.g_s))
    bounce = absorption ** 2 * (np.conj(channels.g).T * theta_r) @ channels.g
    return direct + bounce


def sensing_sinr(bf: BeamformerSet, h_s: np.ndarray, sigma_s2_w: float) -> float:
    u = bf.u_s
    un = float(np.vdot(u, u).real)
    if un <= 0.0:
        raise ValueError("receive combiner must be nonzero")
    row = np.conj(u) @ h_s  # u^H H_s
    sig = float(np.sum(np.abs(row @ bf.w_s) ** 2))
    leak = float(sum(abs(row @ bf.w_c[k]) ** 2 for k in range(bf.n_users)))
    return sig / (leak + sigma_s2_w * un)


def sensing_inr(bf: BeamformerSet, h_s: np.ndarray, sigma_s2_w: float) -> float:
    u = bf.u_s
    un = float(np.vdot(u, u).real)
    if un <= 0.0:
        raise ValueError("receive combiner must be nonzero")
    row = np.conj(u) @ h_s
    leak = float(sum(abs(row @ bf.w_c[k]) ** 2 for k in range(bf.n_users)))
    return leak / (sigma_s2_w * un)


def sum_rate(sinrs: np.ndarray) -> float:
    return float(np.sum(np.log2(1.0 + np.asarray(sinrs))))


def total_power(
    bf: BeamformerSet,
    stars_cfg: StarsConfig,
    rate_total: float,
    params: ScenarioParams,
) -> tuple[float, dict]:
    """tr(R_w) + xi R_t + P_BS + P_ST, with the additive breakdown."""
    breakdown = {
        "transmit_comm": float(np.sum(np.abs(bf.w_c) ** 2)),
        "transmit_sense": float(np.sum(np.abs(bf.w_s) ** 2)),
        "rate_dependent": params.decode_constant * rate_total,
        "bs_static": params.p_bs_w,
        "stars": stars_power(stars_cfg, params.p_pin_w, params.p_cir_w),
    }
    return sum(breakdown.values()), breakdown


def energy_efficiency(rate_total: float, power_total: float) -> float:
    return rate_total / power_total


@dataclass
class EEReport:
    """Full evaluation of one (channels, beamformers, STARS) operating point."""

    ee_bits_per_hz_per_joule: float
    sum_rate: float
    per_user_rate: list
    comm_sinr: list
    sensing_sinr: float
    sensing_inr: float
    power_breakdown: dict
    iteration_trace: list = field(default_factory=list)
    constraint_residuals: dict = field(default_factory=dict)
    config_snapshot: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    @property
    def total_power_w(self) -> float:
        return sum(self.power_breakdown.values())

    def to_dict(self) -> dict:
        return {
            "ee_bits_per_hz_per_joule": self.ee_bits_per_hz_per_joule,
            "sum_rate": self.sum_rate,
            "per_user_rate": list(self.per_user_rate),
            "comm_sinr": list(self.comm_sinr),
            "sensing_sinr": self.sensing_sinr,
            "sensing_inr": self.sensing_inr,
            "power_breakdown": self.power_breakdown,
            "total_power_w": self.total_power_w,
            "iteration_trace": [list(t) for t in self.iteration_trace],
            "constraint_residuals": self.constraint_residuals,
            "config_snapshot": self.config_snapshot,
            "flags": self.flags,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def constraint_residuals(
    channels: ChannelSet,
    bf: BeamformerSet,
    cfg: StarsConfig,
    params: ScenarioParams,
) -> dict:
    """Signed violations of the original constraints (positive = violated).

    Rate and sensing thresholds are measured relative (dimensionless) so the
    1e-4 acceptance tolerance means the same thing across scenarios.
    """
    theta_t = coefficients(cfg, "T")
    theta_r = coefficients(cfg, "R")
    sinrs = comm_sinr_all(theta_t, channels, bf, params.noise_user_w)
    rates = np.log2(1.0 + sinrs)
    h_s = sensing_channel(theta_r, channels, params.absorption_coeff)
    out = {
        "bs_power": (bf.transmit_power() - params.bs_power_budget_w)
        / params.bs_power_budget_w,
        "stars_power": (
            stars_power(cfg, params.p_pin_w, params.p_cir_w) - params.stars_power_budget_w
        )
        / params.stars_power_budget_w,
        "rate_min": float(np.max(params.rate_min_bpshz - rates))
        / max(params.rate_min_bpshz, 1.0),
        "alpha_binary": float(np.max(np.abs(cfg.alpha * (1.0 - cfg.alpha)))),
    }
    if params.sensing_sinr_min is not None:
        out["sensing_sinr"] = (
            params.sensing_sinr_min - sensing_sinr(bf, h_s, params.noise_sensing_w)
        ) / params.sensing_sinr_min
    if params.sensing_inr_max is not None:
        out["sensing_inr"] = (
            sensing_inr(bf, h_s, params.noise_sensing_w) - params.sensing_inr_max
        ) / params.sensing_inr_max
    if cfg.stars_type in ("independent", "coupled") and not cfg.quantized:
        out["unit_energy"] = float(np.max(np.abs(cfg.beta_t ** 2 + cfg.beta_r ** 2 - 1.0)))
    if cfg.stars_type == "coupled":
        out["coupled_phase"] = float(np.max(np.abs(np.cos(cfg.phi_t - cfg.phi_r))))
    lo, hi = params.quant_min, params.quant_max
    out["quant_bounds"] = 0.0 if lo <= cfg.l_beta <= hi and lo <= cfg.l_phi <= hi else 1.0
    return out


def evaluate(
    channels: ChannelSet,
    bf: BeamformerSet,
    cfg: StarsConfig,
    params: ScenarioParams,
    iteration_trace=None,
    flags=None,
) -> EEReport:
    theta_t = coefficients(cfg, "T")
    theta_r = coefficients(cfg, "R")
    sinrs = comm_sinr_all(theta_t, channels, bf, params.noise_user_w)
    rates = np.log2(1.0 + sinrs)
    r_t = float(rates.sum())
    h_s = sensing_channel(theta_r, channels, params.absorption_coeff)
    p_tot, breakdown = total_power(bf, cfg, r_t, params)
    return EEReport(
        ee_bits_per_hz_per_joule=energy_efficiency(r_t, p_tot),
        sum_rate=r_t,
        per_user_rate=rates.tolist(),
        comm_sinr=sinrs.tolist(),
        sensing_sinr=sensing_sinr(bf, h_s, params.noise_sensing_w),
        sensing_inr=sensing_inr(bf, h_s, params.noise_sensing_w),
        power_breakdown=breakdown,
        iteration_trace=list(iteration_trace or []),
        constraint_residuals=constraint_residuals(channels, bf, cfg, params),
        config_snapshot={
            "stars_type": cfg.stars_type,
            "beta_t": cfg.beta_t.tolist(),
            "beta_r": cfg.beta_r.tolist(),
            "phi_t": cfg.phi_t.tolist(),
            "phi_r": cfg.phi_r.tolist(),
            "alpha": cfg.alpha.tolist(),
            "l_beta": cfg.l_beta,
            "l_phi": cfg.l_phi,
            "quantized": cfg.quantized,
        },
        flags=dict(flags or {}),
    )


def beampattern(
    bf: BeamformerSet,
    array_spacing: float,
    angle_grid_rad: np.ndarray,
    mode: str = "isac",
) -> np.ndarray:
    """Transmit gain in dB over the angle grid; floored at -200 dB.

    mode selects the contributing precoders: 'isac' (both), 'comm_only', or
    'sense_only'.
    """
    grid = np.asarray(angle_grid_rad, dtype=float)
    if grid.size == 0:
        raise ValueError("angle grid must be nonempty")
    n = bf.w_s.shape[0]
    gains = np.empty(grid.size)
    for i, ang in enumerate(grid):
        a = array_response(n, array_spacing, ang)
        g = 0.0
        if mode in ("isac", "sense_only"):
            g += float(np.sum(np.abs(np.conj(a) @ bf.w_s) ** 2))
        if mode in ("isac", "comm_only"):
            g += float(sum(abs(np.vdot(a, bf.w_c[k])) ** 2 for k in range(bf.n_users)))
        gains[i] = g
    db = np.full(grid.size, BEAMPATTERN_FLOOR_DB)
    pos = gains > 0
    db[pos] = 10.0 * np.log10(gains[pos])
    return np.maximum(db, BEAMPATTERN_FLOOR_DB)
