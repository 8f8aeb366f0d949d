"""Random channel realizations: Rician links, array responses, cascaded paths."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .scenario import ScenarioParams


@dataclass(frozen=True)
class ChannelSet:
    """One realization of every link in the system.

    g_c    : (M, N)    BS->STARS, unaffected by the target
    g_s    : (N,)      BS->target
    r_s    : (M,)      target->STARS
    g_cascade : (M, N) target bounce r_s g_s^H
    g      : (M, N)    g_c + g_cascade, the composite BS->STARS matrix
    v      : (K, M)    STARS->user k
    h      : (K, M, N) diag(v_k) @ g, the per-user cascaded channel
    """

    g_c: np.ndarray
    g_s: np.ndarray
    r_s: np.ndarray
    g_cascade: np.ndarray
    g: np.ndarray
    v: np.ndarray
    h: np.ndarray
    seed_tag: int = 0

    @property
    def n_users(self) -> int:
        return self.v.shape[0]

    @property
    def n_elements(self) -> int:
        return self.g.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.g.shape[1]


def array_response(n: int, spacing_over_lambda: float, angle_rad: float) -> np.ndarray:
    """Uniform linear array steering vector, exp(-j*2*pi*s*i*sin(angle))."""
    if n < 1:
        raise ValueError("array size must be >= 1")
    idx = np.arange(n)
    return np.exp(-1j * 2.0 * np.pi * spacing_over_lambda * idx * math.sin(angle_rad))


def rician_matrix(
    rows: int,
    cols: int,
    distance_m: float,
    h0_db: float,
    exponent: float,
    rician_factor: float,
    los: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """sqrt(h0 d^-a) * (sqrt(b/(b+1)) LoS + sqrt(1/(b+1)) NLoS), unit-variance NLoS."""
    los = np.asarray(los, dtype=complex)
    shape = (rows, cols) if cols > 1 or los.ndim == 2 else (rows,)
    if los.shape not in ((rows, cols), (rows,)):
        raise ValueError(f"LoS shape {los.shape} does not match ({rows}, {cols})")
    if distance_m <= 0:
        raise ValueError("distance must be positive")
    h0 = 10.0 ** (h0_db / 10.0)
    gain = math.sqrt(h0 * distance_m ** (-exponent))
    b0 = rician_factor
    nlos = (rng.standard_normal(los.shape) + 1j * rng.standard_normal(los.shape)) / math.sqrt(2.0)
    out = gain * (math.sqrt(b0 / (b0 + 1.0)) * los + math.sqrt(1.0 / (b0 + 1.0)) * nlos)
    return out.reshape(shape) if los.ndim == 1 else out


def generate_channels(params: ScenarioParams, rng: np.random.Generator) -> ChannelSet:
    """Draw one realization of all links; pure given (params, rng state)."""
    m, n, k = params.n_elements, params.n_antennas, params.n_users
    sp = params.element_spacing_wavelengths
    ang_stars = math.radians(params.stars_angle_deg)
    ang_target = math.radians(params.target_angle_deg)

    # one angle per link (AoA = AoD by LoS reciprocity)
    a_m_stars = array_response(m, sp, ang_stars)
    a_n_stars = array_response(n, sp, ang_stars)
    a_n_target = array_response(n, sp, ang_target)
    a_m_target = array_response(m, sp, ang_target)

    g_c = rician_matrix(
        m, n, params.bs_stars_distance_m, params.ref_pathloss_db,
        params.pathloss_exponent, params.rician_factor,
        np.outer(a_m_stars, a_n_stars), rng,
    )
    g_s = rician_matrix(
        n, 1, params.bs_target_distance_m, params.ref_pathloss_db,
        params.pathloss_exponent, params.rician_factor, a_n_target, rng,
    )
    r_s = rician_matrix(
        m, 1, params.target_stars_distance(), params.ref_pathloss_db,
        params.pathloss_exponent, params.rician_factor, a_m_target, rng,
    )
    v = np.empty((k, m), dtype=complex)
    for i, ang in enumerate(params.user_angles_deg()):
        v[i] = rician_matrix(
            m, 1, params.stars_user_distance_m, params.ref_pathloss_db,
            params.pathloss_exponent, params.rician_factor,
            array_response(m, sp, math.radians(ang)), rng,
        )

    g_cascade = np.outer(r_s, np.conj(g_s))  # M x N orientation
    g = g_c + g_cascade
    h = v[:, :, None] * g[None, :, :]
    return ChannelSet(
        g_c=g_c, g_s=g_s, r_s=r_s, g_cascade=g_cascade, g=g, v=v, h=h,
        seed_tag=int(params.seed),
    )


# ---- channel dump (regression goldens) --------------------------------------

_MAGIC = b"STARSCH1"


def dump_channels(ch: ChannelSet, path) -> None:
    """Interleaved re/im float64 with a small dims header."""
    k, m, n = ch.v.shape[0], ch.g.shape[0], ch.g.shape[1]
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<4q", m, n, k, ch.seed_tag))
        for arr in (ch.g_c, ch.g_s, ch.r_s, ch.v):
            flat = np.ascontiguousarray(arr).ravel()
            inter = np.empty(2 * flat.size)
            inter[0::2] = flat.real
            inter[1::2] = flat.imag
            fh.write(inter.tobytes())


def load_channels(path) -> ChannelSet:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError(f"{path} is not a channel dump")
        m, n, k, seed_tag = struct.unpack("<4q", fh.read(32))

        def read(shape):
            count = 2 * int(np.prod(shape))
            raw = np.frombuffer(fh.read(8 * count), dtype=np.float64)
            return (raw[0::2] + 1j * raw[1::2]).reshape(shape)

        g_c = read((m, n))
        g_s = read((n,))
        r_s = read((m,))
        v = read((k, m))
    g_cascade = np.outer(r_s, np.conj(g_s))
    g = g_c + g_cascade
    return ChannelSet(
        g_c=g_c, g_s=g_s, r_s=r_s, g_cascade=g_cascade, g=g, v=v,
        h=v[:, :, None] * g[None, :, :], seed_tag=seed_tag,
    )
