"""Active ISAC beamforming: block coordinate descent over the communication
precoders, the sensing precoder, and the receive combiner.

Each pass re-expands the fractional rate surrogate (Lagrangian dual transform
plus a Dinkelbach-tight quadratic substitution of the SINR fraction) and the
first-order sensing linearizations at the incumbent, then solves three convex
blocks.  The EE auxiliary eta is held fixed inside the blocks and refreshed by
the scalar ratio update eta <- R_t / P after every pass.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .channel import ChannelSet
from .convex import ConvexProblem, LinExpr, stack
from .metrics import BeamformerSet
from .scenario import ScenarioParams
from .stars import StarsConfig, coefficients, stars_power

log = logging.getLogger("stars_isac.active")

REL_TOL = 1e-4
MAX_PASSES = 50
EE_SLACK = 1e-9


@dataclass
class SCAState:
    """Expansion data carried between passes."""

    gamma_bar: np.ndarray  # previous-iteration SINRs
    lam: np.ndarray        # Dinkelbach ratios A/(A+B)
    breve: BeamformerSet
    eta: float


@dataclass
class RateSurrogate:
    f: float           # log2(1+gb) - gb
    multiplier: float  # 1 + gb
    value: float


@dataclass
class ActiveResult:
    bf: BeamformerSet
    eta: float
    trace: list
    flags: dict = field(default_factory=dict)
    feasible: bool = True


def dinkelbach_lambda(a_k: float, b_k: float) -> float:
    """lambda = A/(A+B) for nonnegative signal/denominator parts."""
    if a_k < 0 or b_k < 0:
        raise ValueError("A and B must be nonnegative")
    tot = a_k + b_k
    if tot == 0.0:
        raise ValueError("A + B must be positive")
    return a_k / tot


def dual_rate_surrogate(
    gamma_bar: float, a_k: float, c_k: float, lam: float, c_bar: float | None = None
) -> RateSurrogate:
    """Rate surrogate value at (A, C) around an expansion with ratio lam.

    Uses the tight quadratic substitution of the Dinkelbach fraction,
    2 sqrt(lam/C_bar) sqrt(A) - (lam/C_bar) C, which equals lam at the
    expansion point so the surrogate reproduces log2(1 + gamma_bar) there.
    """
    c_bar = c_k if c_bar is None else c_bar
    if c_bar <= 0.0:
        raise ValueError("denominator must be positive")
    f = math.log2(1.0 + gamma_bar) - gamma_bar
    mult = 1.0 + gamma_bar
    frac = 2.0 * math.sqrt(lam / c_bar) * math.sqrt(max(a_k, 0.0)) - (lam / c_bar) * c_k
    return RateSurrogate(f=f, multiplier=mult, value=f + mult * frac)


def linearize_quadratic(f_mat: np.ndarray, c_vec: np.ndarray, x0: np.ndarray):
    """Affine minorant data of q(x) = ||F x + c||^2 at x0.

    Returns (q0, g) with q(x) >= q0 + 2 Re{g^H (x - x0)}, tight at x0;
    g = F^H (F x0 + c).
    """
    f_mat = np.atleast_2d(np.asarray(f_mat, dtype=complex))
    c_vec = np.zeros(f_mat.shape[0], dtype=complex) if c_vec is None else np.asarray(c_vec, dtype=complex)
    x0 = np.asarray(x0, dtype=complex).ravel()
    r = f_mat @ x0 + c_vec
    return float(np.vdot(r, r).real), np.conj(f_mat.T) @ r


def linear_minorant_value(q0: float, g: np.ndarray, x0: np.ndarray, x: np.ndarray) -> float:
    return q0 + 2.0 * float(np.real(np.vdot(g, np.asarray(x).ravel() - np.asarray(x0).ravel())))


# ---- internal solve data -----------------------------------------------------


class _ActiveData:
    """Noise-normalized views used by all three blocks of one solve."""

    def __init__(self, channels: ChannelSet, cfg: StarsConfig, params: ScenarioParams, rate_scale: float):
        self.params = params
        self.k = params.n_users
        self.n = params.n_antennas
        sig_k = math.sqrt(params.noise_user_w)
        sig_s = math.sqrt(params.noise_sensing_w)
        theta_t = coefficients(cfg, "T")
        theta_r = coefficients(cfg, "R")
        # h[k]: theta_T^T H_k conjugated and noise-scaled, so A_k = |h_k^H w|^2 / sigma^2
        self.h = np.conj(metrics.effective_user_rows(theta_t, channels)) / sig_k
        self.h_s = metrics.sensing_channel(theta_r, channels, params.absorption_coeff) / sig_s
        self.p_budget = params.bs_power_budget_w
        self.r_th = params.rate_min_bpshz * rate_scale
        self.gam_s = params.sensing_sinr_min
        self.gam_i = params.sensing_inr_max
        self.xi = params.decode_constant
        self.p_fixed = params.p_bs_w + stars_power(cfg, params.p_pin_w, params.p_cir_w)

    def signal(self, w_k: np.ndarray, k: int) -> complex:
        return complex(np.vdot(self.h[k], w_k))

    def denom(self, bf: BeamformerSet, k: int) -> float:
        tot = 1.0  # scaled noise
        for j in range(self.k):
            tot += abs(np.vdot(self.h[k], bf.w_c[j])) ** 2
        tot += float(np.sum(np.abs(np.conj(self.h[k]) @ bf.w_s) ** 2))
        return tot

    def sinr(self, bf: BeamformerSet, k: int) -> float:
        a = abs(self.signal(bf.w_c[k], k)) ** 2
        return a / (self.denom(bf, k) - a)

    def rate_and_power(self, bf: BeamformerSet) -> tuple[float, float]:
        r_t = sum(math.log2(1.0 + self.sinr(bf, k)) for k in range(self.k))
        p = bf.transmit_power() + self.xi * r_t + self.p_fixed
        return r_t, p

    def ee(self, bf: BeamformerSet) -> float:
        r_t, p = self.rate_and_power(bf)
        return r_t / p


def _expansion(data: _ActiveData, bf: BeamformerSet):
    """Per-user (gamma_bar, lam, y, unit-phase, C_bar) at the incumbent."""
    out = []
    for k in range(data.k):
        c_bar = data.denom(bf, k)
        s = data.signal(bf.w_c[k], k)
        a = abs(s) ** 2
        lam = dinkelbach_lambda(a, c_bar - a)
        gb = a / (c_bar - a)
        y2 = lam / c_bar
        phase = s / abs(s) if abs(s) > 0 else 1.0 + 0j
        out.append((gb, lam, y2, phase, c_bar))
    return out


def _rate_const_terms(exp_k) -> tuple[float, float]:
    """(affine offset f + anchor-free parts, multiplier) shared by builders."""
    gb, lam, y2, _phase, _c_bar = exp_k
    f = math.log2(1.0 + gb) - gb
    return f, 1.0 + gb


def build_wc_subproblem(data: _ActiveData, bf: BeamformerSet, eta: float, expansion=None):
    """Communication-precoder block: all K precoders free, everything else fixed."""
    exp = expansion or _expansion(data, bf)
    p = ConvexProblem("wc_block")
    w_vars = [p.complex_var(f"w{k}", data.n) for k in range(data.k)]
    one_m_ex = 1.0 - eta * data.xi

    lin = LinExpr.constant(0.0)
    obj_const = 0.0
    quad_exprs, quad_weights = [], []
    for k in range(data.k):
        gb, lam, y2, phase, _ = exp[k]
        f, mult = _rate_const_terms(exp[k])
        obj_const += one_m_ex * f
        lin = lin + (2.0 * one_m_ex * mult * math.sqrt(y2)) * p.re_inner(phase * data.h[k], w_vars[k])
        wq = one_m_ex * mult * y2
        for j in range(data.k):
            quad_exprs.append(p.expr(w_vars[j], mat=np.conj(data.h[k])[None, :]))
            quad_weights.append(wq)
        ws_leak = float(np.sum(np.abs(np.conj(data.h[k]) @ bf.w_s) ** 2))
        obj_const += -one_m_ex * mult * y2 * (ws_leak + 1.0)
    ws_pow = float(np.sum(np.abs(bf.w_s) ** 2))
    obj_const += -eta * (ws_pow + data.p_fixed)
    for k in range(data.k):
        quad_exprs.append(p.expr(w_vars[k]))
        quad_weights.append(eta)

    p.maximize(lin + obj_const)
    for e, wq in zip(quad_exprs, quad_weights):
        p.add_quad_obj(e, wq)

    # BS power budget (17b), W_s share fixed
    p.add_sq_le(stack([p.expr(v) for v in w_vars]), data.p_budget - ws_pow, "bs_power")

    # per-user rate floors (28)
    for k in range(data.k):
        gb, lam, y2, phase, _ = exp[k]
        f, mult = _rate_const_terms(exp[k])
        ws_leak = float(np.sum(np.abs(np.conj(data.h[k]) @ bf.w_s) ** 2))
        rhs = (
            LinExpr.constant(f - data.r_th - mult * y2 * (ws_leak + 1.0))
            + (2.0 * mult * math.sqrt(y2)) * p.re_inner(phase * data.h[k], w_vars[k])
        )
        lhs = stack(
            [p.expr(v, mat=np.conj(data.h[k])[None, :]) for v in w_vars],
            [mult * y2] * data.k,
        )
        p.add_sq_le(lhs, rhs, f"rate_{k}")

    # sensing SINR (29a with W_s fixed) and INR (30)
    if data.gam_s is not None or data.gam_i is not None:
        u = bf.u_s / np.linalg.norm(bf.u_s)
        row = np.conj(u) @ data.h_s  # u^H H_s
        sense_sig = float(np.sum(np.abs(row @ bf.w_s) ** 2))
        leak_exprs = [p.expr(v, mat=row[None, :]) for v in w_vars]
        if data.gam_s is not None:
            p.add_sq_le(stack(leak_exprs), sense_sig / data.gam_s - 1.0, "sensing_sinr")
        if data.gam_i is not None:
            p.add_sq_le(stack(leak_exprs), data.gam_i, "sensing_inr")

    # EE floor (27) at fixed eta; the objective equals its LHS
    ee_lhs_quad = stack(quad_exprs, quad_weights)
    p.add_sq_le(ee_lhs_quad, lin + (obj_const + EE_SLACK), "ee_floor")
    return p, w_vars


def build_ws_subproblem(data: _ActiveData, bf: BeamformerSet, eta: float, expansion=None):
    """Sensing-precoder block: W_s free, communication precoders and u_s fixed."""
    exp = expansion or _expansion(data, bf)
    n = data.n
    p = ConvexProblem("ws_block")
    ws = p.complex_var("ws", n * n)
    one_m_ex = 1.0 - eta * data.xi

    quad_exprs, quad_weights, obj_const = [], [], 0.0
    for k in range(data.k):
        gb, lam, y2, phase, _ = exp[k]
        f, mult = _rate_const_terms(exp[k])
        s_k = abs(data.signal(bf.w_c[k], k))
        itf = sum(abs(np.vdot(data.h[k], bf.w_c[j])) ** 2 for j in range(data.k))
        obj_const += one_m_ex * (f + mult * (2.0 * math.sqrt(y2) * s_k - y2 * (itf + 1.0)))
        quad_exprs.append(p.expr(ws, mat=np.kron(np.conj(data.h[k])[None, :], np.eye(n))))
        quad_weights.append(one_m_ex * mult * y2)
    wc_pow = float(np.sum(np.abs(bf.w_c) ** 2))
    obj_const += -eta * (wc_pow + data.p_fixed)
    quad_exprs.append(p.expr(ws))
    quad_weights.append(eta)

    p.maximize(LinExpr.constant(obj_const))
    for e, wq in zip(quad_exprs, quad_weights):
        p.add_quad_obj(e, wq)

    p.add_sq_le(p.expr(ws), data.p_budget - wc_pow, "bs_power")

    for k in range(data.k):
        gb, lam, y2, phase, _ = exp[k]
        f, mult = _rate_const_terms(exp[k])
        y2 = max(y2, 1e-30)  # zero-signal users leave the floor to the solver
        s_k = abs(data.signal(bf.w_c[k], k))
        itf = sum(abs(np.vdot(data.h[k], bf.w_c[j])) ** 2 for j in range(data.k))
        rhs = f + mult * (2.0 * math.sqrt(y2) * s_k - y2 * (itf + 1.0)) - data.r_th
        p.add_sq_le(
            p.expr(ws, mat=np.kron(np.conj(data.h[k])[None, :], np.eye(n))),
            rhs / (mult * y2),
            f"rate_{k}",
        )

    if data.gam_s is not None:
        u = bf.u_s / np.linalg.norm(bf.u_s)
        row = np.conj(u) @ data.h_s
        f_row = np.kron(row[None, :], np.eye(n))
        q0, g = linearize_quadratic(f_row, None, bf.w_s.ravel())
        leak = sum(abs(row @ bf.w_c[j]) ** 2 for j in range(data.k))
        # q0 + 2Re{g^H (ws - ws0)} >= gam_s (leak + 1)
        lin = 2.0 * p.re_inner(g, ws)
        floor = data.gam_s * (leak + 1.0) - q0 + 2.0 * float(np.real(np.vdot(g, bf.w_s.ravel())))
        p.add_le(LinExpr.constant(floor) - lin, 0.0, "sensing_sinr")

    ee_quad = stack(quad_exprs, quad_weights)
    p.add_sq_le(ee_quad, obj_const + EE_SLACK, "ee_floor")
    return p, ws


def build_us_subproblem(data: _ActiveData, bf: BeamformerSet):
    """Receive-combiner block: maximize the sensing feasibility margin."""
    p = ConvexProblem("us_block")
    u = p.complex_var("u", data.n)
    t = p.real_var("t", 1)
    p.maximize(LinExpr({"t": np.array([1.0 + 0j])}, 0.0))
    u0 = bf.u_s / np.linalg.norm(bf.u_s)
    a_rows = [data.h_s @ bf.w_c[k] for k in range(data.k)]  # |a_k^H u|^2 leak terms

    p.add_norm_le(p.expr(u), 1.0, "u_cap")
    t_lin = LinExpr({"t": np.array([1.0 + 0j])})

    if data.gam_s is not None:
        m_s = data.h_s @ bf.w_s
        q0 = float(np.sum(np.abs(np.conj(u0) @ m_s) ** 2))
        f2 = m_s @ (np.conj(m_s.T) @ u0)
        lin = 2.0 * p.re_inner(f2, u)
        const = q0 - 2.0 * float(np.real(np.vdot(f2, u0)))
        quad = stack(
            [p.expr(u, mat=np.conj(a)[None, :]) for a in a_rows] + [p.expr(u)],
            [data.gam_s] * data.k + [data.gam_s],
        )
        p.add_sq_le(quad, lin + LinExpr.constant(const) - t_lin, "sensing_sinr")
    if data.gam_i is not None:
        quad = stack([p.expr(u, mat=np.conj(a)[None, :]) for a in a_rows])
        lin = 2.0 * data.gam_i * p.re_inner(u0, u)
        p.add_sq_le(quad, lin + LinExpr.constant(-data.gam_i) - t_lin, "sensing_inr")
    return p, u, t


# ---- initialization ------------------------------------------------------------


def _default_init(data: _ActiveData, rng: np.random.Generator | None = None) -> BeamformerSet:
    """Matched filters (70% budget) projected off the sensing leak row, identity
    sensing precoder (30%), principal-combiner."""
    k, n = data.k, data.n
    ws = math.sqrt(0.3 * data.p_budget / n) * np.eye(n, dtype=complex)
    u = _principal_combiner(data.h_s, ws)
    w_c = np.zeros((k, n), dtype=complex)
    row = np.conj(u) @ data.h_s
    proj = np.eye(n, dtype=complex)
    if data.gam_i is not None and np.linalg.norm(row) > 0:
        r = row / np.linalg.norm(row)
        proj = proj - np.outer(np.conj(r), r)
    for i in range(k):
        mf = data.h[i].copy() if rng is None else data.h[i] + 0.1 * np.linalg.norm(data.h[i]) * (
            rng.standard_normal(n) + 1j * rng.standard_normal(n)
        )
        d = proj @ mf
        if np.linalg.norm(d) < 1e-12 * max(np.linalg.norm(mf), 1.0):
            d = mf
        w_c[i] = math.sqrt(0.7 * data.p_budget / k) * d / np.linalg.norm(d)
    return BeamformerSet(w_c=w_c, w_s=ws, u_s=u)


def _random_init(data: _ActiveData, rng: np.random.Generator) -> BeamformerSet:
    k, n = data.k, data.n
    w_c = rng.standard_normal((k, n)) + 1j * rng.standard_normal((k, n))
    w_c *= math.sqrt(0.7 * data.p_budget) / np.linalg.norm(w_c)
    ws = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    ws *= math.sqrt(0.3 * data.p_budget) / np.linalg.norm(ws)
    u = _principal_combiner(data.h_s, ws)
    return BeamformerSet(w_c=w_c, w_s=ws, u_s=u)


def _principal_combiner(h_s: np.ndarray, ws: np.ndarray) -> np.ndarray:
    m = h_s @ ws
    if np.linalg.norm(m) == 0.0:
        u = np.zeros(h_s.shape[0], dtype=complex)
        u[0] = 1.0
        return u
    uu, _s, _vh = np.linalg.svd(m)
    return uu[:, 0]


# ---- driver ---------------------------------------------------------------------


def solve_active(
    channels: ChannelSet,
    stars_cfg: StarsConfig,
    params: ScenarioParams,
    init: BeamformerSet | None = None,
) -> ActiveResult:
    """Algorithm-1 BCD with the documented infeasibility fallback ladder."""
    ladder = [
        ("base", 1.0, False),
        ("rate_half", 0.5, False),
        ("random_init", 0.5, True),
    ]
    flags = {"fallbacks": []}
    for name, rate_scale, randomize in ladder:
        data = _ActiveData(channels, stars_cfg, params, rate_scale)
        rng = np.random.default_rng([int(params.seed) & 0xFFFFFFFF, 0xAC71]) if randomize else None
        bf0 = init if (init is not None and not randomize and rate_scale == 1.0) else None
        if bf0 is None:
            bf0 = _random_init(data, rng) if randomize else _default_init(data)
        result = _bcd(data, bf0, flags)
        if result is not None:
            result.flags.update(flags)
            result.flags["rate_scale"] = rate_scale
            if rate_scale < 1.0:
                result.flags["rate_relaxed"] = True
            return result
        flags["fallbacks"].append(name)
        log.info("active solve fallback after %s", name)
    bf0 = _default_init(_ActiveData(channels, stars_cfg, params, 1.0))
    return ActiveResult(
        bf=bf0,
        eta=_ActiveData(channels, stars_cfg, params, 1.0).ee(bf0),
        trace=[],
        flags={**flags, "infeasible": True},
        feasible=False,
    )


def _bcd(data: _ActiveData, bf: BeamformerSet, flags: dict) -> ActiveResult | None:
    eta = data.ee(bf)
    trace = [(0, eta)]
    incumbent = bf
    for it in range(1, MAX_PASSES + 1):
        exp = _expansion(data, bf)

        prob, w_vars = build_wc_subproblem(data, bf, eta, exp)
        out = prob.solve()
        if out.status == "infeasible":
            return None
        if out.status == "optimal":
            w_new = np.vstack([out.assignment[v.name] for v in w_vars])
            bf = BeamformerSet(w_c=w_new, w_s=bf.w_s, u_s=bf.u_s)

        prob, ws_var = build_ws_subproblem(data, bf, eta, _expansion(data, bf))
        out = prob.solve()
        if out.status == "infeasible":
            return None
        if out.status == "optimal":
            bf = BeamformerSet(
                w_c=bf.w_c, w_s=out.assignment[ws_var.name].reshape(data.n, data.n), u_s=bf.u_s
            )

        if data.gam_s is not None or data.gam_i is not None:
            prob, u_var, _t = build_us_subproblem(data, bf)
            out = prob.solve()
            if out.status == "optimal":
                u = out.assignment[u_var.name]
                nu = np.linalg.norm(u)
                if nu > 1e-9:
                    bf = BeamformerSet(w_c=bf.w_c, w_s=bf.w_s, u_s=u / nu)
            elif out.status == "infeasible":
                return None

        eta_new = data.ee(bf)
        if eta_new < eta - 1e-12:
            # pass failed to improve the true ratio: keep the incumbent
            bf = incumbent
            break
        incumbent = bf
        improvement = (eta_new - eta) / max(abs(eta), 1e-12)
        eta = eta_new
        trace.append((it, eta))
        if improvement < REL_TOL:
            break
    return ActiveResult(bf=bf, eta=eta, trace=trace, flags=dict(flags), feasible=True)
