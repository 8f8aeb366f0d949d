"""Passive STARS beamforming for the three hardware architectures.

relaxed      -> penalty convex-concave programming over unconstrained complex
                coefficients tied to amplitude variables by penalized slacks.
independent  -> penalty dual decomposition: a convex block over auxiliary row
                vectors, then per-element closed-form phases and a ternary
                search on the amplitude angle.
coupled      -> same PDD outer machinery plus an unconstrained least-squares
                step for the coefficient vectors and a per-element candidate
                search that keeps the T/R phase offset at +/- pi/2 exactly.

Active beamformers stay fixed throughout; the EE auxiliary is refreshed by the
scalar ratio update between iterations.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .active_bf import linearize_quadratic
from .channel import ChannelSet
from .convex import ConvexProblem, LinExpr, Var, stack
from .metrics import BeamformerSet
from .scenario import ScenarioParams
from .stars import TWO_PI, StarsConfig, coefficients, stars_power

log = logging.getLogger("stars_isac.passive")

PCCP_SLACK_TARGET = 1e-6
PCCP_MAX_ITERS = 40
PDD_MAX_OUTER = 100
PDD_EPS0 = 1e-4
PDD_RHO0 = 1.0
EPS_SHRINK = 0.8
REL_TOL = 1e-4
TERNARY_TOL = 1e-8


@dataclass
class PddState:
    """Auxiliary consensus variables, duals, and penalty of one PDD run."""

    f1: np.ndarray           # theta_R^T Gt         (N,)
    f2: np.ndarray           # theta_R^T Gbar_k     (K,)
    f3: np.ndarray           # theta_T^T H_k        (K, N)
    z1: np.ndarray
    z2: np.ndarray
    z3: np.ndarray
    f_t: np.ndarray | None = None   # coupled only  (M_on,)
    f_r: np.ndarray | None = None
    z4_t: np.ndarray | None = None
    z4_r: np.ndarray | None = None
    rho: float = PDD_RHO0
    eps_th: float = PDD_EPS0


@dataclass(frozen=True)
class ElementCoeffs:
    c1: float
    c2: complex
    c3: float
    c4: complex
    c5: float
    c6: complex


@dataclass
class PassiveInfo:
    """Solver diagnostics surfaced to tests and the run CSV."""

    trace: list = field(default_factory=list)   # (iter, violation, penalty, objective)
    max_energy_dev: float = 0.0
    max_phase_cos: float = 0.0
    slack_max: float = float("inf")
    beta_gap: float = 0.0
    converged: bool = False
    warning: str = ""


# ---- fixed data ----------------------------------------------------------------


class _PassiveData:
    """Noise-normalized constants of one passive solve, on-element subset."""

    def __init__(self, channels: ChannelSet, bf: BeamformerSet, params: ScenarioParams,
                 cfg: StarsConfig):
        self.params = params
        self.k = params.n_users
        self.n = params.n_antennas
        self.on = np.flatnonzero(np.round(cfg.alpha) > 0)
        if self.on.size == 0:
            raise ValueError("no STARS element is on")
        sig_k = math.sqrt(params.noise_user_w)
        sig_s = math.sqrt(params.noise_sensing_w)
        self.u = bf.u_s / np.linalg.norm(bf.u_s)
        self.w_c = bf.w_c
        self.w_s = bf.w_s
        gt, gbar, c_s, cbar = build_sensing_row_vectors(channels, bf, params.absorption_coeff)
        self.gt = gt[self.on] / sig_s
        self.gbar = gbar[:, self.on] / sig_s
        self.c_s = c_s / sig_s
        self.cbar = cbar / sig_s
        h_on = channels.h[:, self.on, :] / sig_k
        self.h_on = h_on
        # dj[k, j] . theta_T = theta_T^T H'_k w_j ; fw[k] theta_T = (theta_T^T H'_k W_s)^T
        self.dj = np.empty((self.k, self.k, self.on.size), dtype=complex)
        for k in range(self.k):
            for j in range(self.k):
                self.dj[k, j] = h_on[k] @ bf.w_c[j]
        self.d = np.array([self.dj[k, k] for k in range(self.k)])
        self.fw = np.array([(h_on[k] @ bf.w_s).T for k in range(self.k)])
        self.gam_s = params.sensing_sinr_min
        self.gam_i = params.sensing_inr_max
        self.xi = params.decode_constant
        self.r_th = params.rate_min_bpshz
        self.p_fixed = (
            bf.transmit_power() + params.p_bs_w + stars_power(cfg, params.p_pin_w, params.p_cir_w)
        )

    def theta_pair(self, cfg: StarsConfig):
        return coefficients(cfg, "T")[self.on], coefficients(cfg, "R")[self.on]

    def user_signal(self, theta_t: np.ndarray, k: int) -> complex:
        return complex(np.dot(self.d[k], theta_t))

    def user_denominator(self, theta_t: np.ndarray, k: int) -> float:
        tot = 1.0
        for j in range(self.k):
            tot += abs(np.dot(self.dj[k, j], theta_t)) ** 2
        tot += float(np.sum(np.abs(self.fw[k] @ theta_t) ** 2))
        return tot

    def rate(self, theta_t: np.ndarray) -> float:
        out = 0.0
        for k in range(self.k):
            a = abs(self.user_signal(theta_t, k)) ** 2
            out += math.log2(1.0 + a / (self.user_denominator(theta_t, k) - a))
        return out

    def ee(self, theta_t: np.ndarray) -> float:
        r = self.rate(theta_t)
        return r / (self.p_fixed + self.xi * r)

    def expansion(self, theta_t: np.ndarray):
        out = []
        for k in range(self.k):
            c_bar = self.user_denominator(theta_t, k)
            s = self.user_signal(theta_t, k)
            a = abs(s) ** 2
            lam = a / c_bar
            gb = a / (c_bar - a)
            out.append((gb, lam, lam / c_bar, s / abs(s) if abs(s) > 0 else 1.0 + 0j, c_bar))
        return out

    def sense_signal_row(self, theta_r: np.ndarray) -> np.ndarray:
        return theta_r @ self.gt + self.c_s

    def sense_leaks(self, theta_r: np.ndarray) -> np.ndarray:
        return np.array([np.dot(self.gbar[k], theta_r) + self.cbar[k] for k in range(self.k)])

    def effective_thresholds(self, theta_r: np.ndarray):
        """Sensing floors for infeasible warm starts: demand a fixed relative
        improvement per iteration until the true thresholds are reached."""
        sig = leak = None
        leak = float(np.sum(np.abs(self.sense_leaks(theta_r)) ** 2))
        if self.gam_s is not None:
            sig = float(np.sum(np.abs(self.sense_signal_row(theta_r)) ** 2))
        return _ratchet(self.gam_s, self.gam_i, sig, leak)

    def sensing_feasible(self, theta_r: np.ndarray, tol: float = 1e-6) -> bool:
        ok = True
        leak = float(np.sum(np.abs(self.sense_leaks(theta_r)) ** 2))
        if self.gam_s is not None:
            sig = float(np.sum(np.abs(self.sense_signal_row(theta_r)) ** 2))
            ok &= sig >= self.gam_s * (leak + 1.0) * (1.0 - tol) - tol
        if self.gam_i is not None:
            ok &= leak <= self.gam_i * (1.0 + tol) + tol
        return ok

    def point_feasible(self, theta_t: np.ndarray, theta_r: np.ndarray,
                       rate_floor_slack: float = 1e-6) -> bool:
        for k in range(self.k):
            a = abs(self.user_signal(theta_t, k)) ** 2
            rate = math.log2(1.0 + a / (self.user_denominator(theta_t, k) - a))
            if rate < self.r_th - rate_floor_slack:
                return False
        return self.sensing_feasible(theta_r)


def _ratchet(gam_s, gam_i, sig, leak):
    """Restoration thresholds: >=1.5x SINR gain / 1.5x INR cut per iteration."""
    gam_s_eff, gam_i_eff = gam_s, gam_i
    if gam_s is not None:
        achieved = sig / (leak + 1.0)
        if achieved < gam_s:
            gam_s_eff = min(gam_s, max(achieved * 1.5, gam_s * 1e-6))
    if gam_i is not None and leak > gam_i:
        gam_i_eff = max(gam_i, leak / 1.5)
    return gam_s_eff, gam_i_eff


def build_sensing_row_vectors(channels: ChannelSet, bf: BeamformerSet, absorption: float):
    """Decompose u^H H_s W as theta_R-linear rows plus target-path constants.

    Returns (Gt (M, N), Gbar (K, M), c_s (N,), cbar (K,)) in raw units with the
    combiner taken at unit norm.
    """
    u = bf.u_s / np.linalg.norm(bf.u_s)
    lead = np.conj(channels.g @ u)            # u^H G^H as an M-vector
    gt = absorption ** 2 * lead[:, None] * (channels.g @ bf.w_s)
    gbar = np.array(
        [absorption ** 2 * lead * (channels.g @ bf.w_c[k]) for k in range(bf.n_users)]
    )
    ug = complex(np.vdot(u, channels.g_s))    # u^H g_s
    c_s = absorption * ug * (np.conj(channels.g_s) @ bf.w_s)
    cbar = np.array(
        [absorption * ug * complex(np.conj(channels.g_s) @ bf.w_c[k]) for k in range(bf.n_users)]
    )
    return gt, gbar, c_s, cbar


# ---- shared rate-surrogate builder ----------------------------------------------


def _add_rate_surrogate(prob, user_vars, sig_rows, itf_scalar_rows, itf_vec_mats, exp,
                        xi_eta, r_th, collect):
    """Per-user surrogate rate pieces; one decision variable per user.

    sig_rows[k] . var_k is the signal amplitude; itf_scalar_rows[k] are rows of
    |row . var_k|^2 denominator terms and itf_vec_mats[k] (mat, const) pairs of
    ||mat var_k + const||^2 terms.  Adds the per-user rate floors and returns
    (linear part, constant part) of (1 - eta xi) * sum_k surrogate_rate; the
    quadratic pieces are appended to ``collect`` as (weight, expr).
    """
    lin_total = LinExpr.constant(0.0)
    const_total = 0.0
    for k, (gb, lam, y2, phase, _cb) in enumerate(exp):
        var = user_vars[k]
        f = math.log2(1.0 + gb) - gb
        mult = 1.0 + gb
        y2 = max(y2, 1e-30)
        lin_k = (2.0 * mult * math.sqrt(y2)) * prob.expr(
            var, mat=(np.conj(phase) * sig_rows[k])[None, :]
        ).real_part()
        const_k = f - mult * y2  # f(gamma_bar) and the scaled-noise term of C_k
        exprs_k, weights_k = [], []
        for row in itf_scalar_rows[k]:
            exprs_k.append(prob.expr(var, mat=np.atleast_2d(row)))
            weights_k.append(mult * y2)
        for mat, cvec in itf_vec_mats[k]:
            exprs_k.append(prob.expr(var, mat=mat, const=cvec))
            weights_k.append(mult * y2)
        prob.add_sq_le(
            stack(exprs_k, weights_k),
            lin_k + LinExpr.constant(const_k - r_th),
            f"rate_{k}",
        )
        lin_total = lin_total + xi_eta * lin_k
        const_total += xi_eta * const_k
        collect.extend((xi_eta * w, e) for w, e in zip(weights_k, exprs_k))
    return lin_total, const_total


def _add_sensing_constraints(prob, v_r: Var, data: _PassiveData, theta_r0: np.ndarray,
                             gam_s: float | None, gam_i: float | None):
    """SCA sensing-SINR floor and exact INR cap for a theta_R-like variable."""
    leak_exprs = [
        prob.expr(v_r, mat=np.atleast_2d(data.gbar[k]), const=np.array([data.cbar[k]]))
        for k in range(data.k)
    ]
    if gam_s is not None:
        q0, g = linearize_quadratic(data.gt.T, data.c_s, theta_r0)
        gq = np.conj(g)  # q depends on theta without conjugation
        lin = 2.0 * prob.expr(v_r, mat=gq[None, :]).real_part()
        offset = q0 - 2.0 * float(np.real(np.dot(gq, theta_r0)))
        prob.add_sq_le(
            stack(leak_exprs, [gam_s] * data.k),
            lin + LinExpr.constant(offset - gam_s),
            "sensing_sinr",
        )
    if gam_i is not None:
        prob.add_sq_le(stack(leak_exprs), gam_i, "sensing_inr")


# ---- relaxed STARS (PCCP) --------------------------------------------------------


def solve_relaxed(channels, bf, params, init: StarsConfig, info: PassiveInfo | None = None,
                  pin_amplitudes: bool = False, pin_phases: bool = False) -> StarsConfig:
    """PCCP loop; amplitudes optionally pinned at 0.5 (fair-comparison mode)."""
    info = info if info is not None else PassiveInfo()
    data = _PassiveData(channels, bf, params, init)
    mon = data.on.size
    fix_amp = params.relaxed_fixed_amplitude or pin_amplitudes
    theta_t, theta_r = data.theta_pair(init)
    if fix_amp:
        theta_t = 0.5 * np.exp(1j * np.angle(theta_t))
        theta_r = 0.5 * np.exp(1j * np.angle(theta_r))
    beta_t, beta_r = np.abs(theta_t), np.abs(theta_r)
    phase0_t, phase0_r = np.angle(theta_t), np.angle(theta_r)
    eye = np.eye(mon)

    kappa = 1.0
    start_key = data.ee(theta_t) if data.point_feasible(theta_t, theta_r) else -math.inf
    best = (start_key, theta_t.copy(), theta_r.copy(), beta_t.copy(), beta_r.copy())
    prev_obj = None
    for it in range(PCCP_MAX_ITERS):
        eta = data.ee(theta_t)
        prob = ConvexProblem("relaxed_pccp")
        v_t = prob.complex_var("theta_t", mon)
        v_r = prob.complex_var("theta_r", mon)
        prob.real_var("a", mon, lb=0.0)
        prob.real_var("b", mon, lb=0.0)
        if not fix_amp:
            prob.real_var("beta_t", mon, lb=0.0, ub=1.0)
            prob.real_var("beta_r", mon, lb=0.0, ub=1.0)
        v_by = {"t": "beta_t", "r": "beta_r"}

        xi_eta = 1.0 - eta * data.xi
        collect: list = []
        lin, const = _add_rate_surrogate(
            prob, [v_t] * data.k,
            sig_rows=data.d,
            itf_scalar_rows=[[data.dj[k, j] for j in range(data.k)] for k in range(data.k)],
            itf_vec_mats=[[(data.fw[k], np.zeros(data.n))] for k in range(data.k)],
            exp=data.expansion(theta_t), xi_eta=xi_eta, r_th=data.r_th, collect=collect,
        )
        prob.add_sq_le(
            stack([e for _w, e in collect], [w for w, _e in collect]),
            lin + LinExpr.constant(const - eta * data.p_fixed + 1e-6),
            "ee_floor",
        )
        _add_sensing_constraints(prob, v_r, data, theta_r, *data.effective_thresholds(theta_r))

        for m in range(mon):
            e_m = eye[m][None, :].astype(complex)
            for side, var, th0, b0 in (("t", v_t, theta_t, beta_t), ("r", v_r, theta_r, beta_r)):
                slack_a = LinExpr({"a": eye[m].astype(complex)})
                slack_b = LinExpr({"b": eye[m].astype(complex)})
                lin_th = prob.expr(var, mat=(np.conj(th0[m]) * eye[m])[None, :]).real_part()
                if fix_amp:
                    prob.add_sq_le(prob.expr(var, mat=e_m),
                                   LinExpr.constant(0.25) + slack_a, f"abs_up_{side}{m}")
                    prob.add_le(LinExpr.constant(0.25) - lin_th - slack_b, 0.0, f"abs_lo_{side}{m}")
                else:
                    beta_lin = LinExpr({v_by[side]: (b0[m] * eye[m]).astype(complex)})
                    prob.add_sq_le(prob.expr(var, mat=e_m), beta_lin + slack_a, f"abs_up_{side}{m}")
                    prob.add_sq_le(
                        prob.expr(prob._vars[v_by[side]], mat=e_m),
                        lin_th + slack_b,
                        f"abs_lo_{side}{m}",
                    )
            if pin_phases:
                for var, ph in ((v_t, phase0_t), (v_r, phase0_r)):
                    prob.add_eq(
                        LinExpr({var.name: 1j * np.exp(-1j * ph[m]) * eye[m]}), 0.0,
                        f"ray_im_{var.name}{m}",
                    )
                    prob.add_le(
                        -1.0 * LinExpr({var.name: np.exp(-1j * ph[m]) * eye[m]}), 0.0,
                        f"ray_re_{var.name}{m}",
                    )

        penalty = LinExpr({"a": np.ones(mon, dtype=complex), "b": np.ones(mon, dtype=complex)})
        prob.maximize(lin + LinExpr.constant(const - eta * data.p_fixed) - kappa * penalty)

        out = prob.solve()
        if out.status != "optimal":
            if it == 0:
                info.warning = f"initial point infeasible for PCCP ({out.status})"
                break
            kappa = min(kappa * 3.0, 1e6)
            info.trace.append((it, float("nan"), kappa, float("nan")))
            continue
        theta_t = out.assignment["theta_t"]
        theta_r = out.assignment["theta_r"]
        if not fix_amp:
            beta_t = np.clip(out.assignment["beta_t"], 0.0, 1.0)
            beta_r = np.clip(out.assignment["beta_r"], 0.0, 1.0)
        slack_sum = float(np.sum(out.assignment["a"]) + np.sum(out.assignment["b"]))
        info.slack_max = float(np.max(np.concatenate([out.assignment["a"], out.assignment["b"]])))
        ee_now = data.ee(theta_t)
        obj = ee_now - kappa * slack_sum
        info.trace.append((it, info.slack_max, kappa, obj))
        if (
            ee_now >= best[0]
            and info.slack_max <= 10 * PCCP_SLACK_TARGET
            and data.point_feasible(theta_t, theta_r)
        ):
            best = (ee_now, theta_t.copy(), theta_r.copy(), beta_t.copy(), beta_r.copy())
        done = (
            info.slack_max <= PCCP_SLACK_TARGET
            and prev_obj is not None
            and abs(obj - prev_obj) <= REL_TOL * max(abs(prev_obj), 1e-9)
        )
        prev_obj = obj
        if done:
            info.converged = True
            break
        if info.slack_max > PCCP_SLACK_TARGET:
            kappa = min(kappa * 3.0, 1e6)

    _ee, theta_t, theta_r, beta_t, beta_r = best
    if fix_amp:
        info.beta_gap = float(max(np.max(np.abs(np.abs(theta_t) - 0.5)),
                                  np.max(np.abs(np.abs(theta_r) - 0.5))))
    else:
        info.beta_gap = float(max(np.max(np.abs(np.abs(theta_t) - beta_t)),
                                  np.max(np.abs(np.abs(theta_r) - beta_r))))
    new_bt, new_br = init.beta_t.copy(), init.beta_r.copy()
    new_pt, new_pr = init.phi_t.copy(), init.phi_r.copy()
    if fix_amp:
        new_bt[data.on] = 0.5
        new_br[data.on] = 0.5
    else:
        new_bt[data.on] = np.clip(np.abs(theta_t), 0.0, 1.0)
        new_br[data.on] = np.clip(np.abs(theta_r), 0.0, 1.0)
    new_pt[data.on] = np.mod(np.angle(theta_t), TWO_PI)
    new_pr[data.on] = np.mod(np.angle(theta_r), TWO_PI)
    return init.with_(beta_t=new_bt, beta_r=new_br, phi_t=new_pt, phi_r=new_pr, quantized=False)


# ---- PDD: auxiliary block ---------------------------------------------------------


def init_pdd_state(data: _PassiveData, theta_t, theta_r, coupled: bool) -> PddState:
    f1 = theta_r @ data.gt
    f2 = np.array([np.dot(data.gbar[k], theta_r) for k in range(data.k)])
    f3 = np.array([theta_t @ data.h_on[k] for k in range(data.k)])
    state = PddState(
        f1=f1, f2=f2, f3=f3,
        z1=np.zeros_like(f1), z2=np.zeros_like(f2), z3=np.zeros_like(f3),
    )
    if coupled:
        state.f_t = theta_t.copy()
        state.f_r = theta_r.copy()
        state.z4_t = np.zeros_like(theta_t)
        state.z4_r = np.zeros_like(theta_r)
    return state


def pdd_aux_update(state: PddState, data: _PassiveData, theta_t, theta_r, eta: float) -> bool:
    """Convex block over {f1, f2k, f3k}: augmented-Lagrangian proximity plus the
    fixed-eta EE ascent term, under the surrogate rate/sensing/EE floors.

    Returns False when the block is infeasible (caller escalates the penalty).
    """
    prob = ConvexProblem("pdd_aux")
    v1 = prob.complex_var("f1", data.n)
    v2 = prob.complex_var("f2", data.k)
    v3 = [prob.complex_var(f"f3_{k}", data.n) for k in range(data.k)]
    eye_k = np.eye(data.k)

    xi_eta = 1.0 - eta * data.xi
    exp = []
    for k in range(data.k):
        c_bar = 1.0 + sum(abs(np.dot(state.f3[k], data.w_c[j])) ** 2 for j in range(data.k))
        c_bar += float(np.sum(np.abs(state.f3[k] @ data.w_s) ** 2))
        s = complex(np.dot(state.f3[k], data.w_c[k]))
        a = abs(s) ** 2
        lam = a / c_bar
        gb = a / (c_bar - a)
        exp.append((gb, lam, lam / c_bar, s / abs(s) if abs(s) else 1.0 + 0j, c_bar))

    collect: list = []
    lin, const = _add_rate_surrogate(
        prob, v3,
        sig_rows=[data.w_c[k] for k in range(data.k)],
        itf_scalar_rows=[[data.w_c[j] for j in range(data.k)] for k in range(data.k)],
        itf_vec_mats=[[(data.w_s.T, np.zeros(data.n))] for _ in range(data.k)],
        exp=exp, xi_eta=xi_eta, r_th=data.r_th, collect=collect,
    )
    prob.add_sq_le(
        stack([e for _w, e in collect], [w for w, _e in collect]),
        lin + LinExpr.constant(const - eta * data.p_fixed + 1e-6),
        "ee_floor",
    )

    # sensing floor linearized at the incumbent f1; INR exact in f2; thresholds
    # ratcheted from the incumbent f-point so a violated warm start restores
    leak0 = float(np.sum(np.abs(state.f2 + data.cbar) ** 2))
    sig0 = float(np.sum(np.abs(state.f1 + data.c_s) ** 2)) if data.gam_s is not None else None
    gam_s_eff, gam_i_eff = _ratchet(data.gam_s, data.gam_i, sig0, leak0)
    leak_exprs = [
        prob.expr(v2, mat=eye_k[k][None, :].astype(complex), const=np.array([data.cbar[k]]))
        for k in range(data.k)
    ]
    if gam_s_eff is not None:
        q0, g = linearize_quadratic(np.eye(data.n), data.c_s, state.f1)  # f4 path
        gq = np.conj(g)
        lin_s = 2.0 * prob.expr(v1, mat=gq[None, :]).real_part()
        offset = q0 - 2.0 * float(np.real(np.dot(gq, state.f1)))
        prob.add_sq_le(
            stack(leak_exprs, [gam_s_eff] * data.k),
            lin_s + LinExpr.constant(offset - gam_s_eff),
            "sensing_sinr",
        )
    if gam_i_eff is not None:
        prob.add_sq_le(stack(leak_exprs), gam_i_eff, "sensing_inr")

    # augmented-Lagrangian proximity to the primal expressions
    w = 1.0 / (2.0 * state.rho)
    prob.add_quad_obj(prob.expr(v1, const=-(theta_r @ data.gt - state.rho * state.z1)), w)
    t2 = np.array([np.dot(data.gbar[k], theta_r) for k in range(data.k)]) - state.rho * state.z2
    prob.add_quad_obj(prob.expr(v2, const=-t2), w)
    for k in range(data.k):
        t3 = theta_t @ data.h_on[k] - state.rho * state.z3[k]
        prob.add_quad_obj(prob.expr(v3[k], const=-t3), w)
    prob.maximize(lin + LinExpr.constant(const - eta * data.p_fixed))

    out = prob.solve()
    if out.status != "optimal":
        log.debug("pdd aux block: %s %s", out.status, out.diagnostics)
        return False
    state.f1 = out.assignment["f1"]
    state.f2 = out.assignment["f2"]
    state.f3 = np.array([out.assignment[f"f3_{k}"] for k in range(data.k)])
    return True


# ---- PDD: element coefficients and closed-form updates ------------------------------


def _coeff_matrices(state: PddState, data: _PassiveData):
    """Gram matrices and data vectors behind the elementwise quadratic of F."""
    phi1 = np.conj(data.gt) @ data.gt.T
    v1 = np.conj(data.gt) @ (state.f1 + state.rho * state.z1)
    phi2 = sum(np.outer(np.conj(data.gbar[k]), data.gbar[k]) for k in range(data.k))
    v2 = sum(np.conj(data.gbar[k]) * (state.f2[k] + state.rho * state.z2[k]) for k in range(data.k))
    phi3 = sum(np.conj(data.h_on[k]) @ data.h_on[k].T for k in range(data.k))
    v3 = sum(np.conj(data.h_on[k]) @ (state.f3[k] + state.rho * state.z3[k]) for k in range(data.k))
    return (phi1, v1), (phi2, v2), (phi3, v3)


def _coeffs_at(mats, theta_t, theta_r, m: int) -> ElementCoeffs:
    (phi1, v1), (phi2, v2), (phi3, v3) = mats
    c2 = np.conj(phi1[m, m] * theta_r[m] - (phi1[m] @ theta_r) + v1[m])
    c4 = np.conj(phi2[m, m] * theta_r[m] - (phi2[m] @ theta_r) + v2[m])
    c6 = np.conj(phi3[m, m] * theta_t[m] - (phi3[m] @ theta_t) + v3[m])
    return ElementCoeffs(
        c1=float(phi1[m, m].real), c2=complex(c2),
        c3=float(phi2[m, m].real), c4=complex(c4),
        c5=float(phi3[m, m].real), c6=complex(c6),
    )


def element_coeffs(state: PddState, data: _PassiveData, theta_t, theta_r) -> list[ElementCoeffs]:
    """Appendix coefficients of the elementwise quadratic of F at (theta_T, theta_R)."""
    mats = _coeff_matrices(state, data)
    return [_coeffs_at(mats, theta_t, theta_r, m) for m in range(data.on.size)]


def ternary_search(fun, lo: float, hi: float, tol: float = TERNARY_TOL) -> float:
    """Derivative-free minimization of a unimodal function on [lo, hi]."""
    while hi - lo > tol:
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if fun(m1) < fun(m2):
            hi = m2
        else:
            lo = m1
    return 0.5 * (lo + hi)


def independent_element_update(coeffs: ElementCoeffs, pin_amplitude: float | None = None,
                               pin_phases: tuple[float, float] | None = None):
    """Closed-form phases plus ternary-search amplitudes for one element."""
    if pin_phases is None:
        phi_r = math.atan2((coeffs.c2 + coeffs.c4).imag, (coeffs.c2 + coeffs.c4).real)
        phi_t = math.atan2(coeffs.c6.imag, coeffs.c6.real)
    else:
        phi_t, phi_r = pin_phases

    if pin_amplitude is not None:
        beta_t = math.sqrt(max(0.0, 1.0 - pin_amplitude ** 2)) if pin_amplitude <= 1 else 0.0
        return phi_t % TWO_PI, phi_r % TWO_PI, beta_t, pin_amplitude

    a_r = abs(coeffs.c2) + abs(coeffs.c4) if pin_phases is None else (
        (coeffs.c2 + coeffs.c4) * np.exp(1j * phi_r)
    ).real
    a_t = abs(coeffs.c6) if pin_phases is None else (coeffs.c6 * np.exp(1j * phi_t)).real

    def g(chi: float) -> float:
        c, s = math.cos(chi), math.sin(chi)
        return (
            (coeffs.c1 + coeffs.c3) * c * c - 2.0 * a_r * c
            + coeffs.c5 * s * s - 2.0 * a_t * s
        )

    chi = ternary_search(g, 0.0, 0.5 * math.pi)
    return phi_t % TWO_PI, phi_r % TWO_PI, math.sin(chi), math.cos(chi)


def coupled_element_update(zeta_t_m: complex, zeta_r_m: complex, beta_t_m: float,
                           beta_r_m: float, pin_amplitude: float | None = None,
                           pin_phases: tuple[float, float] | None = None):
    """Candidate phase pair plus the piecewise amplitude rule for one element.

    Returns (psi_t, psi_r, beta_t, beta_r) with cos(angle(psi_t) - angle(psi_r))
    exactly zero and beta_t^2 + beta_r^2 exactly one.
    """
    if pin_phases is None:
        tp_t = np.conj(beta_t_m * zeta_t_m)
        tp_r = np.conj(beta_r_m * zeta_r_m)
        u1 = tp_t + 1j * tp_r
        u2 = tp_t - 1j * tp_r
        cand = []
        for base, off_r in ((u1, 1.5 * math.pi), (u2, 0.5 * math.pi)):
            ang = math.atan2(base.imag, base.real)
            psi_t = np.exp(1j * (math.pi - ang))
            psi_r = np.exp(1j * (off_r - ang))
            score = (tp_t * psi_t).real + (tp_r * psi_r).real
            cand.append((score, psi_t, psi_r))
        _s, psi_t, psi_r = min(cand, key=lambda c: c[0])
    else:
        psi_t = np.exp(1j * pin_phases[0])
        psi_r = np.exp(1j * pin_phases[1])

    if pin_amplitude is not None:
        b_r = pin_amplitude
        b_t = math.sqrt(max(0.0, 1.0 - b_r * b_r))
    else:
        tpp_t = np.conj(np.conj(psi_t) * zeta_t_m)
        tpp_r = np.conj(np.conj(psi_r) * zeta_r_m)
        c_m = abs(tpp_t) * math.cos(math.atan2(tpp_t.imag, tpp_t.real))
        d_m = abs(tpp_r) * math.sin(math.atan2(tpp_r.imag, tpp_r.real))
        hyp = math.hypot(c_m, d_m)
        if hyp == 0.0:
            sigma = 0.0
        else:
            sign = 1.0 if c_m > 0 else -1.0
            sigma = sign * math.acos(max(-1.0, min(1.0, c_m / hyp)))
        if -math.pi <= sigma < -0.5 * math.pi:
            omega = -0.5 * math.pi - sigma
        elif -0.5 * math.pi <= sigma < 0.25 * math.pi:
            omega = 0.0
        else:
            omega = -0.5 * math.pi
        b_t, b_r = math.sin(omega), math.cos(omega)
        if b_t < 0.0:  # pi phase flip keeps the quarter-turn offset
            b_t, psi_t = -b_t, -psi_t
        if b_r < 0.0:
            b_r, psi_r = -b_r, -psi_r
    return psi_t, psi_r, b_t, b_r


def coupled_theta_update(state: PddState, data: _PassiveData):
    """Regularized least-squares solve of the consensus problem in theta."""
    zb1 = state.f1 + state.rho * state.z1
    zb2 = state.f2 + state.rho * state.z2
    zb3 = state.f3 + state.rho * state.z3
    zb4t = state.f_t + state.rho * state.z4_t
    zb4r = state.f_r + state.rho * state.z4_r
    mon = data.on.size

    a_r = np.conj(data.gt) @ data.gt.T + np.eye(mon)
    rhs_r = np.conj(data.gt) @ zb1 + zb4r
    for k in range(data.k):
        a_r = a_r + np.outer(np.conj(data.gbar[k]), data.gbar[k])
        rhs_r = rhs_r + np.conj(data.gbar[k]) * zb2[k]
    theta_r = np.linalg.solve(a_r, rhs_r)

    a_t = np.eye(mon, dtype=complex)
    rhs_t = zb4t.astype(complex).copy()
    for k in range(data.k):
        a_t = a_t + np.conj(data.h_on[k]) @ data.h_on[k].T
        rhs_t = rhs_t + np.conj(data.h_on[k]) @ zb3[k]
    theta_t = np.linalg.solve(a_t, rhs_t)
    return theta_t, theta_r


def pdd_residuals(state: PddState, data: _PassiveData, theta_t, theta_r):
    r1 = state.f1 - theta_r @ data.gt
    r2 = state.f2 - np.array([np.dot(data.gbar[k], theta_r) for k in range(data.k)])
    r3 = state.f3 - np.array([theta_t @ data.h_on[k] for k in range(data.k)])
    groups = [np.max(np.abs(r1)), np.max(np.abs(r2)), np.max(np.abs(r3))]
    r4 = None
    if state.f_t is not None:
        r4 = (state.f_t - theta_t, state.f_r - theta_r)
        groups.append(max(np.max(np.abs(r4[0])), np.max(np.abs(r4[1]))))
    return (r1, r2, r3, r4), float(max(groups))


def dual_and_penalty_update(state: PddState, data: _PassiveData, theta_t, theta_r,
                            c_rho: float) -> float:
    """Dual ascent when the violation is small, penalty shrink otherwise."""
    (r1, r2, r3, r4), f_v = pdd_residuals(state, data, theta_t, theta_r)
    if f_v <= state.eps_th:
        state.z1 = state.z1 + r1 / state.rho
        state.z2 = state.z2 + r2 / state.rho
        state.z3 = state.z3 + r3 / state.rho
        if r4 is not None:
            state.z4_t = state.z4_t + r4[0] / state.rho
            state.z4_r = state.z4_r + r4[1] / state.rho
        state.eps_th *= EPS_SHRINK
    else:
        state.rho *= c_rho
    return f_v


# ---- PDD driver ---------------------------------------------------------------------


def solve_passive(stars_type: str, channels, bf, params, init: StarsConfig,
                  pin_amplitudes: bool = False, pin_phases: bool = False) -> StarsConfig:
    cfg, _info = solve_passive_with_info(
        stars_type, channels, bf, params, init,
        pin_amplitudes=pin_amplitudes, pin_phases=pin_phases,
    )
    return cfg


def solve_passive_with_info(stars_type: str, channels, bf, params, init: StarsConfig,
                            pin_amplitudes: bool = False, pin_phases: bool = False):
    info = PassiveInfo()
    if stars_type == "relaxed":
        cfg = solve_relaxed(channels, bf, params, init, info,
                            pin_amplitudes=pin_amplitudes, pin_phases=pin_phases)
        return cfg, info

    coupled = stars_type == "coupled"
    data = _PassiveData(channels, bf, params, init)
    beta_t = init.beta_t[data.on].copy()
    beta_r = init.beta_r[data.on].copy()
    phi_t = init.phi_t[data.on].copy()
    phi_r = init.phi_r[data.on].copy()
    # project possibly-quantized starting amplitudes back onto the unit circle
    norm = np.sqrt(beta_t ** 2 + beta_r ** 2)
    dead = norm < 1e-12
    beta_t[dead], beta_r[dead], norm[dead] = math.sqrt(0.5), math.sqrt(0.5), 1.0
    beta_t, beta_r = beta_t / norm, beta_r / norm
    # theta starts at the (sensing-consistent) incoming point; for the coupled
    # type the auxiliaries f_Y carry the quarter-turn structure from the start
    theta_t = beta_t * np.exp(1j * phi_t)
    theta_r = beta_r * np.exp(1j * phi_r)
    state = init_pdd_state(data, theta_t, theta_r, coupled)
    if coupled and not pin_phases:
        phi_r = np.mod(phi_t + 0.5 * math.pi, TWO_PI)
        state.f_r = beta_r * np.exp(1j * phi_r)

    def config_from(bt, br, pt, pr):
        new_bt, new_br = init.beta_t.copy(), init.beta_r.copy()
        new_pt, new_pr = init.phi_t.copy(), init.phi_r.copy()
        new_bt[data.on] = bt
        new_br[data.on] = br
        new_pt[data.on] = np.mod(pt, TWO_PI)
        new_pr[data.on] = np.mod(pr, TWO_PI)
        return init.with_(beta_t=new_bt, beta_r=new_br, phi_t=new_pt, phi_r=new_pr,
                          quantized=False)

    def track_energy(bt, br):
        dev = float(np.max(np.abs(bt ** 2 + br ** 2 - 1.0))) if bt.size else 0.0
        info.max_energy_dev = max(info.max_energy_dev, dev)

    track_energy(beta_t, beta_r)
    ee0 = data.ee(beta_t * np.exp(1j * phi_t))
    start_ok = data.point_feasible(
        beta_t * np.exp(1j * phi_t), beta_r * np.exp(1j * phi_r)
    ) and (not coupled or pin_phases or np.max(np.abs(np.cos(phi_t - phi_r))) < 1e-6)
    best = (ee0 if start_ok else -math.inf,
            beta_t.copy(), beta_r.copy(), phi_t.copy(), phi_r.copy())
    prev_obj = None
    aux_failures = 0
    for it in range(PDD_MAX_OUTER):
        eta = data.ee(beta_t * np.exp(1j * phi_t))
        ok = pdd_aux_update(state, data, theta_t, theta_r, eta)
        if not ok:
            # one retry at a smaller penalty; a second consecutive failure means
            # the incumbent eta can no longer be certified: the stage has stalled
            aux_failures += 1
            info.trace.append((it, float("nan"), state.rho, float("nan")))
            if aux_failures >= 2:
                info.warning = "aux block stalled; best iterate returned"
                break
            state.rho *= params.pdd_learning_rate
            continue
        aux_failures = 0

        if coupled:
            theta_t, theta_r = coupled_theta_update(state, data)
            zeta_t = state.rho * state.z4_t - theta_t
            zeta_r = state.rho * state.z4_r - theta_r
            for m in range(data.on.size):
                psi_t, psi_r, b_t, b_r = coupled_element_update(
                    zeta_t[m], zeta_r[m], beta_t[m], beta_r[m],
                    pin_amplitude=beta_r[m] if pin_amplitudes else None,
                    pin_phases=(phi_t[m], phi_r[m]) if pin_phases else None,
                )
                phi_t[m] = math.atan2(psi_t.imag, psi_t.real) % TWO_PI
                phi_r[m] = math.atan2(psi_r.imag, psi_r.real) % TWO_PI
                beta_t[m], beta_r[m] = b_t, b_r
                state.f_t[m] = b_t * psi_t
                state.f_r[m] = b_r * psi_r
            track_energy(beta_t, beta_r)
        else:
            mats = _coeff_matrices(state, data)
            for _sweep in range(30):
                moved = 0.0
                for m in range(data.on.size):
                    p_t, p_r, b_t, b_r = independent_element_update(
                        _coeffs_at(mats, theta_t, theta_r, m),
                        pin_amplitude=beta_r[m] if pin_amplitudes else None,
                        pin_phases=(phi_t[m], phi_r[m]) if pin_phases else None,
                    )
                    new_t = b_t * np.exp(1j * p_t)
                    new_r = b_r * np.exp(1j * p_r)
                    moved = max(moved, abs(new_t - theta_t[m]), abs(new_r - theta_r[m]))
                    theta_t[m], theta_r[m] = new_t, new_r
                    beta_t[m], beta_r[m] = b_t, b_r
                    phi_t[m], phi_r[m] = p_t, p_r
                track_energy(beta_t, beta_r)
                if moved < 1e-7:
                    break

        f_v = dual_and_penalty_update(state, data, theta_t, theta_r, params.pdd_learning_rate)
        ee_now = data.ee(beta_t * np.exp(1j * phi_t))
        info.trace.append((it, f_v, state.rho, ee_now))
        if ee_now >= best[0] and data.point_feasible(
            beta_t * np.exp(1j * phi_t), beta_r * np.exp(1j * phi_r)
        ):
            best = (ee_now, beta_t.copy(), beta_r.copy(), phi_t.copy(), phi_r.copy())
        done = (
            f_v <= state.eps_th / EPS_SHRINK
            and prev_obj is not None
            and abs(ee_now - prev_obj) <= REL_TOL * max(abs(prev_obj), 1e-9)
        )
        prev_obj = ee_now
        if done:
            info.converged = True
            break

    if not info.converged and not info.warning:
        info.warning = "pdd did not converge; best feasible iterate returned"
    _ee, beta_t, beta_r, phi_t, phi_r = best
    if coupled:
        info.max_phase_cos = float(np.max(np.abs(np.cos(phi_t - phi_r)))) if phi_t.size else 0.0
    cfg = config_from(beta_t, beta_r, phi_t, phi_r)
    return cfg, info
