"""Dense convex subproblem layer shared by every SCA/PDD block.

Problems carry named complex/real variables, a maximize objective of the form
(real affine) - sum_i w_i ||E_i x + e_i||^2, and constraints drawn from
{affine equality, convex quadratic <= affine, norm <= affine, affine <= 0}.
Complex variables are realified internally (stacked Re/Im); the API speaks
complex.  The quadratic objective is lifted to an epigraph second-order cone so
the whole problem is one cone LP, solved by cvxopt's primal-dual interior-point
method (which also certifies infeasibility, needed by the SCA fallbacks).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import cvxopt

cvxopt.solvers.options["show_progress"] = False

_PSD_EIG_TOL = 1e-8


@dataclass(frozen=True)
class Var:
    name: str
    size: int
    is_complex: bool
    lb: float | None = None
    ub: float | None = None

    @property
    def real_size(self) -> int:
        return 2 * self.size if self.is_complex else self.size


class ComplexExpr:
    """Affine complex vector expression: sum_v M_v @ v + const."""

    def __init__(self, dim: int, terms: dict | None = None, const=None):
        self.dim = dim
        self.terms = {k: np.asarray(v, dtype=complex) for k, v in (terms or {}).items()}
        self.const = (
            np.zeros(dim, dtype=complex)
            if const is None
            else np.asarray(const, dtype=complex).reshape(dim)
        )

    def __add__(self, other):
        if isinstance(other, ComplexExpr):
            if other.dim != self.dim:
                raise ValueError("dimension mismatch")
            terms = dict(self.terms)
            for k, m in other.terms.items():
                terms[k] = terms[k] + m if k in terms else m
            return ComplexExpr(self.dim, terms, self.const + other.const)
        return ComplexExpr(self.dim, self.terms, self.const + np.asarray(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self + (other * -1.0 if isinstance(other, ComplexExpr) else -np.asarray(other))

    def __mul__(self, scalar):
        return ComplexExpr(
            self.dim,
            {k: m * scalar for k, m in self.terms.items()},
            self.const * scalar,
        )

    __rmul__ = __mul__

    def real_part(self) -> "LinExpr":
        """Re{expr} for scalar (dim-1) expressions."""
        if self.dim != 1:
            raise ValueError("real_part needs a scalar expression")
        return LinExpr({k: m[0] for k, m in self.terms.items()}, float(self.const[0].real))


class LinExpr:
    """Real affine scalar: sum_v Re{row_v @ v} + const."""

    def __init__(self, rows: dict | None = None, const: float = 0.0):
        self.rows = {k: np.asarray(v, dtype=complex) for k, v in (rows or {}).items()}
        self.const = float(const)

    @staticmethod
    def constant(c: float) -> "LinExpr":
        return LinExpr({}, c)

    def __add__(self, other):
        if isinstance(other, LinExpr):
            rows = dict(self.rows)
            for k, r in other.rows.items():
                rows[k] = rows[k] + r if k in rows else r
            return LinExpr(rows, self.const + other.const)
        return LinExpr(self.rows, self.const + float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, LinExpr):
            return self + (other * -1.0)
        return self + (-float(other))

    def __rsub__(self, other):
        return (self * -1.0) + float(other)

    def __mul__(self, scalar):
        return LinExpr({k: r * float(scalar) for k, r in self.rows.items()}, self.const * float(scalar))

    __rmul__ = __mul__


@dataclass
class SolveOutcome:
    status: str  # optimal | infeasible | max_iters
    assignment: dict
    objective_value: float
    kkt_residual: float
    diagnostics: dict = field(default_factory=dict)


class ConvexProblem:
    """One convex subproblem; single-threaded during solve."""

    def __init__(self, name: str = ""):
        self.name = name
        self._vars: dict[str, Var] = {}
        self._lin_obj = LinExpr.constant(0.0)
        self._quad_obj: list[tuple[float, ComplexExpr]] = []
        self._sq_le: list[tuple[ComplexExpr, LinExpr, str]] = []
        self._norm_le: list[tuple[ComplexExpr, LinExpr, str]] = []
        self._aff_le: list[tuple[LinExpr, str]] = []
        self._aff_eq: list[tuple[LinExpr, str]] = []
        self.warm_start: dict | None = None

    # ---- variables ----------------------------------------------------------

    def complex_var(self, name: str, size: int) -> Var:
        return self._register(Var(name, size, True))

    def real_var(self, name: str, size: int, lb=None, ub=None) -> Var:
        return self._register(Var(name, size, False, lb, ub))

    def _register(self, var: Var) -> Var:
        if var.name in self._vars:
            raise ValueError(f"duplicate variable {var.name!r}")
        self._vars[var.name] = var
        return var

    # ---- expression helpers --------------------------------------------------

    def expr(self, var: Var, mat=None, const=None) -> ComplexExpr:
        """M @ var + const (identity M by default)."""
        m = np.eye(var.size, dtype=complex) if mat is None else np.atleast_2d(np.asarray(mat, dtype=complex))
        if m.shape[1] != var.size:
            raise ValueError(f"matrix shape {m.shape} does not act on {var.name}")
        return ComplexExpr(m.shape[0], {var.name: m}, const)

    def re_inner(self, g, var: Var) -> LinExpr:
        """Re{g^H var} as a real affine functional."""
        g = np.asarray(g, dtype=complex).reshape(var.size)
        return self.expr(var, mat=np.conj(g)[None, :]).real_part()

    # ---- objective and constraints -------------------------------------------

    def maximize(self, lin: LinExpr) -> None:
        self._lin_obj = lin

    def add_quad_obj(self, expr: ComplexExpr, weight: float) -> None:
        """Objective gains -weight * ||expr||^2 (weight >= 0 keeps it concave)."""
        if weight < -_PSD_EIG_TOL:
            raise ValueError("quadratic objective weight must be nonnegative")
        if weight > 0.0:
            self._quad_obj.append((float(weight), expr))

    def add_quad_obj_gram(self, var: Var, gram: np.ndarray) -> None:
        """Objective gains -var^H gram var for a PSD gram matrix (eigen-checked)."""
        gram = np.asarray(gram, dtype=complex)
        w, vecs = np.linalg.eigh(0.5 * (gram + np.conj(gram.T)))
        if w.min() < -_PSD_EIG_TOL:
            raise ValueError(f"gram matrix not PSD (min eigenvalue {w.min():.3e})")
        w = np.clip(w, 0.0, None)
        root = (vecs * np.sqrt(w)) .conj().T
        self.add_quad_obj(self.expr(var, mat=root), 1.0)

    def add_sq_le(self, expr: ComplexExpr, rhs, tag: str = "") -> None:
        """||expr||^2 <= rhs (rhs real affine or constant)."""
        self._sq_le.append((expr, _as_lin(rhs), tag))

    def add_norm_le(self, expr: ComplexExpr, rhs, tag: str = "") -> None:
        self._norm_le.append((expr, _as_lin(rhs), tag))

    def add_le(self, lhs, rhs=0.0, tag: str = "") -> None:
        self._aff_le.append((_as_lin(lhs) - _as_lin(rhs), tag))

    def add_eq(self, lhs, rhs=0.0, tag: str = "") -> None:
        self._aff_eq.append((_as_lin(lhs) - _as_lin(rhs), tag))

    # ---- assembly -------------------------------------------------------------

    def _layout(self):
        offsets, total = {}, 0
        for var in self._vars.values():
            offsets[var.name] = total
            total += var.real_size
        return offsets, total

    def _realify_cexpr(self, expr: ComplexExpr, offsets, total):
        a = np.zeros((2 * expr.dim, total))
        for name, m in expr.terms.items():
            var = self._vars[name]
            off = offsets[name]
            if var.is_complex:
                a[: expr.dim, off : off + var.size] = m.real
                a[: expr.dim, off + var.size : off + 2 * var.size] = -m.imag
                a[expr.dim :, off : off + var.size] = m.imag
                a[expr.dim :, off + var.size : off + 2 * var.size] = m.real
            else:
                a[: expr.dim, off : off + var.size] = m.real
                a[expr.dim :, off : off + var.size] = m.imag
        b = np.concatenate([expr.const.real, expr.const.imag])
        return a, b

    def _realify_lin(self, lin: LinExpr, offsets, total):
        row = np.zeros(total)
        for name, r in lin.rows.items():
            var = self._vars[name]
            off = offsets[name]
            if var.is_complex:
                row[off : off + var.size] = r.real
                row[off + var.size : off + 2 * var.size] = -r.imag
            else:
                row[off : off + var.size] = r.real
        return row, lin.const

    # ---- solve ----------------------------------------------------------------

    def _assemble(self, epigraph: bool):
        """Realified cone-program data; with ``epigraph`` the quadratic objective
        is lifted into an extra SOC (cone LP form), otherwise kept as (P, q)."""
        offsets, nx = self._layout()
        have_quad = bool(self._quad_obj)
        ntot = nx + (1 if (have_quad and epigraph) else 0)

        row, _ = self._realify_lin(self._lin_obj, offsets, nx)
        c = np.zeros(ntot)
        c[:nx] = -row  # cone programs minimize
        p_mat = q_vec = None
        if have_quad and not epigraph:
            p_mat = np.zeros((nx, nx))
            q_vec = -row.copy()
            for weight, expr in self._quad_obj:
                a, b = self._realify_cexpr(expr, offsets, nx)
                p_mat += 2.0 * weight * a.T @ a
                q_vec += 2.0 * weight * a.T @ b

        g_lin, h_lin = [], []
        socs = []

        def add_soc_sq(a, b, r_row, r_const):
            # ||Ax + b||^2 <= r^T x + r_const  as an SOC of size rows+2
            p = a.shape[0]
            gb = np.zeros((p + 2, ntot))
            hb = np.zeros(p + 2)
            gb[0, : r_row.size] = -r_row
            hb[0] = r_const + 1.0
            gb[1 : p + 1, : a.shape[1]] = -2.0 * a
            hb[1 : p + 1] = 2.0 * b
            gb[p + 1, : r_row.size] = -r_row
            hb[p + 1] = r_const - 1.0
            socs.append((gb, hb))

        for lin, _tag in self._aff_le:
            row, cst = self._realify_lin(lin, offsets, nx)
            g_lin.append(np.concatenate([row, np.zeros(ntot - nx)]))
            h_lin.append(-cst)
        for var in self._vars.values():
            off = offsets[var.name]
            if not var.is_complex:
                if var.lb is not None:
                    for i in range(var.size):
                        row = np.zeros(ntot)
                        row[off + i] = -1.0
                        g_lin.append(row)
                        h_lin.append(-float(var.lb) if np.isscalar(var.lb) else -float(var.lb[i]))
                if var.ub is not None:
                    for i in range(var.size):
                        row = np.zeros(ntot)
                        row[off + i] = 1.0
                        g_lin.append(row)
                        h_lin.append(float(var.ub) if np.isscalar(var.ub) else float(var.ub[i]))

        if have_quad and epigraph:
            blocks_a, blocks_b = [], []
            for weight, expr in self._quad_obj:
                a, b = self._realify_cexpr(expr, offsets, nx)
                blocks_a.append(np.sqrt(weight) * a)
                blocks_b.append(np.sqrt(weight) * b)
            ea = np.hstack([np.vstack(blocks_a), np.zeros((sum(a.shape[0] for a in blocks_a), 1))])
            r_row = np.zeros(ntot)
            r_row[nx] = 1.0
            c[nx] = 1.0
            add_soc_sq(ea, np.concatenate(blocks_b), r_row, 0.0)

        for expr, rhs, _tag in self._sq_le:
            a, b = self._realify_cexpr(expr, offsets, nx)
            a = np.hstack([a, np.zeros((a.shape[0], ntot - nx))])
            r_row, r_const = self._realify_lin(rhs, offsets, nx)
            add_soc_sq(a, b, np.concatenate([r_row, np.zeros(ntot - nx)]), r_const)

        for expr, rhs, _tag in self._norm_le:
            a, b = self._realify_cexpr(expr, offsets, nx)
            p = a.shape[0]
            gb = np.zeros((p + 1, ntot))
            hb = np.zeros(p + 1)
            r_row, r_const = self._realify_lin(rhs, offsets, nx)
            gb[0, :nx] = -r_row
            hb[0] = r_const
            gb[1:, :nx] = -a
            hb[1:] = b
            socs.append((gb, hb))

        # per-row (linear) and per-cone (SOC) equilibration: a uniform positive
        # scaling of a cone block preserves the constraint and conditions the
        # interior-point iterations
        if g_lin:
            g_arr = np.vstack(g_lin)
            h_arr = np.asarray(h_lin, dtype=float)
            sc = np.maximum(np.max(np.abs(g_arr), axis=1), np.abs(h_arr))
            sc = np.where(sc > 0, sc, 1.0)
            g_lin, h_lin = g_arr / sc[:, None], h_arr / sc
        socs = [
            (gb / max(np.max(np.abs(gb)), np.max(np.abs(hb)), 1e-300),
             hb / max(np.max(np.abs(gb)), np.max(np.abs(hb)), 1e-300))
            for gb, hb in socs
        ]

        n_l = len(h_lin) if len(g_lin) else 0
        parts_g = ([g_lin] if n_l else []) + [g for g, _ in socs]
        parts_h = ([h_lin] if n_l else []) + [h for _, h in socs]
        if not parts_g:
            parts_g = [np.zeros((1, ntot))]
            parts_h = [np.ones(1)]
            n_l = 1
        g_mat = np.vstack(parts_g)
        h_vec = np.concatenate(parts_h)
        dims = {"l": n_l, "q": [g.shape[0] for g, _ in socs], "s": []}

        a_eq, b_eq = [], []
        for lin, _tag in self._aff_eq:
            row, cst = self._realify_lin(lin, offsets, nx)
            a_eq.append(np.concatenate([row, np.zeros(ntot - nx)]))
            b_eq.append(-cst)
        eq = (np.vstack(a_eq), np.asarray(b_eq)) if a_eq else None
        return offsets, nx, c, p_mat, q_vec, g_mat, h_vec, dims, eq

    def solve(self, tol: float = 1e-8, max_iters: int = 200) -> SolveOutcome:
        """coneqp on the native quadratic objective, falling back to the
        epigraph cone LP (which certifies infeasibility) when needed."""
        sol = None
        attempts = []
        if self._quad_obj:
            attempts.append(("coneqp", tol))
            attempts.append(("coneqp", 1e-6))
        attempts.append(("conelp", tol))
        attempts.append(("conelp", max(tol, 1e-7)))
        attempts.append(("conelp-ldl", 1e-6))

        last_err = None
        status = None
        offsets = nx = None
        for method, attempt_tol in attempts:
            epigraph = not method.startswith("coneqp")
            offsets, nx, c, p_mat, q_vec, g_mat, h_vec, dims, eq = self._assemble(epigraph)
            opts = {
                "show_progress": False,
                "maxiters": int(max_iters),
                "abstol": attempt_tol,
                "reltol": attempt_tol,
                "feastol": attempt_tol,
            }
            kwargs = {}
            if eq is not None:
                kwargs["A"] = cvxopt.matrix(eq[0])
                kwargs["b"] = cvxopt.matrix(eq[1])
            try:
                if not epigraph:
                    sol = cvxopt.solvers.coneqp(
                        cvxopt.matrix(p_mat), cvxopt.matrix(q_vec),
                        cvxopt.matrix(g_mat), cvxopt.matrix(h_vec), dims,
                        options=opts, **kwargs,
                    )
                else:
                    scale = max(np.max(np.abs(c)), 1e-300)
                    sol = cvxopt.solvers.conelp(
                        cvxopt.matrix(c / scale), cvxopt.matrix(g_mat),
                        cvxopt.matrix(h_vec), dims, options=opts,
                        **({"kktsolver": "ldl"} if method.endswith("ldl") else {}),
                        **kwargs,
                    )
            except (ValueError, ZeroDivisionError, ArithmeticError) as exc:
                sol, last_err = None, exc
                continue
            status = sol["status"]
            if status in ("optimal", "primal infeasible", "dual infeasible"):
                break
            if status == "unknown" and sol["x"] is not None:
                break  # near-solution; judged by the violation check below
            sol = None

        if sol is None:
            return SolveOutcome("max_iters", {}, float("nan"), float("inf"),
                                {"error": str(last_err), "problem": self.name})
        if status == "primal infeasible":
            return SolveOutcome("infeasible", {}, float("nan"), float("inf"),
                                {"solver_status": status, "problem": self.name})
        if status == "dual infeasible":
            return SolveOutcome("max_iters", {}, float("nan"), float("inf"),
                                {"solver_status": "unbounded", "problem": self.name})
        if sol["x"] is None:
            return SolveOutcome("max_iters", {}, float("nan"), float("inf"),
                                {"solver_status": status, "problem": self.name})

        x = np.array(sol["x"]).ravel()
        assignment = {}
        for var in self._vars.values():
            off = offsets[var.name]
            if var.is_complex:
                assignment[var.name] = x[off : off + var.size] + 1j * x[off + var.size : off + 2 * var.size]
            else:
                assignment[var.name] = x[off : off + var.size].copy()

        viol = self._violation(assignment)
        gap = sol.get("relative gap")
        kkt = max(viol, float(gap) if gap is not None else 0.0)
        out_status = "optimal"
        if status != "optimal":
            out_status = "optimal" if (viol <= 1e-6 and (gap or 1.0) <= 1e-4) else "max_iters"
        objective = self.objective_at(assignment) if out_status == "optimal" else float("nan")
        return SolveOutcome(
            out_status,
            assignment,
            objective,
            kkt,
            {"solver_status": status, "violation": viol, "problem": self.name},
        )

    # ---- evaluation -----------------------------------------------------------

    def _eval_cexpr(self, expr: ComplexExpr, assignment) -> np.ndarray:
        out = expr.const.copy()
        for name, m in expr.terms.items():
            out = out + m @ assignment[name]
        return out

    def _eval_lin(self, lin: LinExpr, assignment) -> float:
        out = lin.const
        for name, r in lin.rows.items():
            out += float(np.real(np.sum(r * assignment[name])))
        return out

    def objective_at(self, assignment) -> float:
        val = self._eval_lin(self._lin_obj, assignment)
        for weight, expr in self._quad_obj:
            val -= weight * float(np.sum(np.abs(self._eval_cexpr(expr, assignment)) ** 2))
        return val

    def _violation(self, assignment) -> float:
        worst = 0.0
        for lin, _ in self._aff_le:
            worst = max(worst, self._eval_lin(lin, assignment))
        for lin, _ in self._aff_eq:
            worst = max(worst, abs(self._eval_lin(lin, assignment)))
        for expr, rhs, _ in self._sq_le:
            lhs = float(np.sum(np.abs(self._eval_cexpr(expr, assignment)) ** 2))
            worst = max(worst, lhs - self._eval_lin(rhs, assignment))
        for expr, rhs, _ in self._norm_le:
            lhs = float(np.linalg.norm(self._eval_cexpr(expr, assignment)))
            worst = max(worst, lhs - self._eval_lin(rhs, assignment))
        for var in self._vars.values():
            if not var.is_complex:
                v = assignment[var.name]
                if var.lb is not None:
                    worst = max(worst, float(np.max(np.asarray(var.lb) - v)))
                if var.ub is not None:
                    worst = max(worst, float(np.max(v - np.asarray(var.ub))))
        return worst

    def dump(self) -> str:
        lines = [f"ConvexProblem {self.name!r}"]
        for var in self._vars.values():
            kind = "complex" if var.is_complex else "real"
            lines.append(f"  var {var.name}: {kind}[{var.size}] lb={var.lb} ub={var.ub}")
        lines.append(f"  quad objective terms: {len(self._quad_obj)}")
        for expr, _rhs, tag in self._sq_le:
            lines.append(f"  sq_le[{expr.dim}] {tag}")
        for expr, _rhs, tag in self._norm_le:
            lines.append(f"  norm_le[{expr.dim}] {tag}")
        for _lin, tag in self._aff_le:
            lines.append(f"  aff_le {tag}")
        for _lin, tag in self._aff_eq:
            lines.append(f"  aff_eq {tag}")
        return "\n".join(lines)


def _as_lin(x) -> LinExpr:
    return x if isinstance(x, LinExpr) else LinExpr.constant(float(x))


def stack(exprs: list[ComplexExpr], weights=None) -> ComplexExpr:
    """Vertically stack expressions; ||stack||^2 = sum_i w_i ||expr_i||^2."""
    if not exprs:
        raise ValueError("nothing to stack")
    weights = [1.0] * len(exprs) if weights is None else list(weights)
    dim = sum(e.dim for e in exprs)
    terms: dict[str, np.ndarray] = {}
    const = np.zeros(dim, dtype=complex)
    sizes: dict[str, int] = {}
    for e in exprs:
        for name, m in e.terms.items():
            sizes[name] = m.shape[1]
    row = 0
    for w, e in zip(weights, exprs):
        s = np.sqrt(w)
        const[row : row + e.dim] = s * e.const
        for name, m in e.terms.items():
            if name not in terms:
                terms[name] = np.zeros((dim, sizes[name]), dtype=complex)
            terms[name][row : row + e.dim, :] = s * m
        row += e.dim
    return ComplexExpr(dim, terms, const)
