"""SCAD-penalized monotone-spline quantile regression for one equation.

The coefficient block ``gamma`` has one row per barycentric vertex: row 0 is
the intercept curve ``gamma_0`` and row ``k`` the curve attached to lag slot
``k``.  The fitted conditional quantile at design coordinates ``c`` and level
``tau`` is ``c^T gamma b(tau)``.

Optimization works on ``(gamma_0, delta_k = gamma_k - gamma_0)``.  Because the
coordinates sum to one, predictions become ``x^T Z b(tau)`` with
``x = (1, c_1, ..., c_N)``, and the group penalty acts on single rows.

Outer loop: local linear approximation of SCAD started from the unpenalized
fit, i.e. a weighted group lasso with weights ``s'(||delta_k||)`` from the
previous iterate.  Inner loop: Huber-smoothed check loss (width shrunk in
stages) minimized by box-constrained L-BFGS in the ``gamma`` parametrization,
where the monotonicity cone is a box, followed by an accelerated
proximal-gradient polish whose proximal map (group shrinkage in the Gram
metric plus cone projection) is evaluated exactly.  The polish is what sets
dropped groups exactly to zero.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .basis import SplineBasis, func_norm
from .panel import LaggedDesign
from .simplex import CoordinateSystem

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuantileGrid:
    """Equally spaced levels ``l / (L + 1)``, ``l = 1..L``."""

    L: int

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be positive")

    @property
    def taus(self) -> np.ndarray:
        return np.arange(1, self.L + 1) / (self.L + 1.0)


@dataclass(frozen=True)
class ScadPenalty:
    lam: float
    a: float = 3.7

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.a <= 2:
            raise ValueError("SCAD requires a > 2")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < 0):
            raise ValueError("SCAD is defined for nonnegative arguments")
        lam, a = self.lam, self.a
        mid = -(x**2 - 2 * a * lam * x + lam**2) / (2 * (a - 1))
        out = np.where(x <= lam, lam * x, np.where(x <= a * lam, mid, (a + 1) * lam**2 / 2))
        return out if out.ndim else float(out)

    def derivative(self, x):
        """Right derivative on ``[0, inf)``; used as the LLA weight."""
        x = np.asarray(x, dtype=float)
        lam, a = self.lam, self.a
        out = np.where(x <= lam, lam, np.maximum(a * lam - x, 0.0) / (a - 1))
        return out if out.ndim else float(out)


def check_loss(u, tau):
    """``rho_tau(u) = u * (tau - 1{u <= 0})``."""
    u = np.asarray(u, dtype=float)
    out = u * (tau - (u <= 0))
    return out if out.ndim else float(out)


def scad(x, pen: ScadPenalty):
    return pen.value(x)


@dataclass(frozen=True)
class EquationData:
    """Everything the solver needs for equation ``i``.

    coords : (T_eff, N+1) barycentric coordinates, ``c0`` first.
    y : (T_eff,) responses.
    taus : (L,) quantile levels.
    B : (L, H) basis evaluated at ``taus``.
    """

    coords: np.ndarray
    y: np.ndarray
    taus: np.ndarray
    B: np.ndarray
    equation_index: int = 0

    @classmethod
    def build(cls, design: LaggedDesign, cs: CoordinateSystem, basis: SplineBasis,
              grid: QuantileGrid, i: int) -> "EquationData":
        if design.N != cs.N:
            raise ValueError("design and coordinate system disagree on N")
        taus = grid.taus
        return cls(coords=cs.coordinates(design.rows), y=design.responses[:, i].copy(),
                   taus=taus, B=basis.design(taus), equation_index=i)

    @property
    def T_eff(self) -> int:
        return self.y.shape[0]

    @property
    def N(self) -> int:
        return self.coords.shape[1] - 1

    @property
    def H(self) -> int:
        return self.B.shape[1]

    def predict(self, gamma: np.ndarray) -> np.ndarray:
        """Fitted quantiles, shape ``(T_eff, L)``."""
        return self.coords @ gamma @ self.B.T


def loss_value(gamma: np.ndarray, data: EquationData) -> float:
    """Average check loss over the sample and the quantile grid."""
    U = data.y[:, None] - data.predict(gamma)
    return float(np.mean(U * (data.taus - (U <= 0))))


def group_norms(gamma: np.ndarray, G: np.ndarray) -> np.ndarray:
    return func_norm(G, gamma[1:] - gamma[0])


def objective(gamma: np.ndarray, data: EquationData, pen: ScadPenalty, G: np.ndarray) -> float:
    """Average check loss plus ``sum_k scad(||b^T (gamma_k - gamma_0)||_2)``."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (data.N + 1, data.H):
        raise ValueError(f"gamma has shape {gamma.shape}, expected {(data.N + 1, data.H)}")
    pen_val = float(np.sum(pen.value(group_norms(gamma, G)))) if pen.lam > 0 else 0.0
    return loss_value(gamma, data) + pen_val


@dataclass
class SolverOptions:
    tol: float = 1e-7
    max_iter: int = 5000
    max_outer: int = 25
    smoothing: tuple = (1e-2, 1e-3)
    eps_zero: float = 1e-6
    check_every: int = 10
    qn_ftol: float = 1e-10
    polish_iter: int = 500


@dataclass
class SqvarFit:
    gamma: np.ndarray
    lambda_used: float
    equation_index: int
    objective_value: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return bool(self.diagnostics.get("converged", True))

    def to_dict(self) -> dict:
        return {
            "equation_index": self.equation_index,
            "lambda": self.lambda_used,
            "objective": self.objective_value,
            "gamma": self.gamma.tolist(),
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SqvarFit":
        return cls(gamma=np.asarray(d["gamma"], float), lambda_used=float(d["lambda"]),
                   equation_index=int(d["equation_index"]),
                   objective_value=float(d["objective"]),
                   diagnostics=dict(d.get("diagnostics", {})))


# --------------------------------------------------------------------------
# proximal machinery


class _GroupProx:
    """Euclidean prox of ``w * ||delta||_G`` applied row-wise."""

    def __init__(self, G: np.ndarray):
        lam, Q = np.linalg.eigh(G)
        if lam[0] <= 0:
            raise ValueError("basis Gram matrix must be positive definite")
        self.lam = lam
        self.Q = Q
        self.alpha = 1.0 / lam

    def __call__(self, V: np.ndarray, w: np.ndarray) -> np.ndarray:
        out = V.copy()
        pos = w > 0
        if not np.any(pos):
            return out
        Vt = V[pos] @ self.Q
        beta = Vt**2 / self.lam
        total = beta.sum(axis=1)
        wp = w[pos]
        kill = total <= wp**2
        res = np.zeros_like(Vt)
        live = ~kill
        if np.any(live):
            b = beta[live]
            ww = wp[live]
            mu = np.zeros(b.shape[0])
            for _ in range(60):
                den = self.alpha + mu[:, None]
                s2 = np.sum(b / den**2, axis=1)
                s3 = np.sum(b / den**3, axis=1)
                nrm = np.sqrt(s2)
                psi = 1.0 / nrm - mu / ww
                dpsi = s3 / nrm**3 - 1.0 / ww
                step = psi / dpsi
                mu = mu - step
                if np.all(np.abs(step) <= 1e-15 * np.maximum(mu, 1e-300)):
                    break
            res[live] = Vt[live] / (1.0 + mu[:, None] * self.lam)
        out[pos] = res @ self.Q.T
        return out


def _project_cone(Z: np.ndarray) -> np.ndarray:
    """Euclidean projection onto ``{gamma_0[1:] >= 0, (gamma_0 + delta_k)[1:] >= 0}``."""
    out = Z.copy()
    a0 = Z[0, 1:]
    d = Z[1:, 1:]
    if np.all(a0 >= 0) and np.all(a0 + d >= 0):
        return out
    N = d.shape[0]
    s = np.sort(-d, axis=0)[::-1]  # descending per column
    S = np.vstack([np.zeros((1, s.shape[1])), np.cumsum(s, axis=0)])
    m = np.arange(N + 1)[:, None]
    cand = (a0 + S) / (1.0 + m)
    upper = np.vstack([np.full((1, s.shape[1]), np.inf), s])
    lower = np.vstack([s, np.full((1, s.shape[1]), -np.inf)])
    ok = (cand <= upper + 1e-15 * np.abs(upper)) & (cand >= lower - 1e-15 * np.abs(lower))
    idx = np.argmax(ok, axis=0)
    a = np.maximum(cand[idx, np.arange(cand.shape[1])], 0.0)
    out[0, 1:] = a
    out[1:, 1:] = np.maximum(d, -a)
    return out


def _feasible(Z: np.ndarray) -> bool:
    return bool(np.all(Z[0, 1:] >= 0) and np.all(Z[0, 1:] + Z[1:, 1:] >= 0))


def _prox(V: np.ndarray, w: np.ndarray, gprox: _GroupProx, max_iter: int = 500) -> np.ndarray:
    x = V.copy()
    x[1:] = gprox(V[1:], w)
    if _feasible(x):
        return x
    # Dykstra-type alternation for the prox of a sum of two functions
    x = V.copy()
    p = np.zeros_like(V)
    q = np.zeros_like(V)
    scale = 1.0 + np.abs(V).max()
    for _ in range(max_iter):
        yv = x + p
        y = yv.copy()
        y[1:] = gprox(yv[1:], w)
        p = yv - y
        x_new = _project_cone(y + q)
        q = y + q - x_new
        if np.max(np.abs(x_new - x)) <= 1e-13 * scale:
            x = x_new
            break
        x = x_new
    return x


def _to_gamma(Z: np.ndarray) -> np.ndarray:
    g = Z.copy()
    g[0, 1:] = np.maximum(g[0, 1:], 0.0)
    g[1:] = g[0] + Z[1:]
    g[1:, 1:] = np.maximum(g[1:, 1:], 0.0)
    return g


def _to_Z(gamma: np.ndarray) -> np.ndarray:
    Z = gamma.copy()
    Z[1:] = gamma[1:] - gamma[0]
    return Z


class _Problem:
    """Precomputed pieces shared by every inner solve on one data set."""

    def __init__(self, data: EquationData, G: np.ndarray):
        self.data = data
        self.G = G
        X = data.coords.copy()
        X[:, 0] = 1.0
        self.X = X
        self.Xt = np.ascontiguousarray(X.T)
        self.B = data.B
        self.y = data.y
        self.tc = data.taus - 0.5
        self.nobs = data.T_eff * data.taus.size
        ax = np.linalg.eigvalsh(X.T @ X / data.T_eff)[-1]
        ab = np.linalg.eigvalsh(data.B.T @ data.B / data.taus.size)[-1]
        self.curv = ax * ab
        sd = float(np.std(data.y))
        # smoothing widths are relative to the response spread; a constant
        # response has none, so the width drops to a negligible floor
        self.scale = sd if sd > 0 else 1e-6 * max(1.0, float(np.abs(data.y).max()))
        self.gprox = _GroupProx(G)
        self.Ginv = np.linalg.inv(G)

    def residuals(self, Z):
        return self.y[:, None] - (self.X @ Z) @ self.B.T

    def smooth_value(self, Z, h, w):
        U = self.residuals(Z)
        A = np.abs(U)
        hub = np.where(A <= h, U * U / (2 * h) + h / 2, A)
        val = float(np.sum(0.5 * hub + self.tc * U)) / self.nobs
        if np.any(w > 0):
            # infinite weights pin a group to zero, so they add nothing
            nz = (w > 0) & np.isfinite(w)
            if nz.any():
                val += float(np.sum(w[nz] * func_norm(self.G, Z[1:][nz])))
        return val

    def grad(self, Z, h):
        U = self.residuals(Z)
        Psi = 0.5 * np.clip(U / h, -1.0, 1.0) + self.tc
        return -(self.Xt @ Psi @ self.B) / self.nobs

    def quasi_newton(self, gamma0, w, opts: SolverOptions):
        """Box-constrained L-BFGS on the smoothed problem in the ``gamma`` parametrization.

        Groups with infinite weight are tied to row 0 by folding their
        coordinate into ``c0``; the group norm is smoothed as
        ``sqrt(q + eps^2) - eps`` with ``eps`` equal to the Huber width.
        """
        from scipy.optimize import minimize

        C = self.data.coords
        H = self.B.shape[1]
        tied = np.isinf(w)
        free = np.flatnonzero(~tied)
        Ce = np.column_stack([C[:, 0] + C[:, 1:][:, tied].sum(axis=1), C[:, 1:][:, free]])
        wf = w[free]
        pen = wf > 0
        R = Ce.shape[1]
        bounds = [(None, None) if h == 0 else (0.0, None) for _ in range(R) for h in range(H)]
        x = np.vstack([gamma0[0], gamma0[1:][free]])
        x[:, 1:] = np.maximum(x[:, 1:], 0.0)
        x = x.ravel()
        nit = 0
        ok = True
        for h_rel in opts.smoothing:
            h = h_rel * self.scale
            eps = h

            def fun(v):
                g = v.reshape(R, H)
                U = self.y[:, None] - (Ce @ g) @ self.B.T
                A = np.abs(U)
                val = float(np.sum(0.5 * np.where(A <= h, U * U / (2 * h) + h / 2, A)
                                   + self.tc * U)) / self.nobs
                Psi = 0.5 * np.clip(U / h, -1.0, 1.0) + self.tc
                grad = -(Ce.T @ Psi @ self.B) / self.nobs
                if np.any(pen):
                    D = g[1:][pen] - g[0]
                    GD = D @ self.G
                    q = np.sqrt(np.maximum(np.sum(D * GD, axis=1), 0.0) + eps * eps)
                    val += float(np.sum(wf[pen] * (q - eps)))
                    gd = (wf[pen] / q)[:, None] * GD
                    grad[1:][pen] += gd
                    grad[0] -= gd.sum(axis=0)
                return val, grad.ravel()

            res = minimize(fun, x, jac=True, method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": opts.max_iter, "maxcor": 20, "ftol": opts.qn_ftol,
                                    "gtol": 1e-12 * max(1.0, self.scale)})
            x = res.x
            nit += int(res.nit)
            ok = ok and (res.status == 0 or res.nit < opts.max_iter)
        g = x.reshape(R, H)
        gamma = np.tile(g[0], (self.data.N + 1, 1))
        gamma[1:][free] = g[1:]
        return gamma, {"qn_iterations": nit, "qn_converged": bool(ok)}

    def zero_groups(self, gamma, w, h):
        """Groups for which zero satisfies the subgradient condition.

        Group ``k`` is tested with its own row reset to row 0 and the others
        fixed: zero is optimal when the loss gradient in ``delta_k`` has
        Gram-dual norm at most ``w_k``.
        """
        tie = np.isinf(w)
        for k in np.flatnonzero((w > 0) & ~tie):
            g = gamma.copy()
            g[k + 1] = g[0]
            gk = self.grad(_to_Z(g), h)[k + 1]
            if float(gk @ self.Ginv @ gk) <= w[k] ** 2:
                tie[k] = True
        return tie

    def inner(self, Z0, w, opts: SolverOptions, stages=None):
        """Minimize smoothed loss + sum_k w_k ||delta_k||_G from ``Z0``."""
        Z = _prox(Z0, np.where(np.isinf(w), np.inf, 0.0), self.gprox)
        iters = 0
        step_norm = 0.0
        stages = opts.smoothing if stages is None else stages
        converged = True
        for h_rel in stages:
            h = h_rel * self.scale
            Lip = self.curv / (2.0 * h)
            t = 1.0 / Lip
            tw = t * w
            x = Z
            yk = Z
            theta = 1.0
            f_old = self.smooth_value(x, h, w)
            stage_done = False
            for k in range(1, opts.max_iter + 1):
                g = self.grad(yk, h)
                x_new = _prox(yk - t * g, tw, self.gprox)
                # gradient-based adaptive restart
                if np.sum((yk - x_new) * (x_new - x)) > 0:
                    theta = 1.0
                    yk = x
                    continue
                theta_new = 0.5 * (1 + np.sqrt(1 + 4 * theta * theta))
                yk = x_new + ((theta - 1) / theta_new) * (x_new - x)
                step_norm = float(np.max(np.abs(x_new - x)))
                x = x_new
                theta = theta_new
                iters += 1
                if k % opts.check_every == 0:
                    f_new = self.smooth_value(x, h, w)
                    if abs(f_old - f_new) <= opts.tol * max(abs(f_new), 1e-12):
                        stage_done = True
                        break
                    f_old = f_new
            Z = x
            if not stage_done:
                converged = False
        g = self.grad(Z, h)
        kkt = float(np.max(np.abs(_prox(Z - t * g, tw, self.gprox) - Z)) / t)
        return Z, {"iterations": iters, "step_norm": step_norm, "kkt_residual": kkt,
                   "converged": converged}


def _solve(prob: _Problem, start: np.ndarray, w: np.ndarray, opts: SolverOptions):
    """Quasi-Newton solve, then exact proximal-gradient polish at the final width.

    The polish step is what produces exact group zeros and the reported
    stationarity residual.
    """
    gamma, qd = prob.quasi_newton(start, w, opts)
    tie = prob.zero_groups(gamma, w, opts.smoothing[-1] * prob.scale)
    if np.any(tie & ~np.isinf(w)):
        gamma, qd2 = prob.quasi_newton(gamma, np.where(tie, np.inf, w), opts)
        qd = {"qn_iterations": qd["qn_iterations"] + qd2["qn_iterations"],
              "qn_converged": qd["qn_converged"] and qd2["qn_converged"]}
    polish = SolverOptions(tol=opts.tol, max_iter=opts.polish_iter, check_every=opts.check_every)
    Z, diag = prob.inner(_to_Z(gamma), w, polish, stages=(opts.smoothing[-1],))
    if np.any(np.isinf(w)):
        Z[1:][np.isinf(w)] = 0.0
    diag = dict(diag, **qd)
    diag["iterations"] += qd["qn_iterations"]
    # the polish may stop on its iteration cap; the quasi-Newton status decides convergence
    diag["converged"] = qd["qn_converged"]
    return _to_gamma(Z), diag


def _snap(gamma: np.ndarray, G: np.ndarray, eps_zero: float) -> np.ndarray:
    g = gamma.copy()
    norms = group_norms(g, G)
    g[1:][norms <= eps_zero] = g[0]
    return g


def marginal_start(data: EquationData) -> np.ndarray:
    """Collapsed starting point: the marginal empirical quantile curve on the basis."""
    from scipy.optimize import lsq_linear

    q = np.quantile(data.y, data.taus)
    H = data.H
    lb = np.r_[-np.inf, np.zeros(H - 1)]
    sol = lsq_linear(data.B, q, bounds=(lb, np.full(H, np.inf)), method="bvls")
    g0 = sol.x
    g0[1:] = np.maximum(g0[1:], 0.0)
    return np.tile(g0, (data.N + 1, 1))


def _boundary_warnings(data: EquationData) -> int:
    return int(np.sum(np.any(data.coords < -1e-12, axis=1)))


def _finish(gamma, data, pen, G, opts, diag) -> SqvarFit:
    gamma = _snap(gamma, G, opts.eps_zero)
    diag = dict(diag)
    diag["boundary_rows"] = _boundary_warnings(data)
    return SqvarFit(gamma=gamma, lambda_used=pen.lam, equation_index=data.equation_index,
                    objective_value=objective(gamma, data, pen, G), diagnostics=diag)


def fit_unpenalized(data: EquationData, G: np.ndarray, opts: SolverOptions | None = None,
                    init: np.ndarray | None = None) -> SqvarFit:
    """Cone-constrained fit with no penalty (lambda = 0)."""
    opts = opts or SolverOptions()
    prob = _Problem(data, G)
    start = marginal_start(data) if init is None else init
    gamma, diag = _solve(prob, start, np.zeros(data.N), opts)
    diag["outer_iterations"] = 1
    fit = SqvarFit(gamma=gamma, lambda_used=0.0, equation_index=data.equation_index,
                   objective_value=objective(gamma, data, ScadPenalty(0.0), G),
                   diagnostics=dict(diag, boundary_rows=_boundary_warnings(data)))
    return fit


def fit_collapsed(data: EquationData, G: np.ndarray, opts: SolverOptions | None = None) -> np.ndarray:
    """Best intercept-only coefficient block (every lag row equal to row 0)."""
    opts = opts or SolverOptions()
    prob = _Problem(data, G)
    gamma, _ = _solve(prob, marginal_start(data), np.full(data.N, np.inf), opts)
    gamma[1:] = gamma[0]
    return gamma


def fit_equation(data: EquationData, pen: ScadPenalty, G: np.ndarray,
                 opts: SolverOptions | None = None, *, init: np.ndarray | None = None,
                 start: np.ndarray | None = None) -> SqvarFit:
    """Penalized fit of one equation.

    Parameters
    ----------
    init : ndarray, optional
        Coefficient block supplying the first LLA weights.  Defaults to the
        unpenalized fit, computed here if absent.
    start : ndarray, optional
        Starting iterate for the first inner solve (defaults to ``init``).
    """
    opts = opts or SolverOptions()
    if pen.lam == 0:
        return fit_unpenalized(data, G, opts, init=start if start is not None else init)
    prob = _Problem(data, G)
    if init is None:
        init = fit_unpenalized(data, G, opts).gamma
    current = init if start is None else start
    weights_from = init
    history = [objective(init, data, pen, G)]
    best = init
    best_val = history[0]
    total_iter = 0
    diag = {}
    converged = True
    for outer in range(opts.max_outer):
        w = np.asarray(pen.derivative(group_norms(weights_from, G)), dtype=float)
        gamma, diag = _solve(prob, current, w, opts)
        total_iter += diag["iterations"]
        converged = converged and diag["converged"]
        gamma = _snap(gamma, G, opts.eps_zero)
        current = gamma
        val = objective(gamma, data, pen, G)
        if val < best_val:
            history.append(val)
            improvement = best_val - val
            best, best_val = gamma, val
            if improvement <= opts.tol * max(abs(val), 1e-12):
                break
        else:
            break
        weights_from = gamma
    diag = dict(diag, iterations=total_iter, outer_iterations=outer + 1,
                objective_history=[float(v) for v in history], converged=converged)
    return _finish(best, data, pen, G, opts, diag)
