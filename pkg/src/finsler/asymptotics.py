"""Blow-up rate functions, neck constants, and the delta-sweep harness.

The critical exponent is ``p_c = (N + 1) / 2``.  Writing ``s = p - p_c``:

* gradient rate ``Phi_N``: ``delta^{-(N-1)/2}`` for ``s > 0``,
  ``1 / (delta^{p-1} |ln delta|)`` for ``s = 0`` and ``delta^{-(p-1)}`` for ``s < 0``;
* potential-gap rate ``Psi_N``: ``delta^{s}``, ``1 / ln(1/delta)`` or ``1``.

In every regime ``Phi_N = Psi_N / delta^{p-1}``.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats
from scipy.special import beta as beta_fn
from scipy.special import gamma as gamma_fn

from .geometry import TwoInclusionConfig, upper_graph

log = logging.getLogger(__name__)

REGIME_TOL = 1e-12


def critical_exponent(N: int) -> float:
    return 0.5 * (N + 1)


def regime(N: int, p: float) -> str:
    """``"power"`` above the critical exponent, ``"log"`` at it, ``"sub"`` below."""
    s = p - critical_exponent(N)
    if abs(s) <= REGIME_TOL:
        return "log"
    return "power" if s > 0 else "sub"


def _check_args(delta, N, p):
    d = np.asarray(delta, dtype=float)
    if np.any(d <= 0) or np.any(d >= 1):
        raise ValueError("delta must lie in (0, 1)")
    if not 1 < p <= N:
        raise ValueError(f"p must lie in (1, N], got p={p}, N={N}")
    return d


def psi_N(delta, N: int, p: float):
    """Rate of ``(U1 - U2)^{p-1}``."""
    d = _check_args(delta, N, p)
    reg = regime(N, p)
    if reg == "power":
        out = d ** (p - critical_exponent(N))
    elif reg == "log":
        out = 1.0 / np.log(1.0 / d)
    else:
        out = np.ones_like(d)
    return out if out.ndim else float(out)


def phi_N(delta, N: int, p: float):
    """Rate of ``max H(grad u)^{p-1}``."""
    d = _check_args(delta, N, p)
    reg = regime(N, p)
    if reg == "power":
        out = d ** (-0.5 * (N - 1))
    elif reg == "log":
        out = 1.0 / (d ** (p - 1.0) * np.abs(np.log(d)))
    else:
        out = d ** (-(p - 1.0))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class RateFunctions:
    N: int
    p: float

    @property
    def regime(self) -> str:
        return regime(self.N, self.p)

    def phi(self, delta):
        return phi_N(delta, self.N, self.p)

    def psi(self, delta):
        return psi_N(delta, self.N, self.p)

    def gradient_exponent(self) -> float | None:
        """Exponent ``e`` with ``max H(grad u) ~ delta^e``; ``None`` at the critical exponent."""
        reg = self.regime
        if reg == "power":
            return -0.5 * (self.N - 1) / (self.p - 1.0)
        if reg == "sub":
            return -1.0
        return None


# -- K_{N,p} and the neck integral ---------------------------------------------------------


def sphere_area(n: int) -> float:
    """Surface measure of the unit sphere ``S^n`` in ``R^{n+1}`` (``S^0`` has two points)."""
    return float(2.0 * math.pi ** ((n + 1) / 2) / gamma_fn((n + 1) / 2))


def truncated_radial_integral(N: int, p: float, T: float) -> float:
    """``int_{|y| < T} (1 + |y|^2)^{1-p} dy`` over ``R^{N-1}``, by radial quadrature."""
    f = lambda t: t ** (N - 2) * (1.0 + t * t) ** (1.0 - p)  # noqa: E731
    if not np.isfinite(T):
        val, _ = integrate.quad(f, 0.0, np.inf, epsabs=0.0, epsrel=1e-12, limit=400)
        return sphere_area(N - 2) * val
    edges = np.concatenate([[0.0], np.geomspace(1e-3, max(T, 2e-3), 40)])
    edges = edges[edges <= T]
    if edges[-1] < T:
        edges = np.append(edges, T)
    val = sum(integrate.quad(f, a, b, epsabs=0.0, epsrel=1e-13, limit=200)[0] for a, b in zip(edges[:-1], edges[1:]))
    return sphere_area(N - 2) * val


def K_Np(N: int, p: float, c: float | None = None, w: float | None = None, delta: float | None = None) -> float:
    """Normalised neck constant.

    Above the critical exponent this is the convergent integral
    ``int_{R^{N-1}} (1 + |y|^2)^{1-p} dy``.  At the critical exponent it is the
    limit of the truncated integral over ``|y| < (c/delta)^{1/2} w`` divided by
    ``ln(1/delta)``, namely ``|S^{N-2}| / 2``.  Below it the truncated integral
    grows like a power of ``1/delta`` and the normalised limit depends on
    ``c`` and ``w``, which must then be given.

    With ``delta`` given (and ``c``, ``w``) the finite-``delta`` normalised
    truncated value is returned instead of the limit.
    """
    # a pure integral: any p > 1 is accepted, including p > N
    if not p > 1:
        raise ValueError(f"p must exceed 1, got {p}")
    reg = regime(N, p)
    if delta is not None:
        if c is None or w is None:
            raise ValueError("finite-delta value needs c and w")
        T = math.sqrt(c / delta) * w
        norm = delta ** (critical_exponent(N) - p) * psi_N(delta, N, p)
        return norm * truncated_radial_integral(N, p, T)
    if reg == "power":
        return truncated_radial_integral(N, p, np.inf)
    if reg == "log":
        return 0.5 * sphere_area(N - 2)
    if c is None or w is None:
        raise ValueError("below the critical exponent K depends on c and w; both are required")
    k = N + 1 - 2 * p
    return sphere_area(N - 2) * c ** (0.5 * k) * w**k / k


def K_Np_closed_form(N: int, p: float) -> float:
    """Beta-function value of the convergent integral (power regime only)."""
    a = 0.5 * (N - 1)
    return sphere_area(N - 2) * 0.5 * beta_fn(a, p - 1.0 - a)


def default_c(config: TwoInclusionConfig, tau: float = 0.0) -> float:
    return (1.0 + tau) * (config.R1 + config.R2) / (2.0 * config.R1 * config.R2)


def neck_integral_hat_I(config: TwoInclusionConfig, delta: float, w: float, c: float | None = None) -> float:
    """Surface integral of ``(delta + c Q x'.x')^{1-p}`` over ``dD1`` inside the neck (2-D).

    The boundary of ``D1`` is the graph of its upper profile; the arc-length
    element ``|grad H0| / |d_N H0|`` follows from the implicit function theorem.
    """
    if config.N != 2:
        raise NotImplementedError("the neck quadrature is implemented in 2-D")
    c = default_c(config) if c is None else c
    # the outer domain plays no role here, so it is rebuilt for the new gap
    cfg = config if config.delta == delta else config.replace(delta=delta, half_width=None)
    H0 = cfg.H0
    Q = float(cfg.Q[0, 0])
    p = cfg.p
    D1 = cfg.D1
    X = w / math.sqrt(Q)

    def integrand(x1):
        u = (x1 - D1.center[0]) / D1.radius
        y = D1.center[1] + D1.radius * upper_graph(H0, u, +1.0, xtol=1e-13)
        g = H0.gradient(np.array([x1, y]) - D1.center)
        ds = math.hypot(g[0], g[1]) / abs(g[1])
        return ds / (delta + c * Q * x1 * x1) ** (p - 1.0)

    scale = math.sqrt(delta / (c * Q))
    pts = np.unique(np.clip(np.concatenate([[0.0], scale * np.geomspace(0.1, 1e4, 25)]), 0, X))
    pts = np.append(pts[pts < X], X)
    half = sum(integrate.quad(integrand, a, b, epsabs=0.0, epsrel=1e-10, limit=100)[0]
               for a, b in zip(pts[:-1], pts[1:]))
    if np.allclose(D1.center[0], 0.0) and _is_even(H0):
        return 2.0 * half
    pts_n = -pts[::-1]
    return half + sum(integrate.quad(integrand, a, b, epsabs=0.0, epsrel=1e-10, limit=100)[0]
                      for a, b in zip(pts_n[:-1], pts_n[1:]))


def _is_even(H0) -> bool:
    # every built-in family is symmetric under x1 -> -x1 when A is diagonal
    if H0.kind == "quadratic":
        return abs(H0.A[0, 1]) == 0.0
    return True


def neck_integral_asymptotic(config: TwoInclusionConfig, delta: float, w: float, c: float | None = None) -> float:
    """Leading-order form ``(c |Q|)^{-(N-1)/2} K_{N,p} / Psi_N(delta)``.

    ``grad H0(P)`` is parallel to ``e_N`` at the touching point, so the
    arc-length factor ``|grad H0| / |d_N H0|`` of the graph tends to one there
    and no ``|d_N H0(P)|^{-1}`` prefactor survives.
    """
    c = default_c(config) if c is None else c
    N, p = config.N, config.p
    detQ = float(np.linalg.det(config.Q))
    K = K_Np(N, p, c, w) if regime(N, p) == "sub" else K_Np(N, p)
    return K / ((c * detQ) ** (0.5 * (N - 1)) * psi_N(delta, N, p))


# -- potential gap -----------------------------------------------------------------------------


def C_star(R0: float, Q, R1: float, R2: float, N: int, C_hat: float = 1.0) -> float:
    """``((R1+R2)/(2R1R2))^{(N-1)/2} |Q|^{(N-1)/2} |R0| C_hat``."""
    detQ = float(np.linalg.det(np.atleast_2d(Q)))
    k = 0.5 * (N - 1)
    return ((R1 + R2) / (2.0 * R1 * R2)) ** k * detQ**k * abs(R0) * C_hat


def predict_gap(R0: float, Q, R1: float, R2: float, delta: float, tau: float, N: int, p: float,
                C_hat: float = 1.0) -> tuple[float, float]:
    """Interval ``[(1-tau) C* Psi, (1+tau) C* Psi]`` for ``|U1 - U2|^{p-1}``."""
    if not 0 < tau < 0.5 + 1e-15:
        raise ValueError("tau must lie in (0, 1/2]")
    cs = C_star(R0, Q, R1, R2, N, C_hat) * psi_N(delta, N, p)
    return (1.0 - tau) * cs, (1.0 + tau) * cs


# -- sweeps -------------------------------------------------------------------------------------

CSV_COLUMNS = [
    "delta", "max_Hgrad", "max_Hgrad_outside_neck", "U1", "U2", "gap", "I_delta_w", "R0_est", "h_neck",
    "n_dofs", "newton_iters", "wall_s",
    # provenance and mesh-convergence columns
    "p", "h_far", "n_triangles", "I_out", "max_Hgrad_fine", "gap_fine", "mesh_rel_diff",
]


@dataclass
class SweepReport:
    config: dict
    w: float
    rows: list = field(default_factory=list)
    fit: dict = field(default_factory=dict)
    R0: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    @property
    def deltas(self) -> np.ndarray:
        return self.column("delta")


def _fit_line(x, y) -> dict:
    res = stats.linregress(x, y)
    n = len(x)
    tq = stats.t.ppf(0.975, n - 2) if n > 2 else np.nan
    resid = y - (res.intercept + res.slope * x)
    return {
        "slope": float(res.slope), "intercept": float(res.intercept), "slope_stderr": float(res.stderr),
        "slope_ci95": [float(res.slope - tq * res.stderr), float(res.slope + tq * res.stderr)],
        "residuals": resid.tolist(), "max_abs_residual": float(np.max(np.abs(resid))),
    }


def fit_log_regime(deltas, y, p: float) -> dict:
    """Fit ``y = A / (delta^{p-1} |ln delta|)`` by the mean of ``y delta^{p-1} |ln delta|``."""
    d = np.asarray(deltas, dtype=float)
    z = np.asarray(y, dtype=float) * d ** (p - 1.0) * np.abs(np.log(d))
    A = float(np.mean(z))
    rel = z / A - 1.0
    return {"constant": A, "relative_residuals": rel.tolist(), "max_abs_residual": float(np.max(np.abs(rel)))}


def fit_rates(deltas, max_grad, p: float, N: int = 2, gap=None, min_points: int = 5,
              min_decades: float = 1.5) -> dict:
    """Least-squares rate fits of a sweep.

    Reports the slope of ``log max H(grad u)`` and of ``log max H(grad u)^{p-1}``
    against ``log delta``, the log-regime constant when ``p`` is critical, and
    the slope of ``log |U1 - U2|^{p-1}`` when gaps are given.
    """
    d = np.asarray(deltas, dtype=float)
    m = np.asarray(max_grad, dtype=float)
    if len(d) < min_points:
        raise ValueError(f"need at least {min_points} sweep points, got {len(d)}")
    span = math.log10(d.max() / d.min())
    if span < min_decades - 1e-12:
        raise ValueError(f"delta range spans {span:.2f} decades, need {min_decades}")
    x = np.log(d)
    out = {"regime": regime(N, p), "N": N, "p": p, "n_points": len(d), "decades": span}
    out["max_grad"] = _fit_line(x, np.log(m))
    out["max_grad_pm1"] = _fit_line(x, (p - 1.0) * np.log(m))
    rf = RateFunctions(N, p)
    out["predicted_max_grad_slope"] = rf.gradient_exponent()
    if out["regime"] == "log":
        out["log_regime"] = fit_log_regime(d, m ** (p - 1.0), p)
    if gap is not None:
        g = np.abs(np.asarray(gap, dtype=float))
        out["gap_pm1"] = _fit_line(x, (p - 1.0) * np.log(g))
        out["predicted_gap_pm1_slope"] = {"power": p - critical_exponent(N), "sub": 0.0, "log": None}[out["regime"]]
    return out


def fit_C_hat(deltas, gap, R0: float, Q, R1, R2, N: int, p: float, tail: int = 3) -> float:
    """Single scalar matching ``|U1-U2|^{p-1}`` to ``C* Psi_N`` over the smallest deltas (median ratio)."""
    d = np.asarray(deltas, dtype=float)
    g = np.abs(np.asarray(gap, dtype=float)) ** (p - 1.0)
    base = C_star(R0, Q, R1, R2, N, 1.0)
    if base == 0:
        return float("nan")
    order = np.argsort(d)[:tail]
    return float(np.median(g[order] / (base * psi_N(d[order], N, p))))


def mesh_kwargs_for(delta: float, mesh: dict | None = None) -> dict:
    """Mesh parameters of one sweep point; ``h_neck`` defaults to ``delta * neck_factor``."""
    mesh = dict(mesh or {})
    factor = mesh.pop("neck_factor", 0.2)
    mesh.setdefault("h_far", 0.2)
    if mesh.get("h_neck") is None:
        mesh["h_neck"] = factor * delta
    return mesh


def run_point(config: TwoInclusionConfig, w: float, mesh: dict | None = None, solver_opts=None,
              mesh_check: bool = True, checks: bool = True, kappa: float = 10.0) -> dict:
    """Mesh, solve and measure one ``delta``; returns the CSV row plus check reports."""
    from .mesh import generate_mesh
    from .solver import extract_fluxes, max_outside_neck, solve

    t0 = time.perf_counter()
    mk = mesh_kwargs_for(config.delta, mesh)
    m = generate_mesh(config, **mk)
    res = solve(config, m, solver_opts)
    neck = config.neck(w)
    fl = extract_fluxes(res, neck)
    mo, _ = max_outside_neck(res, neck)
    mo_half, _ = max_outside_neck(res, config.neck(0.5 * w))
    row = {
        "delta": config.delta, "max_Hgrad": res.max_H_grad, "max_Hgrad_outside_neck": mo,
        "U1": res.U1, "U2": res.U2, "gap": res.U1 - res.U2, "I_delta_w": fl["I_w"], "R0_est": float("nan"),
        "h_neck": mk["h_neck"], "n_dofs": res.problem.n_dofs, "newton_iters": res.newton_iterations,
        "p": config.p, "h_far": mk["h_far"], "n_triangles": m.n_triangles, "I_out": fl["I_out"],
        "flux_R1": res.fluxes.get("R1", 0.0), "flux_R2": res.fluxes.get("R2", 0.0),
        "flux_outer": res.fluxes.get("outer", 0.0), "abs_flux_R1": res.abs_pointwise_fluxes.get("R1", 0.0),
        "abs_flux_R2": res.abs_pointwise_fluxes.get("R2", 0.0),
        "abs_flux_outer": res.abs_pointwise_fluxes.get("outer", 0.0),
        "max_Hgrad_outside_half_w": mo_half,
    }
    if mesh_check:
        fine = {**mk, "h_far": mk["h_far"] / 2.0, "h_neck": mk["h_neck"] / 2.0}
        mf = generate_mesh(config, **fine)
        rf = solve(config, mf, solver_opts)
        row["max_Hgrad_fine"] = rf.max_H_grad
        row["gap_fine"] = rf.U1 - rf.U2
        rel = [abs(rf.max_H_grad / res.max_H_grad - 1.0)]
        if abs(row["gap"]) > 0:
            rel.append(abs(row["gap_fine"] / row["gap"] - 1.0))
        row["mesh_rel_diff"] = max(rel)
    else:
        row["max_Hgrad_fine"] = row["gap_fine"] = row["mesh_rel_diff"] = float("nan")
    reports = []
    if checks:
        from . import verify

        lam = kappa / w**2
        reports = [
            verify.check_max_principle_u(res).to_dict(),
            verify.check_grad_max_on_boundary(res).to_dict(),
            verify.check_P_function(res, neck, lam).to_dict(),
            verify.check_flux_identities(res).to_dict(),
        ]
        for r in reports:
            r["delta"] = config.delta
    row["wall_s"] = time.perf_counter() - t0
    return {"row": row, "checks": reports}


def _run_point_star(args):
    return run_point(*args[0], **args[1])


def run_sweep(base: TwoInclusionConfig, deltas, w: float = 0.3, mesh: dict | None = None, solver_opts=None,
              jobs: int = 1, mesh_check: bool = True, checks: bool = True, kappa: float = 10.0,
              tau: float = 0.25) -> SweepReport:
    """Solve every ``delta`` (in parallel with ``jobs`` workers) and fit the rates.

    Rows are ordered by decreasing ``delta`` regardless of completion order.
    A failed point is recorded in ``errors`` and the remaining rows are kept.
    """
    deltas = sorted((float(d) for d in deltas), reverse=True)
    if len(set(deltas)) != len(deltas):
        raise ValueError("delta values must be distinct")
    tasks = [((base.with_delta(d), w), dict(mesh=mesh, solver_opts=solver_opts, mesh_check=mesh_check,
                                             checks=checks, kappa=kappa)) for d in deltas]
    report = SweepReport(config=base.describe(), w=w)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futures = [ex.submit(_run_point_star, t) for t in tasks]
            outs = []
            for d, f in zip(deltas, futures):
                try:
                    outs.append(f.result())
                except Exception as e:  # noqa: BLE001 - recorded per row
                    report.errors.append({"delta": d, "error": f"{type(e).__name__}: {e}"})
    else:
        outs = []
        for d, t in zip(deltas, tasks):
            try:
                outs.append(_run_point_star(t))
            except Exception as e:  # noqa: BLE001
                report.errors.append({"delta": d, "error": f"{type(e).__name__}: {e}"})
    report.rows = [o["row"] for o in outs]
    report.checks = [c for o in outs for c in o["checks"]]
    _postprocess(report, base, tau)
    return report


def _postprocess(report: SweepReport, base: TwoInclusionConfig, tau: float):
    from .solver import extrapolate_limit

    rows = report.rows
    if len(rows) >= 2 and not base.phi.is_constant:
        est = extrapolate_limit([r["delta"] for r in rows], [r["I_out"] for r in rows])
        report.R0 = {"value": est.value, "spread": est.spread, "exponent": est.exponent, "warning": est.warning}
        for r in rows:
            r["R0_est"] = est.value
    elif base.phi.is_constant:
        report.R0 = {"value": 0.0, "spread": 0.0, "exponent": None, "warning": None}
        for r in rows:
            r["R0_est"] = 0.0
    try:
        d = report.column("delta")
        fit = fit_rates(d, report.column("max_Hgrad"), base.p, base.N, gap=report.column("gap"))
    except ValueError as e:
        report.fit = {"refused": str(e), "regime": regime(base.N, base.p)}
        return
    R0 = report.R0.get("value", 0.0)
    try:
        Q = base.Q
    except Exception:  # noqa: BLE001
        Q = np.full((1, 1), np.nan)
    C_hat = fit_C_hat(d, report.column("gap"), R0, Q, base.R1, base.R2, base.N, base.p)
    fit["C_hat"] = C_hat
    fit["C_star"] = C_star(R0, Q, base.R1, base.R2, base.N, C_hat) if np.isfinite(C_hat) else float("nan")
    fit["tau"] = tau
    gaps = []
    for r in rows:
        lo, hi = predict_gap(R0, Q, base.R1, base.R2, r["delta"], tau, base.N, base.p, C_hat)
        g = abs(r["gap"]) ** (base.p - 1.0)
        gaps.append({"delta": r["delta"], "gap_pm1": g, "lower": lo, "upper": hi, "inside": bool(lo <= g <= hi)})
    fit["gap_vs_psi"] = gaps
    report.fit = fit
