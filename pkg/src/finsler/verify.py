"""Executable checks of the qualitative properties on discrete solutions.

Every check returns a :class:`CheckEntry`; checks are pure functions of their
inputs.  "Within one element layer" means the extremal triangle has at least
one vertex on the boundary of the computational domain.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

from .exact import (RadialAnnulusSolution, barrier_solutions_for_boundary_bound, closest_point, flux_bounds,
                    touching_radii)
from .geometry import NeckGeometry, TwoInclusionConfig
from .mesh import Tag, structured_annulus_mesh
from .output import jsonable
from .solver import DiscreteProblem, SolveResult, SolverOptions, solve_problem


@dataclass
class CheckEntry:
    name: str
    passed: bool
    measured: float
    tolerance: float
    property: str
    location: list | None = None
    details: dict = field(default_factory=dict)
    experimental: bool = False

    @property
    def status(self) -> str:
        return "pass" if self.passed else "fail"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["status"] = self.status
        return jsonable(d)


@dataclass
class CheckReport:
    entries: list = field(default_factory=list)

    def add(self, entry: CheckEntry) -> CheckEntry:
        self.entries.append(entry)
        return entry

    @property
    def passed(self) -> bool:
        """All non-experimental checks passed."""
        return all(e.passed for e in self.entries if not e.experimental)

    def failures(self) -> list:
        return [e for e in self.entries if not e.passed and not e.experimental]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [e.to_dict() for e in self.entries]}


def with_field(result: SolveResult, u) -> SolveResult:
    """Copy of ``result`` carrying the nodal field ``u`` (for negative controls)."""
    out = copy.copy(result)
    out.u = np.asarray(u, dtype=float)
    out.grad = result.mesh.gradients(out.u)
    out.H_grad = result.problem.norm.value(out.grad)
    i = int(np.argmax(out.H_grad))
    out.max_H_grad = float(out.H_grad[i])
    out.max_location = result.mesh.centroids[i].copy()
    return out


def _boundary_triangles(result: SolveResult) -> np.ndarray:
    return result.mesh.boundary_layer(0)


# -- per-solve checks ---------------------------------------------------------------------


def check_max_principle_u(result: SolveResult, rel_tol: float = 1e-12) -> CheckEntry:
    """Nodal extrema of ``u_h`` are attained at Dirichlet nodes (ties allowed).

    Floating inclusion nodes are interior for this purpose.  ``rel_tol`` only
    absorbs round-off, relative to the oscillation of the data.
    """
    u = result.u
    bd = result.problem.is_dirichlet
    ub = u[bd]
    osc = float(np.ptp(ub)) if ub.size else 0.0
    tol = rel_tol * max(osc, float(np.max(np.abs(ub))) if ub.size else 0.0, 1e-300)
    over = float(np.max(u) - np.max(ub))
    under = float(np.min(ub) - np.min(u))
    excess = max(over, under, 0.0)
    imax, imin = int(np.argmax(u)), int(np.argmin(u))
    return CheckEntry(
        name="max_principle_u", passed=excess <= tol, measured=excess, tolerance=tol,
        property="max and min of u over the domain are attained on the outer boundary",
        location=[result.mesh.nodes[imax].tolist(), result.mesh.nodes[imin].tolist()],
        details={"max_u": float(np.max(u)), "min_u": float(np.min(u)), "max_boundary": float(np.max(ub)),
                 "min_boundary": float(np.min(ub)),
                 "max_abs_u_minus_max_abs_phi": float(np.max(np.abs(u)) - np.max(np.abs(ub)))},
    )


def check_grad_max_on_boundary(result: SolveResult) -> CheckEntry:
    """The largest elementwise ``H(grad u_h)`` sits on a triangle touching the boundary."""
    Hg = result.H_grad
    layer = _boundary_triangles(result)
    gmax = float(np.max(Hg))
    bmax = float(np.max(Hg[layer])) if np.any(layer) else 0.0
    # gradients of a field that is constant up to round-off have no meaningful argmax
    floor = 1e-10 * float(np.max(np.abs(result.u))) / np.sqrt(float(np.min(result.mesh.areas)))
    ok = gmax <= floor or bmax >= gmax * (1.0 - 1e-12)
    i = int(np.argmax(Hg))
    return CheckEntry(
        name="grad_max_on_boundary", passed=bool(ok), measured=gmax - bmax, tolerance=1e-12 * gmax,
        property="max of H(grad u) is attained on the boundary of the perforated domain",
        location=result.mesh.centroids[i].tolist(),
        details={"max_H_grad": gmax, "max_on_boundary_layer": bmax, "round_off_floor": floor},
    )


def smoothstep_cutoff(s) -> np.ndarray:
    """``0`` for ``s <= 1/2``, ``1`` for ``s >= 1``, quintic C^2 bridge in between."""
    t = np.clip(2.0 * np.asarray(s, dtype=float) - 1.0, 0.0, 1.0)
    return t**3 * (10.0 - 15.0 * t + 6.0 * t * t)


def cutoff_second_derivative_bound(neck: NeckGeometry) -> float:
    """``sup |hess f| * w^2`` for the smoothstep cutoff in ``|Q^{1/2} x'| / w`` (2-D).

    ``d^2 f / ds^2 = 4 g''(t)`` with ``max |g''| = 10 / sqrt(3)``.
    """
    return 4.0 * 10.0 / np.sqrt(3.0) * float(np.max(np.linalg.eigvalsh(neck.Q)))


def check_P_function(result: SolveResult, neck: NeckGeometry | None, lam: float) -> CheckEntry:
    """``P = f H(grad u)^2 + lam u^2`` attains its max on a boundary triangle.

    ``f`` is the smoothstep cutoff of ``|Q^{1/2} x'| / w`` vanishing in the
    inner half of the neck; with ``neck=None`` it is identically one.
    """
    m = result.mesh
    c = m.centroids
    f = np.ones(m.n_triangles) if neck is None else smoothstep_cutoff(neck.transverse(c) / neck.w)
    uc = result.u[m.triangles].mean(axis=1)
    P = f * result.H_grad**2 + lam * uc**2
    layer = _boundary_triangles(result)
    pmax = float(np.max(P))
    bmax = float(np.max(P[layer])) if np.any(layer) else 0.0
    ok = pmax == 0.0 or bmax >= pmax * (1.0 - 1e-12)
    i = int(np.argmax(P))
    details = {"lambda": lam, "max_P": pmax, "max_on_boundary_layer": bmax}
    if neck is not None:
        details["cutoff_hess_w2"] = cutoff_second_derivative_bound(neck)
    return CheckEntry(
        name="P_function", passed=bool(ok), measured=pmax - bmax, tolerance=1e-12 * pmax,
        property="f H(grad u)^2 + lambda u^2 attains its max on the boundary", location=c[i].tolist(),
        details=details,
    )


def check_flux_identities(result: SolveResult, rel_tol: float = 1e-6) -> CheckEntry:
    """Zero net flux on each floating inclusion and the divergence identity.

    Each inclusion flux is compared with the integral of the absolute
    pointwise flux over the same boundary, and the sum of all boundary fluxes
    with the sum of the absolute ones.
    """
    fl, ab = result.fluxes, result.abs_pointwise_fluxes
    # Newton stops at a residual relative to the natural flux scale G_char^(p-1) * diam,
    # so a boundary carrying less than that (constant datum) is measured against it
    def denom(a):
        return max(a, result.problem.scale)

    rel = {}
    floating = {tg for tg, _ in result.problem.floating}
    for name, tg in (("R1", Tag.INCLUSION_1), ("R2", Tag.INCLUSION_2)):
        if name in fl and tg in floating:
            rel[name] = abs(fl[name]) / denom(ab[name])
    rel["divergence"] = abs(sum(fl.values())) / denom(sum(ab.values()))
    worst = max(rel.values())
    return CheckEntry(
        name="flux_identities", passed=worst <= rel_tol, measured=worst, tolerance=rel_tol,
        property="zero net flux through each inclusion; boundary fluxes sum to zero",
        details={k: float(v) for k, v in rel.items()} | {k: float(v) for k, v in fl.items()},
    )


def run_solve_checks(result: SolveResult, neck: NeckGeometry | None, lam: float) -> CheckReport:
    rep = CheckReport()
    rep.add(check_max_principle_u(result))
    rep.add(check_grad_max_on_boundary(result))
    rep.add(check_P_function(result, neck, lam))
    rep.add(check_flux_identities(result))
    return rep


# -- sweep-level checks --------------------------------------------------------------------


def check_neck_bound(report, w: float, spread_tol: float = 0.5, scaling_tol: float = 3.0) -> CheckEntry:
    """Boundedness of ``max H(grad u)`` outside the neck across a sweep.

    Passes when the relative spread ``(max - min) / min`` is at most
    ``spread_tol`` and the values do not grow monotonically as ``delta``
    decreases.  If the rows carry ``max_Hgrad_outside_half_w`` the ratio to the
    width-``w`` value is reported against the ``C/w`` scaling (factor at most
    ``scaling_tol``).
    """
    rows = sorted(report.rows, key=lambda r: -r["delta"])
    if len(rows) < 3:
        raise ValueError("the neck bound check needs at least three sweep rows")
    v = np.array([r["max_Hgrad_outside_neck"] for r in rows], dtype=float)
    spread = float((v.max() - v.min()) / v.min()) if v.min() > 0 else 0.0
    monotone = bool(np.all(np.diff(v) > 0))
    inside = np.array([r["max_Hgrad"] for r in rows], dtype=float)
    details = {"outside_max": v.tolist(), "relative_spread": spread, "monotone_growth": monotone,
               "growth_of_global_max": float(inside[-1] / inside[0]) if inside[0] > 0 else 0.0}
    ok = spread <= spread_tol and not monotone
    if all("max_Hgrad_outside_half_w" in r for r in rows):
        half = np.array([r["max_Hgrad_outside_half_w"] for r in rows], dtype=float)
        ratio = half / np.where(v > 0, v, 1.0)
        details["half_w_ratio"] = ratio.tolist()
        details["half_w_ratio_ok"] = bool(np.all(ratio <= scaling_tol))
    return CheckEntry(name="neck_bound", passed=ok, measured=spread, tolerance=spread_tol,
                      property="gradient stays bounded outside the neck uniformly in delta", details=details)


def sample_compact_set(config: TwoInclusionConfig, w: float, n: int = 400, seed: int = 0,
                       margin: float = 0.25) -> np.ndarray:
    """Random points at transverse distance at least ``1.5 w`` from the axis of the
    neck, at ``H0``-distance ``margin`` from both inclusions and inside ``0.85`` of the box."""
    rng = np.random.default_rng(seed)
    L = config.half_width
    neck = config.neck(w)
    D1, D2 = config.D1, config.D2
    pts, have = [], 0
    while have < n:
        x = rng.uniform(-0.85 * L, 0.85 * L, size=(4 * n, 2))
        keep = (neck.transverse(x) >= 1.5 * w) & (D1.level(x) > D1.radius + margin) & (D2.level(x) > D2.radius + margin)
        pts.append(x[keep])
        have += int(keep.sum())
    return np.concatenate(pts)[:n]


def check_convergence_outside_neck(results, points, rel_tol: float = 0.0) -> CheckEntry:
    """Successive sup-differences of ``u`` and ``grad u`` on fixed points shrink as ``delta`` decreases.

    ``results`` is a list of :class:`SolveResult` ordered by decreasing
    ``delta``; ``points`` must avoid every neck and inclusion.  The ``u``
    differences decide the status; the gradient differences are reported.
    """
    vals, grads = [], []
    for r in results:
        v, g = r.mesh.interpolate(r.u, points)
        if np.any(np.isnan(v)):
            raise ValueError("sample point outside a mesh")
        vals.append(v)
        grads.append(g)
    # differences at round-off level count as zero; round-off in u divided by a
    # small element size sets the gradient floor
    u_scale = max(float(np.max(np.abs(vals))), 1e-300)
    u_floor = 1e-12 * u_scale
    g_floor = max(1e-12 * float(np.max(np.abs(grads))), 1e-10 * u_scale)
    du = [float(np.max(np.abs(a - b))) for a, b in zip(vals[:-1], vals[1:])]
    dg = [float(np.max(np.linalg.norm(a - b, axis=1))) for a, b in zip(grads[:-1], grads[1:])]
    du = [d if d > u_floor else 0.0 for d in du]
    dg = [d if d > g_floor else 0.0 for d in dg]
    dec_u = all(b <= a * (1 + rel_tol) for a, b in zip(du[:-1], du[1:]))
    dec_g = all(b <= a * (1 + rel_tol) for a, b in zip(dg[:-1], dg[1:]))
    return CheckEntry(
        name="convergence_outside_neck", passed=bool(dec_u), measured=du[-1] if du else 0.0, tolerance=0.0,
        property="u_delta converges as delta -> 0 on compact sets away from the touching point",
        details={"sup_diff_u": du, "sup_diff_grad": dg, "u_decreasing": dec_u, "grad_decreasing": dec_g},
    )


def check_barrier_sandwich(result: SolveResult, config: TwoInclusionConfig, z, w: float, c: float = 0.5,
                           tol: float | None = None, slack: float | None = None) -> CheckEntry:
    """Radial barriers at ``z`` bound ``u_h`` on their annulus; the flux density at the
    closest point lies in the barrier interval.

    ``tol`` defaults to ``1e-3 max(osc(phi), max|phi|)``; ``slack`` defaults to ``10 G_char^{p-1}``.
    """
    m = result.mesh
    lo, hi = config.phi_range()
    osc = hi - lo
    tol = 1e-3 * max(osc, abs(lo), abs(hi), 1e-300) if tol is None else tol
    pair = barrier_solutions_for_boundary_bound(config, z, result.U1, w, c, (lo, hi))
    x = m.nodes
    if pair.constant is not None:
        err = float(np.max(np.abs(result.u - pair.constant)))
        return CheckEntry(name="barrier_sandwich", passed=err <= tol, measured=err, tolerance=tol,
                          property="radial barriers sandwich u near the inclusion")
    inside = pair.contains(x) & ~config.D1.contains(x, strict=True)
    up = pair.upper.value(x[inside], check=False)
    low = pair.lower.value(x[inside], check=False)
    u = result.u[inside]
    viol = float(max(np.max(u - up, initial=0.0), np.max(low - u, initial=0.0)))
    # pointwise flux density at the boundary edge nearest the closest point
    P = closest_point(config)
    idx = np.flatnonzero(m.edge_tags == Tag.INCLUSION_1)
    k = idx[np.argmin(np.linalg.norm(m.edge_midpoints[idx] - P, axis=1))]
    a = result.problem.flux_density(result.grad[m.edge_triangle[k]][None], 0.0)[0]
    dens = float(a @ m.edge_normals[k])
    slack = 10.0 * config.G_char ** (config.p - 1.0) if slack is None else slack
    rad = touching_radii(config, P, w, c)
    lo_b, hi_b = flux_bounds(config.p, result.U1, result.U2, rad, slack)
    in_bounds = lo_b <= dens <= hi_b
    return CheckEntry(
        name="barrier_sandwich", passed=bool(viol <= tol and in_bounds), measured=viol, tolerance=tol,
        property="radial barriers sandwich u near the inclusion; flux density within barrier bounds",
        location=list(map(float, z)),
        details={"n_nodes": int(inside.sum()), "flux_density": dens, "flux_bounds": [lo_b, hi_b],
                 "slack": slack, "r1": pair.r1, "r2": pair.r2},
    )


# -- annulus benchmark ------------------------------------------------------------------------


def annulus_benchmark(norm, p: float, r: float = 1.0, R: float = 2.0, n_r: int = 8, n_theta: int = 64,
                      levels: int = 3, C_r: float = 1.0, C_R: float = 0.0, opts: SolverOptions | None = None) -> dict:
    """Convergence of the solver against the radial solution on nested mapped meshes.

    Returns nodal L-infinity errors, the pairwise and least-squares observed
    orders, the relative inner-flux error on each level, and the solve results.
    """
    H0 = norm.dual()
    exact = RadialAnnulusSolution(np.zeros(norm.dim), r, R, C_r, C_R, p, H0)
    hs, errs, flux_err, results = [], [], [], []
    for k in range(levels):
        mesh = structured_annulus_mesh(H0, r, R, n_r * 2**k, n_theta * 2**k)
        prob = DiscreteProblem(mesh, p, norm, lambda x: exact.value(x, check=False), fixed={Tag.INCLUSION_1: C_r})
        res = solve_problem(prob, opts)
        hs.append(mesh.info["h"])
        errs.append(float(np.max(np.abs(res.u - exact.value(mesh.nodes, check=False)))))
        ref = exact.inner_flux()
        flux_err.append(abs(res.fluxes["R1"] / ref - 1.0) if ref != 0 else abs(res.fluxes["R1"]))
        results.append(res)
    h, e = np.log(hs), np.log(np.maximum(errs, 1e-300))
    pair = (np.diff(e) / np.diff(h)).tolist()
    fit = float(np.polyfit(h, e, 1)[0]) if levels >= 2 else float("nan")
    return {"p": p, "norm": norm.to_spec(), "h": hs, "linf_error": errs, "orders": pair, "order_fit": fit,
            "flux_rel_error": flux_err, "exact_flux": exact.inner_flux(), "results": results}


# -- norm identities --------------------------------------------------------------------------


def builtin_norm_family(seed: int = 0, q_values=(1.5, 3.0, 4.0), n_quadratic: int = 3) -> dict:
    """Euclidean, several ``l_q`` norms and random SPD quadratic norms in the plane."""
    from .anisotropy import AnisotropicNorm

    rng = np.random.default_rng(seed)
    fam = {"euclidean": AnisotropicNorm.euclidean()}
    for q in q_values:
        fam[f"lq{q:g}"] = AnisotropicNorm.lq(q)
    for k in range(n_quadratic):
        M = rng.normal(size=(2, 2))
        fam[f"quadratic{k}"] = AnisotropicNorm.quadratic(M @ M.T + 0.5 * np.eye(2))
    return fam


def norm_identity_suite(norms: dict, n_points: int = 10_000, seed: int = 0, tol: float = 1e-10) -> CheckReport:
    """Homogeneity, Euler, duality and Hessian identities at random nonzero points."""
    from .anisotropy import identity_residuals

    rng = np.random.default_rng(seed)
    report = CheckReport()
    for name, H in norms.items():
        xi = rng.normal(size=(n_points, H.dim)) * np.exp(rng.uniform(-3, 3, size=(n_points, 1)))
        t = rng.choice([-1.0, 1.0], n_points) * np.exp(rng.uniform(-3, 3, n_points))
        res = identity_residuals(H, xi, t)
        for ident, val in res.items():
            report.add(CheckEntry(f"{name}:{ident}", bool(val <= tol), val, tol,
                                  "norm identity at random points", details={"n_points": n_points}))
    return report
