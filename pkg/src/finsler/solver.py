"""P1 minimisation of the anisotropic p-Dirichlet energy with floating conductors.

Every node of an inclusion boundary is tied to a single unknown, so the
discrete solution is exactly constant on each inclusion and the zero-net-flux
condition is the stationarity of the energy with respect to that unknown.

Sign convention for fluxes: every boundary flux is
``int H^{p-1}(grad u) grad_xi H(grad u) . n ds`` with ``n`` pointing into the
computational domain.  On an inclusion that is the outward normal of the
inclusion; with it the divergence theorem reads ``R1 + R2 + outer = 0``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import curve_fit
from scipy.sparse.linalg import splu

from .anisotropy import AnisotropicNorm
from .geometry import NeckGeometry, TwoInclusionConfig
from .mesh import Mesh, Tag

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Newton iteration failed; ``history`` holds the residual log."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


@dataclass
class SolverOptions:
    eps_start: float = 1e-2  # times G_char
    eps_floor: float = 1e-8  # times G_char
    eps_factor: float = 0.1
    gtol: float = 1e-10  # final, times scale
    gtol_stage: float = 1e-6  # intermediate stages, times scale
    max_newton: int = 200
    armijo: float = 1e-4
    initial: str = "harmonic"  # harmonic | zero | random
    seed: int = 0


class DiscreteProblem:
    """Regularised energy ``E_eps(v) = (1/p) int (eps^2 + H(grad v)^2)^{p/2}``.

    Parameters
    ----------
    mesh : Mesh
    p : float
    norm : AnisotropicNorm
    outer_values : callable or float
        Dirichlet datum on OUTER nodes.
    fixed : dict, optional
        ``{Tag: value}`` for inclusion groups held at a prescribed potential
        instead of floating.
    """

    def __init__(self, mesh: Mesh, p: float, norm: AnisotropicNorm, outer_values, fixed=None, G_char=None,
                 diameter=None):
        if not p > 1:
            raise ValueError(f"p must exceed 1, got {p}")
        self.mesh = mesh
        self.p = float(p)
        self.norm = norm
        self.fixed = dict(fixed or {})
        tags = mesh.node_tags
        n = mesh.n_nodes
        self.u_dirichlet = np.zeros(n)
        is_dir = tags == Tag.OUTER
        xo = mesh.nodes[is_dir]
        self.u_dirichlet[is_dir] = outer_values(xo) if callable(outer_values) else float(outer_values)
        for tg, val in self.fixed.items():
            sel = tags == tg
            is_dir |= sel
            self.u_dirichlet[sel] = float(val)
        self.is_dirichlet = is_dir

        node_dof = np.full(n, -1, dtype=np.int64)
        interior = np.flatnonzero(tags == Tag.INTERIOR)
        node_dof[interior] = np.arange(len(interior))
        self.floating = []
        ndof = len(interior)
        for tg in (Tag.INCLUSION_1, Tag.INCLUSION_2):
            sel = tags == tg
            if np.any(sel) and tg not in self.fixed:
                node_dof[sel] = ndof
                self.floating.append((tg, ndof))
                ndof += 1
        self.node_dof = node_dof
        self.n_dofs = ndof
        P = sp.coo_matrix((np.ones(np.sum(node_dof >= 0)), (np.flatnonzero(node_dof >= 0), node_dof[node_dof >= 0])),
                          shape=(n, ndof))
        self.P = P.tocsr()

        vals = self.u_dirichlet[is_dir]
        osc = float(np.ptp(vals)) if vals.size else 0.0
        if diameter is None:
            diameter = float(np.linalg.norm(np.ptp(mesh.nodes, axis=0)))
        self.diameter = diameter
        if G_char is None:
            G_char = osc / diameter
        mag = float(np.max(np.abs(vals))) if vals.size else 0.0
        self.G_char = G_char if G_char > 0 else max(mag, 1.0) / diameter
        self.scale = self.G_char ** (self.p - 1.0) * diameter
        self.eps = 0.0

        t = mesh.triangles
        kk, ll = np.meshgrid(np.arange(3), np.arange(3), indexing="ij")
        self._I = t[:, kk.ravel()]  # (m, 9)
        self._J = t[:, ll.ravel()]

    # -- dof <-> nodal -----------------------------------------------------------

    def nodal(self, x) -> np.ndarray:
        return self.P @ x + self.u_dirichlet

    def dofs_from_nodal(self, u) -> np.ndarray:
        x = np.zeros(self.n_dofs)
        sel = self.node_dof >= 0
        x[self.node_dof[sel]] = u[sel]
        return x

    # -- energy -------------------------------------------------------------------

    def _density(self, xi, eps):
        H = self.norm.value(xi)
        s = eps * eps + H * H
        return H, s

    def energy(self, x, eps=None) -> float:
        eps = self.eps if eps is None else eps
        xi = self.mesh.gradients(self.nodal(x))
        _, s = self._density(xi, eps)
        return float(np.sum(self.mesh.areas * s ** (0.5 * self.p)) / self.p)

    def node_residual(self, u, eps=None, regularised=True) -> np.ndarray:
        """``r_i = int a(grad u) . grad phi_i`` for every node ``i``."""
        eps = self.eps if eps is None else eps
        m = self.mesh
        xi = m.gradients(u)
        a = self.flux_density(xi, eps if regularised else 0.0)
        loc = m.areas[:, None] * np.einsum("md,mkd->mk", a, m.basis_gradients)
        return np.bincount(m.triangles.ravel(), weights=loc.ravel(), minlength=m.n_nodes)

    def flux_density(self, xi, eps=0.0) -> np.ndarray:
        """``(eps^2 + H^2)^{p/2-1} H grad H``; equals ``H^{p-1} grad_xi H`` at ``eps = 0``."""
        H, s = self._density(xi, eps)
        hg = self.norm.half_square_gradient(xi)
        with np.errstate(divide="ignore", invalid="ignore"):
            c = np.where(s > 0, s ** (0.5 * self.p - 1.0), 0.0)
        return c[:, None] * hg

    def assemble(self, x, eps=None, hessian: bool = True):
        """Energy, gradient with respect to the dofs, and the sparse Hessian."""
        eps = self.eps if eps is None else eps
        m = self.mesh
        p = self.p
        u = self.nodal(x)
        xi = m.gradients(u)
        H, s = self._density(xi, eps)
        E = float(np.sum(m.areas * s ** (0.5 * p)) / p)
        hg = self.norm.half_square_gradient(xi)
        with np.errstate(divide="ignore", invalid="ignore"):
            c1 = np.where(s > 0, s ** (0.5 * p - 1.0), 1.0 if p == 2 else 0.0)
            c2 = np.where(s > 0, (p - 2.0) * s ** (0.5 * p - 2.0), 0.0)
        a = c1[:, None] * hg
        b = m.basis_gradients
        loc = m.areas[:, None] * np.einsum("md,mkd->mk", a, b)
        dof = self.node_dof[m.triangles]
        sel = dof >= 0
        g = np.bincount(dof[sel], weights=loc[sel], minlength=self.n_dofs)
        if not hessian:
            return E, g, None
        D = c1[:, None, None] * self.norm.half_square_hessian(xi) + c2[:, None, None] * hg[:, :, None] * hg[:, None, :]
        Ke = m.areas[:, None, None] * np.einsum("mkd,mde,mle->mkl", b, D, b)
        I = self.node_dof[self._I].ravel()
        J = self.node_dof[self._J].ravel()
        V = Ke.reshape(len(Ke), 9).ravel()
        keep = (I >= 0) & (J >= 0)
        K = sp.coo_matrix((V[keep], (I[keep], J[keep])), shape=(self.n_dofs,) * 2).tocsc()
        return E, g, K

    # -- initial guesses ----------------------------------------------------------

    def initial_guess(self, kind: str = "harmonic", seed: int = 0) -> np.ndarray:
        if kind == "zero":
            return np.zeros(self.n_dofs)
        if kind == "random":
            rng = np.random.default_rng(seed)
            vals = self.u_dirichlet[self.is_dirichlet]
            lo, hi = (vals.min(), vals.max()) if vals.size else (-1.0, 1.0)
            return rng.uniform(lo, hi, self.n_dofs)
        if kind == "harmonic":
            quad = DiscreteProblem.__new__(DiscreteProblem)
            quad.__dict__.update(self.__dict__)
            quad.p = 2.0
            _, g, K = quad.assemble(np.zeros(self.n_dofs), eps=0.0)
            return splu(K).solve(-g)
        raise ValueError(f"unknown initial guess {kind!r}")


@dataclass
class SolveResult:
    """Discrete solution together with the derived quantities."""

    problem: DiscreteProblem = field(repr=False)
    u: np.ndarray = field(repr=False)
    U: dict
    grad: np.ndarray = field(repr=False)
    H_grad: np.ndarray = field(repr=False)
    max_H_grad: float
    max_location: np.ndarray
    fluxes: dict
    pointwise_fluxes: dict
    abs_pointwise_fluxes: dict
    energy: float
    history: list = field(repr=False)
    newton_iterations: int
    converged: bool
    residual: np.ndarray = field(repr=False)
    config: TwoInclusionConfig | None = field(default=None, repr=False)
    wall_s: float = 0.0

    @property
    def mesh(self) -> Mesh:
        return self.problem.mesh

    @property
    def U1(self) -> float:
        return self.U.get(Tag.INCLUSION_1, np.nan)

    @property
    def U2(self) -> float:
        return self.U.get(Tag.INCLUSION_2, np.nan)

    def variational_flux(self, node_mask) -> float:
        """Consistent flux through the boundary nodes in ``node_mask`` (normal into the domain)."""
        return float(-np.sum(self.residual[np.asarray(node_mask, dtype=bool)]))

    def pointwise_flux(self, tag, edge_mask=None) -> float:
        """Midpoint-rule flux of the elementwise field over tagged edges."""
        m = self.mesh
        a = self.problem.flux_density(self.grad, 0.0)
        sel = m.edge_tags == tag
        if edge_mask is not None:
            sel &= edge_mask
        idx = np.flatnonzero(sel)
        vals = np.einsum("kd,kd->k", a[m.edge_triangle[idx]], m.edge_normals[idx])
        return float(np.sum(vals * m.edge_lengths[idx]))

    def summary(self) -> dict:
        return {
            "U1": float(self.U1), "U2": float(self.U2),
            "flux_R1": self.fluxes.get("R1"), "flux_R2": self.fluxes.get("R2"),
            "flux_outer": self.fluxes.get("outer"),
            "max_H_grad": self.max_H_grad, "max_H_grad_location": self.max_location.tolist(),
            "energy": self.energy, "newton_iterations": self.newton_iterations,
            "converged": self.converged, "n_nodes": self.mesh.n_nodes,
            "n_triangles": self.mesh.n_triangles, "n_dofs": self.problem.n_dofs,
        }


def newton_minimize(problem: DiscreteProblem, x0, eps: float, gtol: float, opts: SolverOptions, history: list):
    """Damped Newton with Armijo backtracking on the regularised energy."""
    x = np.array(x0, dtype=float)
    problem.eps = eps
    E, g, K = problem.assemble(x)
    for it in range(opts.max_newton):
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        history.append({"eps": eps, "iter": it, "energy": E, "gnorm": gnorm})
        if gnorm <= gtol:
            return x, it
        d = splu(K).solve(-g)
        slope = float(g @ d)
        if slope >= 0:
            d = -g
            slope = -float(g @ g)
        t = 1.0
        while True:
            xt = x + t * d
            Et = problem.energy(xt)
            if Et <= E + opts.armijo * t * slope:
                break
            # decrease below round-off: energy is flat to machine precision
            if abs(t * slope) <= 1e-13 * max(abs(E), 1e-300) and Et <= E + 1e-13 * abs(E):
                break
            t *= 0.5
            if t < 1e-12:
                raise SolverError(f"line search failed at eps={eps:.3e}, |g|={gnorm:.3e}", history)
        history[-1]["step"] = t
        x = xt
        E, g, K = problem.assemble(x)
    gnorm = float(np.max(np.abs(g)))
    history.append({"eps": eps, "iter": opts.max_newton, "energy": E, "gnorm": gnorm})
    raise SolverError(
        f"Newton did not converge in {opts.max_newton} iterations at eps={eps:.3e} (|g|={gnorm:.3e}, tol={gtol:.3e})",
        history,
    )


def solve_problem(problem: DiscreteProblem, opts: SolverOptions | None = None, x0=None,
                  config: TwoInclusionConfig | None = None) -> SolveResult:
    """Minimise with eps-continuation from ``eps_start`` to ``eps_floor`` (times ``G_char``)."""
    opts = opts or SolverOptions()
    t_start = time.perf_counter()
    history: list = []
    x = problem.initial_guess(opts.initial, opts.seed) if x0 is None else np.asarray(x0, dtype=float)
    G = problem.G_char
    eps_list = []
    e = opts.eps_start
    # a start far rougher than the datum (random guesses) is first relaxed at an eps
    # matching its typical gradient, where Newton sees a nearly quadratic energy
    rough = float(np.median(problem.norm.value(problem.mesh.gradients(problem.nodal(x)))))
    while rough > 10.0 * G and e * G < rough:
        e /= opts.eps_factor
    while e > opts.eps_floor * (1 + 1e-9):
        eps_list.append(e * G)
        e *= opts.eps_factor
    eps_list.append(opts.eps_floor * G)
    iters = 0
    for k, eps in enumerate(eps_list):
        final = k == len(eps_list) - 1
        tol = (opts.gtol if final else opts.gtol_stage) * problem.scale
        x, it = newton_minimize(problem, x, eps, tol, opts, history)
        iters += it
        log.debug("eps=%.3e newton=%d energy=%.12g", eps, it, history[-1]["energy"])
    return _finish(problem, x, history, iters, config, time.perf_counter() - t_start)


def _finish(problem, x, history, iters, config, wall):
    m = problem.mesh
    u = problem.nodal(x)
    grad = m.gradients(u)
    Hg = problem.norm.value(grad)
    imax = int(np.argmax(Hg))
    U = {tg: float(x[d]) for tg, d in problem.floating}
    for tg, val in problem.fixed.items():
        U[tg] = float(val)
    residual = problem.node_residual(u)
    tags = m.node_tags
    fluxes, pw, apw = {}, {}, {}
    a0 = problem.flux_density(grad, 0.0)
    for name, tg in (("outer", Tag.OUTER), ("R1", Tag.INCLUSION_1), ("R2", Tag.INCLUSION_2)):
        if not np.any(tags == tg):
            continue
        fluxes[name] = float(-np.sum(residual[tags == tg]))
        idx = np.flatnonzero(m.edge_tags == tg)
        vals = np.einsum("kd,kd->k", a0[m.edge_triangle[idx]], m.edge_normals[idx]) * m.edge_lengths[idx]
        pw[name] = float(np.sum(vals))
        apw[name] = float(np.sum(np.abs(vals)))
    return SolveResult(
        problem=problem, u=u, U=U, grad=grad, H_grad=Hg, max_H_grad=float(Hg[imax]),
        max_location=m.centroids[imax].copy(), fluxes=fluxes, pointwise_fluxes=pw, abs_pointwise_fluxes=apw,
        energy=problem.energy(x), history=history, newton_iterations=iters, converged=True,
        residual=residual, config=config, wall_s=wall,
    )


def build_problem(config: TwoInclusionConfig, mesh: Mesh) -> DiscreteProblem:
    return DiscreteProblem(mesh, config.p, config.norm, config.phi, G_char=config.G_char, diameter=config.diameter)


def solve(config: TwoInclusionConfig, mesh: Mesh, opts: SolverOptions | None = None) -> SolveResult:
    """Solve the floating-conductor problem for ``config`` on ``mesh``."""
    return solve_problem(build_problem(config, mesh), opts, config=config)


def assemble_energy_gradient_hessian(problem: DiscreteProblem, dofs, eps=None):
    return problem.assemble(dofs, eps)


# -- flux extraction ------------------------------------------------------------------


def neck_boundary_nodes(result: SolveResult, neck: NeckGeometry, tag=Tag.INCLUSION_1) -> np.ndarray:
    """Boundary nodes of an inclusion lying on ``dD cap dN_delta(w)``."""
    m = result.mesh
    x = m.nodes
    return (m.node_tags == tag) & (neck.transverse(x) < neck.w) & (neck.H0.value(x) < neck.Rmax)


def extract_fluxes(result: SolveResult, neck: NeckGeometry) -> dict:
    """Inclusion fluxes and the split of the ``D1`` flux at the neck of width ``w``.

    ``I_w`` is the flux through ``dD1`` inside the neck, ``I_out`` through the
    rest of ``dD1``; both are variationally consistent, so
    ``I_w + I_out = R1`` holds to round-off.  Pointwise (edge-midpoint)
    counterparts are reported with a ``_pointwise`` suffix.
    """
    m = result.mesh
    on1 = m.node_tags == Tag.INCLUSION_1
    in_w = neck_boundary_nodes(result, neck)
    e_mid = m.edge_midpoints
    e_in = (m.edge_tags == Tag.INCLUSION_1) & (neck.transverse(e_mid) < neck.w) & (neck.H0.value(e_mid) < neck.Rmax)
    out = {
        "R1": result.fluxes.get("R1", 0.0),
        "R2": result.fluxes.get("R2", 0.0),
        "outer": result.fluxes.get("outer", 0.0),
        "I_w": result.variational_flux(in_w),
        "I_out": result.variational_flux(on1 & ~in_w),
        "I_w_pointwise": result.pointwise_flux(Tag.INCLUSION_1, e_in),
        "I_out_pointwise": result.pointwise_flux(Tag.INCLUSION_1, (m.edge_tags == Tag.INCLUSION_1) & ~e_in),
    }
    return out


def max_outside_neck(result: SolveResult, neck: NeckGeometry) -> tuple[float, np.ndarray]:
    """Largest elementwise ``H(grad u)`` over triangles whose centroid is outside the neck."""
    c = result.mesh.centroids
    outside = ~neck.in_neck(c)
    if not np.any(outside):
        return 0.0, np.full(2, np.nan)
    i = np.flatnonzero(outside)[np.argmax(result.H_grad[outside])]
    return float(result.H_grad[i]), c[i].copy()


# -- R0 ---------------------------------------------------------------------------------


@dataclass
class R0Estimate:
    value: float
    spread: float
    exponent: float | None
    values: np.ndarray
    deltas: np.ndarray
    warning: str | None = None


def extrapolate_limit(deltas, values, exponent: float | None = None) -> R0Estimate:
    """Richardson-style limit ``delta -> 0`` of ``values ~ V0 + a delta^gamma``.

    With four or more points ``gamma`` is fitted on the last four (bounded to
    ``[0.1, 2]``) unless given, otherwise ``gamma = 1/2`` is used.  The
    spread is the distance between the limit and the value at the smallest
    ``delta``, or the tail range if the tail is not monotone.
    """
    d = np.asarray(deltas, dtype=float)
    v = np.asarray(values, dtype=float)
    order = np.argsort(-d)
    d, v = d[order], v[order]
    if len(d) < 2 or np.any(np.diff(d) >= 0):
        raise ValueError("need a strictly decreasing delta sequence of length >= 2")
    warning = None
    tail = v[-3:] if len(v) >= 3 else v
    dv = np.diff(tail)
    if len(dv) >= 2 and np.sign(dv[0]) != np.sign(dv[-1]):
        warning = "non-monotone tail; reporting the widest spread"
        val = float(v[-1])
        return R0Estimate(val, float(np.ptp(tail)), None, v, d, warning)
    gamma, val = exponent, None
    if gamma is None and len(d) >= 4:
        dd, vv = d[-4:], v[-4:]
        try:
            popt, _ = curve_fit(lambda x, V0, a, g: V0 + a * x**g, dd, vv,
                                p0=(vv[-1], (vv[0] - vv[-1]) / dd[0] ** 0.5, 0.5),
                                bounds=([-np.inf, -np.inf, 0.1], [np.inf, np.inf, 2.0]), maxfev=20000)
            val, gamma = float(popt[0]), float(popt[2])
        except (RuntimeError, ValueError):
            gamma = None
    if val is None:
        gamma = 0.5 if gamma is None else gamma
        A = np.stack([np.ones(2), d[-2:] ** gamma], 1)
        val = float(np.linalg.solve(A, v[-2:])[0])
    spread = abs(val - float(v[-1]))
    return R0Estimate(val, spread, gamma, v, d, warning)


DEFAULT_R0_DELTAS = (1e-3, 5e-4, 2e-4, 1e-4)


def estimate_R0(config: TwoInclusionConfig, w: float, deltas=DEFAULT_R0_DELTAS, mesh_kwargs=None, opts=None,
                outside_flux=None) -> R0Estimate:
    """Limit of the ``D1`` flux outside the neck of width ``w`` as ``delta -> 0``.

    ``outside_flux`` may carry precomputed values (one per ``delta``);
    otherwise one solve per ``delta`` is run, with ``h_neck = delta / 5``
    unless ``mesh_kwargs`` is given.
    """
    from .mesh import generate_mesh

    if outside_flux is None:
        outside_flux = []
        for d in deltas:
            cfg = config.with_delta(d)
            mesh = generate_mesh(cfg, **(mesh_kwargs if mesh_kwargs is not None else {"h_neck": d / 5}))
            res = solve(cfg, mesh, opts)
            outside_flux.append(extract_fluxes(res, cfg.neck(w))["I_out"])
    if config.phi.is_constant:
        return R0Estimate(0.0, 0.0, None, np.zeros(len(deltas)), np.asarray(deltas, float))
    return extrapolate_limit(deltas, outside_flux)


def fit_neck_flux_constant(widths, neck_flux, R0: float, N: int = 2) -> dict:
    """Fit ``|I_delta(w) + R0| ~ C w^(N-1)`` through the origin.

    ``neck_flux`` holds ``I_delta(w)``, the ``D1`` flux through the neck part
    of the boundary, at one fixed ``delta``.  Since the total ``D1`` flux
    vanishes, ``I_delta(w) = -I_out`` and the deviation from the touching
    limit is measured by ``|I_delta(w) + R0|``.  The residual is the largest
    relative misfit ``|C w^(N-1) - d| / d``.
    """
    W = np.asarray(widths, dtype=float) ** (N - 1)
    d = np.abs(np.asarray(neck_flux, dtype=float) + R0)
    C = float(W @ d / (W @ W))
    rel = np.abs(C * W - d) / np.where(d > 0, d, 1.0)
    return {"C_hat": C, "deviation": d, "residual": float(rel.max()),
            "loglog_slope": float(np.polyfit(np.log(W), np.log(d), 1)[0]) if np.all(d > 0) else None}
