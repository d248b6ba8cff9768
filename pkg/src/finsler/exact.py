"""Closed-form radial solutions on Wulff annuli and the barriers built from them.

A radial solution depends on ``x`` only through ``rho = H0(x - y0)``.  With
``a = (p - N) / (p - 1)`` it is an affine function of ``rho**a`` for
``1 < p < N`` and of ``log rho`` for ``p = N``.  Because ``H(grad H0) = 1``,
``H(grad v) = |dv/drho|``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize_scalar
from scipy.special import gamma as gamma_fn

from .anisotropy import AnisotropicNorm
from .geometry import TwoInclusionConfig, WulffInclusion

LOG_BRANCH_TOL = 1e-6


class DomainError(ValueError):
    """Evaluation point outside the annulus."""


def wulff_volume(H0: AnisotropicNorm) -> float:
    """Lebesgue measure of the unit ball ``{H0 < 1}``."""
    n = H0.dim
    if H0.kind == "euclidean":
        return float(np.pi ** (n / 2) / gamma_fn(n / 2 + 1))
    if H0.kind == "quadratic":
        return float(np.pi ** (n / 2) / gamma_fn(n / 2 + 1) / np.sqrt(np.linalg.det(H0.A)))
    q = H0.q
    return float((2.0 * gamma_fn(1.0 + 1.0 / q)) ** n / gamma_fn(1.0 + n / q))


@dataclass(frozen=True)
class RadialAnnulusSolution:
    """``Delta^H_p v = 0`` on ``{r < H0(x - y0) < R}`` with ``v = C_r`` inside, ``C_R`` outside.

    ``H0`` is the norm measuring positions; gradients are measured by its dual.
    """

    center: np.ndarray
    r: float
    R: float
    C_r: float
    C_R: float
    p: float
    H0: AnisotropicNorm

    def __post_init__(self):
        if not 0 < self.r < self.R:
            raise DomainError(f"need 0 < r < R, got r={self.r}, R={self.R}")
        if not 1 < self.p <= self.N + LOG_BRANCH_TOL:
            raise ValueError(f"p must lie in (1, N], got {self.p}")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))

    @property
    def N(self) -> int:
        return self.H0.dim

    @property
    def log_branch(self) -> bool:
        return abs(self.p - self.N) < LOG_BRANCH_TOL

    @property
    def exponent(self) -> float:
        return (self.p - self.N) / (self.p - 1.0)

    def _rho(self, x, check=True):
        rho = self.H0.value(np.asarray(x, dtype=float) - self.center)
        if check:
            tol = 1e-12 * self.R
            if np.any(rho < self.r - tol) or np.any(rho > self.R + tol):
                raise DomainError("point outside the annulus")
        return rho

    def profile(self, rho):
        """``v`` as a function of ``rho``."""
        rho = np.asarray(rho, dtype=float)
        dC = self.C_r - self.C_R
        if self.log_branch:
            return dC * np.log(rho / self.R) / np.log(self.r / self.R) + self.C_R
        a = self.exponent
        return dC * (rho**a - self.R**a) / (self.r**a - self.R**a) + self.C_R

    def profile_derivative(self, rho):
        rho = np.asarray(rho, dtype=float)
        dC = self.C_r - self.C_R
        if self.log_branch:
            return dC / (rho * np.log(self.r / self.R))
        a = self.exponent
        return dC * a * rho ** (a - 1.0) / (self.r**a - self.R**a)

    def value(self, x, check: bool = True):
        return self.profile(self._rho(x, check))

    __call__ = value

    def gradient(self, x, check: bool = True):
        x = np.asarray(x, dtype=float)
        rho = self._rho(x, check)
        return self.profile_derivative(rho)[..., None] * self.H0.gradient(x - self.center)

    def gradient_Hnorm(self, x, check: bool = True):
        """``H(grad v)``; equal to ``|dv/drho|`` since ``H(grad H0) = 1``."""
        return np.abs(self.profile_derivative(self._rho(x, check)))

    def boundary_gradient(self) -> float:
        """``H(grad v)`` on the inner sphere ``H0 = r``."""
        dC = abs(self.C_r - self.C_R)
        N, p, r, R = self.N, self.p, self.r, self.R
        if self.log_branch:
            return dC / (r * np.log(R / r))
        a = self.exponent
        return (N - p) / (p - 1.0) * dC * r ** ((1.0 - N) / (p - 1.0)) / (r**a - R**a)

    def inner_flux(self) -> float:
        """Flux through the inner sphere, normal pointing into the annulus.

        On ``H0 = r`` one has ``grad_xi H(grad H0(x)) = x / r``, so the integrand
        is ``sign(v') |v'|^{p-1} / |grad H0|`` and the surface integral of
        ``1/|grad H0|`` is ``N |B_1| r^{N-1}``.
        """
        d = float(self.profile_derivative(self.r))
        return float(np.sign(d) * abs(d) ** (self.p - 1.0) * self.N * wulff_volume(self.H0) * self.r ** (self.N - 1))


def radial_value(sol: RadialAnnulusSolution, x):
    return sol.value(x)


def radial_gradient_Hnorm(sol: RadialAnnulusSolution, x):
    return sol.gradient_Hnorm(x)


def boundary_gradient(sol: RadialAnnulusSolution) -> float:
    return sol.boundary_gradient()


# -- touching balls ---------------------------------------------------------------------


@dataclass(frozen=True)
class TouchingRadii:
    """Concentric ball pairs at a point ``P`` of ``dD1``.

    ``y0`` is the centre of the ball of radius ``r1`` tangent to ``dD1`` at ``P``
    from inside; ``r2`` is the radius of the concentric ball touching ``D2``.
    ``z0`` is the centre of the ball of radius ``rho2`` tangent to ``dD1`` at
    ``P`` from outside; ``rho1`` is the concentric ball touching ``dD2`` from
    inside.
    """

    P: np.ndarray
    y0: np.ndarray
    r1: float
    r2: float
    z0: np.ndarray
    rho1: float
    rho2: float
    degenerate: bool = False


def _unit_direction(D: WulffInclusion, P) -> np.ndarray:
    """``omega`` with ``P = c + R omega`` and ``H0(omega) = 1``."""
    return (np.asarray(P, dtype=float) - D.center) / D.radius


def touching_radii_for(D1: WulffInclusion, D2: WulffInclusion, P, r1: float, tol: float = 1e-9) -> TouchingRadii:
    """Exact touching radii for two Wulff shapes of the same norm."""
    H0 = D1.H0
    P = np.asarray(P, dtype=float)
    lev = float(D1.level(P))
    if abs(lev - 1.0) > tol:
        raise ValueError(f"P is not on the boundary of D1 (H0 level {lev:.12g})")
    if not 0 < r1 < D1.radius:
        raise ValueError(f"r1 must lie in (0, R1), got {r1}")
    om = _unit_direction(D1, P)
    y0 = P - r1 * om
    # for homothetic Wulff shapes dist_H0(y, c + R W) = H0(c - y) - R
    r2 = float(H0.value(D2.center - y0)) - D2.radius

    def f(s):
        return float(H0.value(P + s * om - D2.center)) - (D2.radius - r1)

    T = float(H0.value(D2.center - P)) + D2.radius
    res = minimize_scalar(f, bounds=(0.0, T), method="bounded", options={"xatol": 1e-13})
    if res.fun > 0:
        # the normal ray at P misses D2 (P far from the neck): no D2-side pair
        rho2, z0 = np.nan, np.full_like(P, np.nan)
    else:
        rho2 = brentq(f, 0.0, res.x, xtol=1e-15) if f(0.0) > 0 else 0.0
        z0 = P + rho2 * om
    degenerate = r2 - r1 <= 1e-14 * r1
    if degenerate:
        warnings.warn("touching configuration: r2 = r1", stacklevel=2)
    return TouchingRadii(P=P, y0=y0, r1=r1, r2=r2, z0=z0, rho1=r1, rho2=float(rho2), degenerate=degenerate)


def touching_radii(config: TwoInclusionConfig, P, w: float, c: float = 0.5) -> TouchingRadii:
    """Radii at ``P`` on ``dD1`` with ``r1 = c w``."""
    return touching_radii_for(config.D1, config.D2, P, c * w)


def closest_point(config: TwoInclusionConfig) -> np.ndarray:
    """Point of ``dD1`` nearest to ``D2`` (top of ``D1`` on the symmetry axis)."""
    return config.D1.center + config.R1 * config.placement.P_hat


def flux_bounds(p: float, U1: float, U2: float, radii: TouchingRadii, slack: float = 0.0) -> tuple[float, float]:
    """Bounds on the pointwise flux density at ``P`` on ``dD1`` (normal into the gap).

    The barrier on ``{r1 < H0(x - y0) < r2}`` lies below ``u`` and touches it
    at ``P``, so it caps the flux magnitude by ``(dU/(r2-r1))^{p-1}``; the
    barrier centred in ``D2`` gives the floor ``(dU/(rho2-rho1))^{p-1}``.  Since
    ``r2 - r1 <= dist(P, D2) <= rho2 - rho1`` the interval for ``U1 >= U2`` is
    ``[-(dU/(r2-r1))^{p-1} - C, -(dU/(rho2-rho1))^{p-1} + C]``, and its mirror
    image for ``U1 < U2``.
    """
    if not np.isfinite(radii.rho2):
        raise ValueError("no D2-side touching ball at this point; flux bounds need P in the neck")
    dU = abs(U1 - U2)
    big = (dU / (radii.r2 - radii.r1)) ** (p - 1.0) if dU > 0 else 0.0
    small = (dU / (radii.rho2 - radii.rho1)) ** (p - 1.0) if dU > 0 else 0.0
    if U1 >= U2:
        return -big - slack, -small + slack
    return small - slack, big + slack


def neck_flux_bounds(config: TwoInclusionConfig, P, U1: float, U2: float, w: float = 0.3, c: float = 0.5,
                        slack: float = 0.0) -> tuple[float, float]:
    """Flux-density interval at ``P`` from the touching radii of ``config``."""
    return flux_bounds(config.p, U1, U2, touching_radii(config, P, w, c), slack)


# -- barriers away from the neck -------------------------------------------------------


def outer_distance(config: TwoInclusionConfig, y) -> float:
    """``H0``-distance from ``y`` to the complement of the outer domain."""
    y = np.asarray(y, dtype=float)
    L = config.half_width
    if config.domain_shape == "wulff":
        return L - float(config.H0.value(y))
    # dist_H0 to the half-plane {e.x >= L} is (L - e.y) / H(e)
    return min((L - float(e @ y)) / float(config.norm.value(e)) for e in config._side_directions())


@dataclass(frozen=True)
class BarrierPair:
    upper: RadialAnnulusSolution | None
    lower: RadialAnnulusSolution | None
    z: np.ndarray
    r1: float
    r2: float
    constant: float | None = None

    def contains(self, x) -> np.ndarray:
        rho = self.upper.H0.value(np.asarray(x, dtype=float) - self.upper.center) if self.upper else None
        if rho is None:
            return np.zeros(np.shape(x)[:-1], dtype=bool)
        return (rho >= self.r1) & (rho <= self.r2)


def barrier_solutions_for_boundary_bound(config: TwoInclusionConfig, z, U1: float, w: float, c: float = 0.5,
                                         phi_range=None) -> BarrierPair:
    """Upper and lower radial barriers for ``u`` at ``z`` on ``dD1`` away from the neck.

    The inner ball of radius ``r1 = c w`` is tangent to ``dD1`` at ``z``; the
    outer radius is the distance from its centre to ``D2`` or to the outer
    boundary, whichever is smaller, so the annulus stays inside the domain.
    """
    lo, hi = config.phi_range() if phi_range is None else phi_range
    rad = touching_radii(config, z, w, c)
    r2 = min(rad.r2, outer_distance(config, rad.y0))
    if hi - lo <= 0 and abs(U1 - hi) <= 1e-14 * max(1.0, abs(hi)):
        return BarrierPair(None, None, np.asarray(z, float), rad.r1, r2, constant=float(U1))
    kw = dict(center=rad.y0, r=rad.r1, R=r2, C_r=float(U1), p=config.p, H0=config.H0)
    return BarrierPair(RadialAnnulusSolution(C_R=hi, **kw), RadialAnnulusSolution(C_R=lo, **kw),
                       np.asarray(z, float), rad.r1, r2)


def alpha_limit(config: TwoInclusionConfig, w: float, c: float = 0.5, n: int = 2000) -> float:
    """``min r2 / r1`` over ``dD1`` outside the neck of width ``w`` in the touching limit.

    The geometry is rebuilt with ``delta = 0``; ``r2`` is capped by the
    distance to the outer boundary as in the barrier construction.
    """
    from .geometry import place_inclusions

    pl = place_inclusions(config.H0, config.R1, config.R2, 0.0)
    D1 = WulffInclusion(pl.c1, config.R1, config.H0)
    D2 = WulffInclusion(pl.c2, config.R2, config.H0)
    neck = config.neck(w)
    r1 = c * w
    th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    best = np.inf
    for P in D1.boundary_point(th):
        if neck.transverse(P) < w:
            continue
        rad = touching_radii_for(D1, D2, P, r1)
        # outer boundary of the actual domain, shifted by the centre offset at delta = 0
        r2 = min(rad.r2, outer_distance(config, rad.y0 + (config.placement.c1 - pl.c1)))
        best = min(best, r2 / r1)
    return float(best)


def boundary_gradient_bound(p: float, N: int, dC: float, w: float, alpha: float, c: float = 0.5) -> float:
    """Barrier bound on ``H(grad u)`` at a boundary point outside the neck given ``r2 >= alpha r1``."""
    if alpha <= 1:
        raise ValueError("alpha must exceed 1")
    if abs(p - N) < LOG_BRANCH_TOL:
        return abs(dC) / (c * w * np.log(alpha))
    a = (p - N) / (p - 1.0)
    return (N - p) / (p - 1.0) * abs(dC) / (c * w * (1.0 - alpha**a))
