"""Wulff-shape inclusions, anisotropic distances and the neck between them.

Coordinates: the two inclusions sit on the ``x_N`` axis with the gap centred
at the origin.  ``D1`` is the lower inclusion, ``D2`` the upper one, and the
limit touching point of ``D1`` is ``c1 + R1 * P_hat`` with
``P_hat = e_N / H0(e_N)``.  Only ``N = 2`` geometries are meshed.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .anisotropy import AnisotropicNorm


class ConfigError(ValueError):
    """Invalid problem configuration."""


@dataclass(frozen=True)
class WulffInclusion:
    """The Wulff shape ``{x : H0(x - center) <= radius}``."""

    center: np.ndarray
    radius: float
    H0: AnisotropicNorm = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not self.radius > 0:
            raise ConfigError(f"inclusion radius must be positive, got {self.radius}")

    def level(self, x) -> np.ndarray:
        """``H0(x - center)``; the boundary is the level set ``radius``."""
        return self.H0.value(np.asarray(x, dtype=float) - self.center)

    def contains(self, x, strict: bool = True) -> np.ndarray:
        lv = self.level(x)
        return lv < self.radius if strict else lv <= self.radius

    def boundary_point(self, theta) -> np.ndarray:
        """Boundary point in Euclidean polar direction ``theta`` (2-D)."""
        theta = np.asarray(theta, dtype=float)
        d = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        return self.center + self.radius * d / self.H0.value(d)[..., None]

    def project(self, x) -> np.ndarray:
        """Radial (in the ``H0`` sense) projection onto the boundary."""
        v = np.asarray(x, dtype=float) - self.center
        return self.center + self.radius * v / self.H0.value(v)[..., None]

    def outward_normal(self, x) -> np.ndarray:
        """Euclidean outward unit normal at boundary points ``x``."""
        g = self.H0.gradient(np.asarray(x, dtype=float) - self.center)
        return g / np.linalg.norm(g, axis=-1, keepdims=True)


def wulff_distance(D1: WulffInclusion, D2: WulffInclusion, H0: AnisotropicNorm | None = None) -> float:
    """``H0``-distance between two Wulff shapes of the same norm.

    A negative value means the shapes overlap; a warning is emitted.
    """
    H0 = D1.H0 if H0 is None else H0
    d = float(H0.value(D2.center - D1.center) - D1.radius - D2.radius)
    if d < 0:
        warnings.warn(f"inclusions overlap (signed distance {d:.3e})", stacklevel=2)
    return d


@dataclass(frozen=True)
class Placement:
    c1: np.ndarray
    c2: np.ndarray
    t0: float
    P_hat: np.ndarray


def place_inclusions(H0: AnisotropicNorm, R1: float, R2: float, delta: float) -> Placement:
    """Centres on the ``x_N`` axis such that ``dist_H0(D1, D2) = delta``."""
    if delta < 0:
        raise ConfigError(f"delta must be >= 0 (overlapping inclusions), got {delta}")
    if R1 <= 0 or R2 <= 0:
        raise ConfigError("inclusion radii must be positive")
    n = H0.dim
    eN = np.zeros(n)
    eN[-1] = 1.0
    t0 = 1.0 / float(H0.value(eN))
    # gap centred at the origin: D1 top at -delta/2 * t0 e_N, D2 bottom at +delta/2 * t0 e_N
    c1 = -(R1 + 0.5 * delta) * t0 * eN
    c2 = (R2 + 0.5 * delta) * t0 * eN
    return Placement(c1=c1, c2=c2, t0=t0, P_hat=t0 * eN)


def neck_matrix_Q(H0: AnisotropicNorm, P_hat) -> np.ndarray:
    """Upper-left ``(N-1) x (N-1)`` block of ``hess H0`` at the touching direction."""
    Hs = H0.hessian(np.asarray(P_hat, dtype=float))
    n = H0.dim
    Q = 0.5 * (Hs[: n - 1, : n - 1] + Hs[: n - 1, : n - 1].T)
    return Q


def _sqrtm_spd(Q: np.ndarray) -> np.ndarray:
    ev, V = np.linalg.eigh(Q)
    return (V * np.sqrt(ev)) @ V.T


class BoundaryDatum:
    """Boundary potential on the outer boundary.

    kinds: ``linear_xN`` (``x_N``), ``affine`` (``a . x + b``), ``constant``
    and ``tabulated`` (periodic linear interpolation in the polar angle).
    """

    def __init__(self, kind: str = "linear_xN", coefficients=None, offset: float = 0.0,
                 value: float = 0.0, angles=None, values=None):
        self.kind = kind
        if kind == "linear_xN":
            self.coefficients = np.array([0.0, 1.0])
            self.offset = 0.0
        elif kind == "affine":
            if coefficients is None:
                raise ConfigError("affine phi requires coefficients")
            self.coefficients = np.asarray(coefficients, dtype=float)
            self.offset = float(offset)
        elif kind == "constant":
            self.coefficients = np.zeros(2)
            self.offset = float(value)
        elif kind == "tabulated":
            if angles is None or values is None or len(angles) != len(values) or len(angles) < 2:
                raise ConfigError("tabulated phi requires matching angles and values")
            order = np.argsort(np.mod(angles, 2 * np.pi))
            self.angles = np.mod(np.asarray(angles, dtype=float), 2 * np.pi)[order]
            self.values = np.asarray(values, dtype=float)[order]
        else:
            raise ConfigError(f"unknown phi kind {kind!r}")

    @classmethod
    def from_spec(cls, spec) -> BoundaryDatum:
        if isinstance(spec, str):
            return cls(spec)
        spec = dict(spec)
        kind = spec.pop("kind", "linear_xN")
        try:
            return cls(kind, **spec)
        except TypeError as exc:
            raise ConfigError(f"bad phi spec: {exc}") from None

    def to_spec(self):
        if self.kind == "linear_xN":
            return "linear_xN"
        if self.kind == "affine":
            return {"kind": "affine", "coefficients": self.coefficients.tolist(), "offset": self.offset}
        if self.kind == "constant":
            return {"kind": "constant", "value": self.offset}
        return {"kind": "tabulated", "angles": self.angles.tolist(), "values": self.values.tolist()}

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "tabulated":
            th = np.mod(np.arctan2(x[..., 1], x[..., 0]), 2 * np.pi)
            return np.interp(th, self.angles, self.values, period=2 * np.pi)
        return x @ self.coefficients + self.offset

    @property
    def is_constant(self) -> bool:
        if self.kind == "tabulated":
            return bool(np.ptp(self.values) == 0)
        return bool(np.all(self.coefficients == 0))


@dataclass(frozen=True)
class NeckGeometry:
    """Touching direction, curvature matrix ``Q`` and the neck of width ``w``."""

    P_hat: np.ndarray
    t0: float
    Q: np.ndarray
    sqrtQ: np.ndarray
    dN_H0: float
    w: float
    Rmax: float
    H0: AnisotropicNorm = field(repr=False)
    inclusions: tuple = field(default=(), repr=False)

    @property
    def det_Q(self) -> float:
        return float(np.linalg.det(self.Q))

    def transverse(self, x) -> np.ndarray:
        """``|Q^{1/2} x'|`` for points ``x``."""
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x[..., :-1] @ self.sqrtQ.T, axis=-1)

    def in_neck(self, x, w: float | None = None) -> np.ndarray:
        """Strict membership in ``N_delta(w)``; points inside an inclusion are excluded."""
        w = self.w if w is None else w
        x = np.asarray(x, dtype=float)
        inside = (self.transverse(x) < w) & (self.H0.value(x) < self.Rmax)
        for D in self.inclusions:
            inside &= ~D.contains(x, strict=False)
        return inside

    def neck_boundary_walls(self, w: float | None = None) -> list[dict]:
        """The two lateral walls ``|Q^{1/2} x'| = w`` (2-D): ``x_1 = +-w / sqrt(Q)``."""
        w = self.w if w is None else w
        if self.Q.shape != (1, 1):
            raise NotImplementedError("walls are only tabulated in 2-D")
        x1 = w / float(self.sqrtQ[0, 0])
        return [{"side": "+", "x1": x1}, {"side": "-", "x1": -x1}]


def upper_graph(H0: AnisotropicNorm, u: float, sign: float = 1.0, xtol: float = 1e-14) -> float:
    """Height ``t`` with ``H0(u, sign * t) = 1`` on the far side (2-D unit Wulff shape).

    ``sign = +1`` gives the upper boundary, ``-1`` the lower one (returned as a
    positive distance below the axis).
    """
    def f(t):
        return float(H0.value(np.array([u, sign * t]))) - 1.0

    c1, _ = H0.equivalence_constants()
    T = 2.0 / c1 + abs(u)
    res = minimize_scalar(f, bounds=(-T, T), method="bounded", options={"xatol": 1e-12})
    if res.fun >= 0:
        raise ConfigError(f"offset {u} lies outside the unit Wulff shape")
    return brentq(f, res.x, T, xtol=xtol, rtol=4 * np.finfo(float).eps)


class TwoInclusionConfig:
    """Domain, two Wulff inclusions at ``H0``-distance ``delta``, datum and exponent."""

    def __init__(self, norm: AnisotropicNorm, p: float = 2.0, R1: float = 1.0, R2: float = 1.0,
                 delta: float = 0.1, phi: BoundaryDatum | None = None, half_width=None,
                 K: float = 1.0, domain_shape: str = "square", single_inclusion: bool = False):
        self.norm = norm
        self.H0 = norm.dual()
        self.N = norm.dim
        self.p = float(p)
        self.R1 = float(R1)
        self.R2 = float(R2)
        self.delta = float(delta)
        self.phi = BoundaryDatum() if phi is None else phi
        self.K = float(K)
        self.domain_shape = domain_shape
        self.single_inclusion = bool(single_inclusion)
        if not (1.0 < self.p <= self.N):
            raise ConfigError(f"p must satisfy p in (1, N] with N={self.N}, got p={self.p}")
        if self.N != 2:
            raise ConfigError("only N = 2 configurations can be meshed and solved")
        if self.delta <= 0:
            raise ConfigError(f"delta must be positive, got {self.delta}")
        if domain_shape not in ("square", "wulff"):
            raise ConfigError(f"unknown domain shape {domain_shape!r}")
        self.placement = place_inclusions(self.H0, self.R1, self.R2, self.delta)
        self.half_width = self._auto_half_width() if half_width is None else float(half_width)
        clearance = self.clearance()
        if clearance < self.K * (1 - 1e-12):
            raise ConfigError(
                f"clearance between the outer boundary and the inclusions is {clearance:.4g} < K={self.K}"
            )

    def replace(self, **changes) -> TwoInclusionConfig:
        """Copy with some parameters changed; the outer domain is kept unless
        ``half_width`` is passed explicitly."""
        kw = dict(norm=self.norm, p=self.p, R1=self.R1, R2=self.R2, delta=self.delta, phi=self.phi,
                  half_width=self.half_width, K=self.K, domain_shape=self.domain_shape,
                  single_inclusion=self.single_inclusion)
        kw.update(changes)
        return TwoInclusionConfig(**kw)

    def with_delta(self, delta: float) -> TwoInclusionConfig:
        return self.replace(delta=delta)

    # -- geometry ----------------------------------------------------------

    @cached_property
    def inclusions(self) -> tuple[WulffInclusion, ...]:
        D1 = WulffInclusion(self.placement.c1, self.R1, self.H0)
        if self.single_inclusion:
            return (D1,)
        return (D1, WulffInclusion(self.placement.c2, self.R2, self.H0))

    @property
    def D1(self) -> WulffInclusion:
        return self.inclusions[0]

    @property
    def D2(self) -> WulffInclusion:
        return WulffInclusion(self.placement.c2, self.R2, self.H0)

    def _side_directions(self):
        return [np.array(e, dtype=float) for e in ((1, 0), (-1, 0), (0, 1), (0, -1))]

    def _auto_half_width(self) -> float:
        if self.domain_shape == "wulff":
            return max(float(self.H0.value(D.center)) + D.radius for D in self.inclusions) + self.K
        L = 0.0
        for D in self.inclusions:
            for e in self._side_directions():
                L = max(L, float(D.center @ e) + (D.radius + self.K) * float(self.norm.value(e)))
        return L

    def clearance(self) -> float:
        """``dist_H0`` from the outer boundary to the inclusions."""
        L = self.half_width
        if self.domain_shape == "wulff":
            return min(L - float(self.H0.value(D.center)) - D.radius for D in self.inclusions)
        return min(
            (L - float(D.center @ e)) / float(self.norm.value(e)) - D.radius
            for D in self.inclusions
            for e in self._side_directions()
        )

    def outer_contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.domain_shape == "wulff":
            return self.H0.value(x) < self.half_width
        return np.all(np.abs(x) < self.half_width, axis=-1)

    @property
    def diameter(self) -> float:
        if self.domain_shape == "wulff":
            d = np.linspace(0, 2 * np.pi, 721)
            pts = np.stack([np.cos(d), np.sin(d)], -1)
            return 2.0 * self.half_width * float(np.max(1.0 / self.H0.value(pts)))
        return 2.0 * np.sqrt(2.0) * self.half_width

    def outer_boundary_samples(self, n: int = 4000) -> np.ndarray:
        L = self.half_width
        if self.domain_shape == "wulff":
            th = np.linspace(0, 2 * np.pi, n, endpoint=False)
            d = np.stack([np.cos(th), np.sin(th)], -1)
            return L * d / self.H0.value(d)[:, None]
        s = np.linspace(-L, L, n // 4)
        return np.concatenate([
            np.stack([s, np.full_like(s, -L)], -1), np.stack([s, np.full_like(s, L)], -1),
            np.stack([np.full_like(s, -L), s], -1), np.stack([np.full_like(s, L), s], -1),
        ])

    def phi_range(self) -> tuple[float, float]:
        v = self.phi(self.outer_boundary_samples())
        return float(v.min()), float(v.max())

    @property
    def G_char(self) -> float:
        """Characteristic gradient ``osc(phi) / diam(Omega)``."""
        lo, hi = self.phi_range()
        return (hi - lo) / self.diameter

    # -- neck ----------------------------------------------------------------

    @cached_property
    def Q(self) -> np.ndarray:
        return neck_matrix_Q(self.H0, self.placement.P_hat)

    def neck(self, w: float) -> NeckGeometry:
        P = self.placement.P_hat
        Q = self.Q
        if not np.all(np.isfinite(Q)) or np.linalg.eigvalsh(Q).min() <= 0:
            raise ConfigError(
                "the Wulff shape has degenerate curvature at the touching point "
                f"(Q = {Q.tolist()}); the neck is undefined for this norm"
            )
        dN = float(self.H0.gradient(P)[-1])
        return NeckGeometry(
            P_hat=P, t0=self.placement.t0, Q=self.Q, sqrtQ=_sqrtm_spd(self.Q), dN_H0=dN, w=float(w),
            Rmax=max(self.R1, self.R2), H0=self.H0, inclusions=self.inclusions,
        )

    def top_of_D1(self, x1) -> np.ndarray:
        """Height of the upper boundary of ``D1`` above abscissa ``x1``."""
        c = self.placement.c1
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        return np.array([c[1] + self.R1 * upper_graph(self.H0, (v - c[0]) / self.R1, +1.0) for v in x1])

    def bottom_of_D2(self, x1) -> np.ndarray:
        c = self.placement.c2
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        return np.array([c[1] - self.R2 * upper_graph(self.H0, (v - c[0]) / self.R2, -1.0) for v in x1])

    def gap_height(self, x1) -> np.ndarray:
        """Vertical gap between the inclusions at abscissa ``x1``."""
        return self.bottom_of_D2(x1) - self.top_of_D1(x1)

    def describe(self) -> dict:
        return {
            **self.norm.to_spec(), "p": self.p, "R1": self.R1, "R2": self.R2, "delta": self.delta,
            "phi": self.phi.to_spec(), "half_width": self.half_width, "K": self.K,
            "domain_shape": self.domain_shape, "single_inclusion": self.single_inclusion,
        }


def in_neck(x, neck: NeckGeometry, delta: float | None = None) -> np.ndarray:
    """Membership in ``N_delta(w)``; ``delta`` is implied by the neck's inclusions."""
    return neck.in_neck(x)
