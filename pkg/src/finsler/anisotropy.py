"""Smooth norm families with closed-form derivatives and exact duals.

Three families are supported: ``euclidean``, ``lq`` (``1 < q < inf``) and
``quadratic`` (``H(xi) = sqrt(xi^T A xi)`` with ``A`` symmetric positive
definite).  Every evaluation is vectorised over leading axes: ``xi`` may have
shape ``(..., N)``.

The norm ``H`` measures gradients; its dual ``H0`` measures positions and its
unit ball is the Wulff shape.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_TINY = 1e-300


class NormError(ValueError):
    """Invalid norm description or evaluation outside the domain."""


@dataclass(frozen=True)
class AnisotropicNorm:
    """A smooth, strictly convex norm on R^N.

    Parameters
    ----------
    kind : {"euclidean", "lq", "quadratic"}
    dim : int
        Ambient dimension N >= 2.
    q : float, optional
        Exponent of the ``lq`` family, must satisfy ``1 < q < inf``.
    A : array_like, optional
        SPD matrix of the ``quadratic`` family.
    """

    kind: str
    dim: int = 2
    q: float | None = None
    A: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.dim < 2:
            raise NormError(f"dimension must be >= 2, got {self.dim}")
        if self.kind == "euclidean":
            pass
        elif self.kind == "lq":
            if self.q is None or not np.isfinite(self.q) or self.q <= 1.0:
                raise NormError(f"lq norm needs 1 < q < inf (q must exceed 1), got q={self.q}")
        elif self.kind == "quadratic":
            if self.A is None:
                raise NormError("quadratic norm needs a matrix A")
            A = np.array(self.A, dtype=float)
            if A.shape != (self.dim, self.dim):
                raise NormError(f"A must be {self.dim}x{self.dim}, got shape {A.shape}")
            if not np.allclose(A, A.T, rtol=0, atol=1e-12 * np.abs(A).max()):
                raise NormError("A must be symmetric")
            A = 0.5 * (A + A.T)
            if np.linalg.eigvalsh(A).min() <= 0:
                raise NormError("A must be positive definite")
            A.setflags(write=False)
            object.__setattr__(self, "A", A)
        else:
            raise NormError(f"unknown norm kind {self.kind!r}")

    # -- constructors -----------------------------------------------------

    @classmethod
    def euclidean(cls, dim: int = 2) -> AnisotropicNorm:
        return cls("euclidean", dim)

    @classmethod
    def lq(cls, q: float, dim: int = 2) -> AnisotropicNorm:
        return cls("lq", dim, q=float(q))

    @classmethod
    def quadratic(cls, A, dim: int | None = None) -> AnisotropicNorm:
        A = np.asarray(A, dtype=float)
        return cls("quadratic", A.shape[0] if dim is None else dim, A=A)

    @classmethod
    def ellipse_wulff(cls, a: float, b: float) -> AnisotropicNorm:
        """Norm whose Wulff shape is the ellipse ``x1^2/a^2 + x2^2/b^2 <= 1``."""
        return cls.quadratic(np.diag([a * a, b * b]))

    @classmethod
    def from_spec(cls, spec: dict, dim: int = 2) -> AnisotropicNorm:
        """Build from a config mapping such as ``{"norm": "lq", "q": 4}``."""
        kind = spec.get("norm", "euclidean")
        if kind == "euclidean":
            return cls.euclidean(dim)
        if kind == "lq":
            if "q" not in spec:
                raise NormError("norm = 'lq' requires q")
            return cls.lq(spec["q"], dim)
        if kind == "quadratic":
            if "A" not in spec:
                raise NormError("norm = 'quadratic' requires A")
            return cls.quadratic(spec["A"], dim)
        raise NormError(f"unknown norm kind {kind!r}")

    def to_spec(self) -> dict:
        if self.kind == "euclidean":
            return {"norm": "euclidean"}
        if self.kind == "lq":
            return {"norm": "lq", "q": self.q}
        return {"norm": "quadratic", "A": self.A.tolist()}

    def __eq__(self, other):
        if not isinstance(other, AnisotropicNorm):
            return NotImplemented
        if (self.kind, self.dim) != (other.kind, other.dim):
            return False
        if self.kind == "lq":
            return np.isclose(self.q, other.q, rtol=1e-13, atol=0)
        if self.kind == "quadratic":
            return np.allclose(self.A, other.A, rtol=1e-12, atol=0)
        return True

    def __hash__(self):
        return hash((self.kind, self.dim, self.q))

    # -- evaluation ---------------------------------------------------------

    def value(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        if self.kind == "euclidean":
            return np.sqrt(np.einsum("...i,...i->...", xi, xi))
        if self.kind == "quadratic":
            return np.sqrt(np.maximum(np.einsum("...i,ij,...j->...", xi, self.A, xi), 0.0))
        # scale by max|xi_i| so large q does not overflow
        ax = np.abs(xi)
        m = ax.max(axis=-1)
        safe = np.where(m > 0, m, 1.0)
        r = ax / safe[..., None]
        return m * np.sum(r**self.q, axis=-1) ** (1.0 / self.q)

    __call__ = value

    def gradient(self, xi) -> np.ndarray:
        """Gradient of H, defined for ``xi != 0``."""
        xi = np.asarray(xi, dtype=float)
        h = self.value(xi)
        if np.any(h == 0):
            raise NormError("gradient of a norm is undefined at the origin")
        if self.kind == "euclidean":
            return xi / h[..., None]
        if self.kind == "quadratic":
            return np.einsum("ij,...j->...i", self.A, xi) / h[..., None]
        q = self.q
        r = np.abs(xi) / h[..., None]
        r = np.where(r < _TINY, 0.0, r)
        return np.sign(xi) * r ** (q - 1.0)

    def hessian(self, xi) -> np.ndarray:
        """Hessian of H, defined for ``xi != 0``; shape ``(..., N, N)``."""
        xi = np.asarray(xi, dtype=float)
        h = self.value(xi)
        if np.any(h == 0):
            raise NormError("hessian of a norm is undefined at the origin")
        n = self.dim
        if self.kind == "euclidean":
            g = xi / h[..., None]
            return (np.eye(n) - g[..., :, None] * g[..., None, :]) / h[..., None, None]
        if self.kind == "quadratic":
            Ax = np.einsum("ij,...j->...i", self.A, xi)
            return (self.A - Ax[..., :, None] * Ax[..., None, :] / (h * h)[..., None, None]) / h[
                ..., None, None
            ]
        q = self.q
        r = np.abs(xi) / h[..., None]
        r = np.where(r < _TINY, 0.0, r)
        g = np.sign(xi) * r ** (q - 1.0)
        rq = r**q
        # diagonal r_i^(q-2) (1 - r_i^q) with 1 - r_i^q summed from the other
        # components; the direct difference cancels near the coordinate axes
        others = np.sum(np.where(np.eye(n, dtype=bool), 0.0, rq[..., None, :]), axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(others > 0, r ** (q - 2.0) * others, 0.0)
        out = -g[..., :, None] * g[..., None, :]
        idx = np.arange(n)
        out[..., idx, idx] = d
        return (q - 1.0) / h[..., None, None] * out

    # H^2/2 is what the energy needs; it is C^1 at the origin
    def half_square_gradient(self, xi) -> np.ndarray:
        """Gradient of ``H^2/2`` (``H * grad H``), zero at the origin."""
        xi = np.asarray(xi, dtype=float)
        if self.kind == "euclidean":
            return xi.copy()
        if self.kind == "quadratic":
            return np.einsum("ij,...j->...i", self.A, xi)
        h = self.value(xi)
        safe = np.where(h > 0, h, 1.0)
        r = np.abs(xi) / safe[..., None]
        r = np.where(r < _TINY, 0.0, r)
        return h[..., None] * np.sign(xi) * r ** (self.q - 1.0)

    def half_square_hessian(self, xi) -> np.ndarray:
        """Hessian of ``H^2/2``.  It is 0-homogeneous; at the origin a fixed
        representative direction is used."""
        xi = np.asarray(xi, dtype=float)
        n = self.dim
        if self.kind == "euclidean":
            return np.broadcast_to(np.eye(n), xi.shape + (n,)).copy()
        if self.kind == "quadratic":
            return np.broadcast_to(self.A, xi.shape + (n,)).copy()
        h = self.value(xi)
        zero = h == 0
        if np.any(zero):
            xi = np.where(zero[..., None], 1.0, xi)
            h = np.where(zero, self.value(np.ones(n)), h)
        g = self.gradient(xi)
        return g[..., :, None] * g[..., None, :] + h[..., None, None] * self.hessian(xi)

    # -- duality -------------------------------------------------------------

    def dual(self) -> AnisotropicNorm:
        """Exact dual norm ``H0(x) = sup x.xi / H(xi)``."""
        if self.kind == "euclidean":
            return self
        if self.kind == "lq":
            return AnisotropicNorm.lq(self.q / (self.q - 1.0), self.dim)
        return AnisotropicNorm.quadratic(np.linalg.inv(self.A), self.dim)

    def equivalence_constants(self) -> tuple[float, float]:
        """``(c1, c2)`` with ``c1 |xi| <= H(xi) <= c2 |xi|``."""
        if self.kind == "euclidean":
            return 1.0, 1.0
        if self.kind == "quadratic":
            ev = np.linalg.eigvalsh(self.A)
            return float(np.sqrt(ev[0])), float(np.sqrt(ev[-1]))
        e = self.dim ** (1.0 / self.q - 0.5)
        return (e, 1.0) if self.q >= 2 else (1.0, e)


def norm_value(H: AnisotropicNorm, xi) -> np.ndarray:
    return H.value(xi)


def norm_gradient(H: AnisotropicNorm, xi) -> np.ndarray:
    return H.gradient(xi)


def norm_hessian(H: AnisotropicNorm, xi) -> np.ndarray:
    return H.hessian(xi)


def dual_norm(H: AnisotropicNorm) -> AnisotropicNorm:
    return H.dual()


def anisotropic_normal(H: AnisotropicNorm, nu) -> np.ndarray:
    """Anisotropic normal ``grad H(nu)`` of a Euclidean normal ``nu``; it has unit dual norm."""
    return H.gradient(nu)


def identity_residuals(H: AnisotropicNorm, xi, t) -> dict[str, float]:
    """Worst-case residuals of the homogeneity and duality identities.

    ``xi`` has shape ``(M, N)`` and ``t`` shape ``(M,)``, all nonzero.
    Residuals are scaled by the natural magnitude of each identity so they are
    comparable to an absolute tolerance.
    """
    xi = np.asarray(xi, dtype=float)
    t = np.asarray(t, dtype=float)
    H0 = H.dual()
    h = H.value(xi)
    g = H.gradient(xi)
    hess = H.hessian(xi)
    txi = t[:, None] * xi
    hess_scale = np.abs(hess).max(axis=(-2, -1))

    out = {}
    out["homogeneity"] = float(np.max(np.abs(H.value(txi) - np.abs(t) * h) / (np.abs(t) * h)))
    out["gradient_0_homogeneous"] = float(
        np.max(np.abs(H.gradient(txi) - np.sign(t)[:, None] * g).max(axis=-1))
    )
    out["euler_identity"] = float(np.max(np.abs(np.einsum("ni,ni->n", g, xi) - h) / h))
    out["hessian_homogeneity"] = float(
        np.max(
            np.abs(H.hessian(txi) * np.abs(t)[:, None, None] - hess).max(axis=(-2, -1))
            / hess_scale
        )
    )
    out["hessian_null_direction"] = float(
        np.max(np.abs(np.einsum("nij,ni->nj", hess, xi)).max(axis=-1) / (hess_scale * np.abs(xi).max(axis=-1)))
    )
    out["dual_of_gradient"] = float(np.max(np.abs(H0.value(g) - 1.0)))
    out["gradient_of_dual"] = float(np.max(np.abs(H.value(H0.gradient(xi)) - 1.0)))
    eig = np.linalg.eigvalsh(hess)
    out["hessian_min_eigenvalue"] = float(max(0.0, -np.min(eig[:, 0] / hess_scale)))
    return out
