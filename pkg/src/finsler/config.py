"""Experiment configuration read from TOML.

Every key is checked against the known layout; unknown keys are rejected so
typos surface as configuration errors instead of silently using defaults.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .anisotropy import AnisotropicNorm, NormError
from .geometry import BoundaryDatum, ConfigError, TwoInclusionConfig
from .solver import SolverOptions

_TOP_KEYS = {"norm", "q", "A", "p", "R1", "R2", "delta", "deltas", "phi", "w", "tau", "c", "kappa",
             "slack", "out", "seed", "domain", "mesh", "solver", "exact", "verify_norms"}
_DOMAIN_KEYS = {"half_width", "K", "shape"}
_MESH_KEYS = {"h_far", "h_neck", "neck_factor", "grading", "w", "cells_across_gap", "mesh_check"}
_EXACT_KEYS = {"p", "r", "R", "n_r", "n_theta", "levels", "C_r", "C_R", "norm", "q", "A"}
_VERIFY_KEYS = {"n_points", "q_values", "n_quadratic", "tol"}


def _reject_unknown(table: dict, allowed: set, where: str):
    extra = sorted(set(table) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(extra)}")


@dataclass
class ExperimentConfig:
    """Everything one CLI run needs; built with :meth:`from_toml` or :meth:`from_dict`."""

    norm: dict = field(default_factory=lambda: {"norm": "euclidean"})
    p: float = 2.0
    R1: float = 1.0
    R2: float = 1.0
    deltas: list = field(default_factory=lambda: [1e-1, 5e-2, 2e-2, 1e-2, 5e-3, 2e-3])
    phi: object = "linear_xN"
    w: float = 0.3
    tau: float = 0.25
    c: float = 0.5
    kappa: float = 10.0
    slack: float | None = None
    out: str = "out"
    seed: int = 0
    domain: dict = field(default_factory=dict)
    mesh: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    exact: dict = field(default_factory=dict)
    verify_norms: dict = field(default_factory=dict)

    @classmethod
    def from_toml(cls, path) -> ExperimentConfig:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from None
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        data = dict(data)
        _reject_unknown(data, _TOP_KEYS, "config")
        _reject_unknown(data.get("domain", {}), _DOMAIN_KEYS, "[domain]")
        _reject_unknown(data.get("mesh", {}), _MESH_KEYS, "[mesh]")
        _reject_unknown(data.get("solver", {}), {f.name for f in fields(SolverOptions)}, "[solver]")
        _reject_unknown(data.get("exact", {}), _EXACT_KEYS, "[exact]")
        _reject_unknown(data.get("verify_norms", {}), _VERIFY_KEYS, "[verify_norms]")
        if "delta" in data and "deltas" in data:
            raise ConfigError("give either delta or deltas, not both")
        norm = {"norm": data.pop("norm", "euclidean")}
        for k in ("q", "A"):
            if k in data:
                norm[k] = data.pop(k)
        if "delta" in data:
            data["deltas"] = [data.pop("delta")]
        cfg = cls(norm=norm, **data)
        cfg.validate()
        return cfg

    def validate(self):
        """Build every derived object once so geometry and option errors surface early."""
        if not self.deltas:
            raise ConfigError("deltas must not be empty")
        if any(float(d) <= 0 for d in self.deltas):
            raise ConfigError("every delta must be positive")
        if len(set(float(d) for d in self.deltas)) != len(self.deltas):
            raise ConfigError("delta values must be distinct")
        if not 0 < self.w:
            raise ConfigError(f"neck width w must be positive, got {self.w}")
        if not 0 < self.tau <= 0.5:
            raise ConfigError(f"tau must lie in (0, 1/2], got {self.tau}")
        self.solver_options()
        self.base_config()

    def norm_object(self) -> AnisotropicNorm:
        try:
            return AnisotropicNorm.from_spec(self.norm)
        except NormError as e:
            raise ConfigError(str(e)) from None

    def base_config(self, delta: float | None = None) -> TwoInclusionConfig:
        """Two-inclusion geometry at ``delta`` (default: the largest delta).

        The outer domain is sized once from the largest delta, so all sweep
        points share it.
        """
        dom = dict(self.domain)
        try:
            cfg = TwoInclusionConfig(self.norm_object(), p=self.p, R1=self.R1, R2=self.R2,
                                     delta=max(float(d) for d in self.deltas),
                                     phi=BoundaryDatum.from_spec(self.phi), half_width=dom.get("half_width"),
                                     K=dom.get("K", 1.0), domain_shape=dom.get("shape", "square"))
        except (NormError, TypeError) as e:
            raise ConfigError(str(e)) from None
        return cfg if delta is None else cfg.with_delta(delta)

    def solver_options(self) -> SolverOptions:
        opts = SolverOptions(**self.solver)
        if opts.initial not in ("harmonic", "zero", "random"):
            raise ConfigError(f"solver.initial must be harmonic, zero or random, got {opts.initial!r}")
        if not 0 < opts.eps_factor < 1:
            raise ConfigError("solver.eps_factor must lie in (0, 1)")
        return opts

    def mesh_options(self) -> tuple[dict, bool]:
        """Mesh keyword arguments and whether the halved-mesh check runs."""
        m = dict(self.mesh)
        check = bool(m.pop("mesh_check", True))
        return m, check

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_toml(Path(path))
