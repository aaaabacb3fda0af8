"""Single particle model with a series contact resistance.

Each electrode is one spherical particle discretised into ``n_shells``
equally spaced finite-volume nodes, the outermost on the particle surface. Solid diffusion is linear in the
concentrations, so the model is exposed in linear form ``dc/dt = A c + B I``;
the terminal voltage adds open-circuit potentials, symmetric Butler-Volmer
overpotentials and the contact-resistance drop.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .base import BuildError, DaeSystem, ModelBuilder
from .curves import Curve, graphite_ocp, nmc811_ocp

__all__ = ["ElectrodeConfig", "SpmConfig", "SpmModel", "build_spm", "theoretical_capacity",
           "FARADAY", "GAS_CONSTANT"]

FARADAY = 96485.33212
GAS_CONSTANT = 8.314462618


@dataclass(frozen=True)
class ElectrodeConfig:
    """One electrode. ``sto_full`` is the stoichiometry at 100% SOC and ``sto_limit``
    the extreme it may reach on discharge (bounding the usable window)."""

    diffusivity: float
    radius: float
    eps_active: float
    eps_inactive: float
    thickness: float
    c_max: float
    rate: float
    sto_full: float
    sto_limit: float
    ocp: Curve = field(compare=False, repr=False, default=None)

    def __post_init__(self):
        if not 0 < self.eps_active < 1:
            raise BuildError("active volume fraction must lie in (0, 1)")
        if self.diffusivity <= 0 or self.radius <= 0 or self.thickness <= 0 or self.c_max <= 0:
            raise BuildError("diffusivity, radius, thickness and c_max must be positive")
        if not (0 < self.sto_full < 1 and 0 < self.sto_limit < 1):
            raise BuildError("stoichiometries must lie in (0, 1)")


def _negative() -> ElectrodeConfig:
    return ElectrodeConfig(diffusivity=3.3e-14, radius=5.86e-6, eps_active=0.75, eps_inactive=0.0,
                           thickness=85.2e-6, c_max=33133.0, rate=6.48e-7 / FARADAY,
                           sto_full=0.9014, sto_limit=0.0279, ocp=graphite_ocp())


def _positive() -> ElectrodeConfig:
    return ElectrodeConfig(diffusivity=4.0e-15, radius=5.22e-6, eps_active=0.665, eps_inactive=0.05,
                           thickness=75.6e-6, c_max=63104.0, rate=3.42e-6 / FARADAY,
                           sto_full=0.2661, sto_limit=0.9084, ocp=nmc811_ocp())


@dataclass(frozen=True)
class SpmConfig:
    """SPM coefficients (SI units). Defaults describe a 5 Ah NMC811/graphite cell."""

    negative: ElectrodeConfig = field(default_factory=_negative)
    positive: ElectrodeConfig = field(default_factory=_positive)
    area: float = 0.1027
    electrolyte_concentration: float = 1000.0
    temperature: float = 298.15
    contact_resistance: float = 0.010
    n_shells: int = 20
    soc0: float = 1.0

    def __post_init__(self):
        if self.n_shells < 3:
            raise BuildError("need at least 3 shells per particle")
        for el, label in ((self.negative, "negative"), (self.positive, "positive")):
            lo, hi = sorted((el.sto_full, el.sto_limit))
            x = np.linspace(lo, hi, 200)
            dU = np.diff(el.ocp(x))
            if not (np.all(dU < 0) or np.all(dU > 0)):
                raise BuildError(f"{label} OCP is not monotone over its stoichiometry window")

    def with_shells(self, n: int) -> "SpmConfig":
        return replace(self, n_shells=int(n))


def _electrode_params(cfg: SpmConfig) -> dict[str, float]:
    p = {}
    for k, el in (("n", cfg.negative), ("p", cfg.positive)):
        p[f"D_{k}"] = el.diffusivity
        p[f"R_{k}"] = el.radius
        p[f"eps_act_{k}"] = el.eps_active
        p[f"eps_inact_{k}"] = el.eps_inactive
        p[f"L_{k}"] = el.thickness
        p[f"c_max_{k}"] = el.c_max
        p[f"k_{k}"] = el.rate
    p.update(A=cfg.area, c_e=cfg.electrolyte_concentration, T=cfg.temperature,
             R_c=cfg.contact_resistance, soc0=cfg.soc0)
    return p


def theoretical_capacity(p: Mapping[str, float], cfg: SpmConfig) -> float:
    """Usable capacity in Ah: the smaller of the two electrode windows."""
    qn = p["eps_act_n"] * p["L_n"] * p["A"] * p["c_max_n"] * FARADAY / 3600.0
    qp = p["eps_act_p"] * p["L_p"] * p["A"] * p["c_max_p"] * FARADAY / 3600.0
    return min(qn * abs(cfg.negative.sto_full - cfg.negative.sto_limit),
               qp * abs(cfg.positive.sto_limit - cfg.positive.sto_full))


def _stoichiometries(p, cfg: SpmConfig, soc: float) -> tuple[float, float]:
    qn = p["eps_act_n"] * p["L_n"] * p["A"] * p["c_max_n"] * FARADAY / 3600.0
    qp = p["eps_act_p"] * p["L_p"] * p["A"] * p["c_max_p"] * FARADAY / 3600.0
    q = theoretical_capacity(p, cfg) * (1.0 - soc)
    x = cfg.negative.sto_full - q / qn
    y = cfg.positive.sto_full + q / qp
    return x, y


class _Shells:
    """Vertex-centred spherical finite-volume mesh for one particle of radius ``R``.

    Nodes sit at ``r_i = i R/(n-1)``; node ``i`` owns the shell between the
    midpoints to its neighbours, so the outermost node is the surface itself and
    its concentration is continuous in time across current steps.
    """

    def __init__(self, R: float, n: int):
        self.R = R
        self.n = n
        self.dr = R / (n - 1)
        self.nodes = np.arange(n) * self.dr
        faces = np.concatenate([[0.0], 0.5 * (self.nodes[1:] + self.nodes[:-1]), [R]])
        self.volume = (faces[1:] ** 3 - faces[:-1] ** 3) / 3.0
        conductance = faces[1:-1] ** 2 / self.dr
        lower = conductance / self.volume[1:]
        upper = conductance / self.volume[:-1]
        diag = np.zeros(n)
        diag[:-1] -= upper
        diag[1:] -= lower
        # unit-diffusivity operator
        self.laplacian = sp.diags([lower, diag, upper], [-1, 0, 1], format="csr")
        self.boundary = R ** 2 / self.volume[-1]

    def average(self, c: np.ndarray) -> np.ndarray:
        """Volume-averaged concentration of (rows of) ``c``."""
        return np.asarray(c) @ self.volume / self.volume.sum()


class SpmModel(ModelBuilder):
    """Builder for SPM systems; particle radii, thicknesses and area are geometric."""

    geometric = frozenset({"L_n", "L_p", "R_n", "R_p", "A"})

    def __init__(self, cfg: SpmConfig | None = None):
        super().__init__()
        self.cfg = cfg or SpmConfig()

    def default_parameters(self) -> dict[str, float]:
        return _electrode_params(self.cfg)

    def capacity(self, theta: Mapping[str, float] | None = None) -> float:
        p = self.default_parameters()
        p.update(theta or {})
        return theoretical_capacity(p, self.cfg)

    def discretise(self, p: Mapping[str, float]) -> DaeSystem:
        cfg = self.cfg
        N = cfg.n_shells
        mesh_n = _Shells(p["R_n"], N)
        mesh_p = _Shells(p["R_p"], N)
        ocp_n, ocp_p = cfg.negative.ocp, cfg.positive.ocp
        geometry = self.geometry_key(p)
        zero_block = sp.csr_matrix((N, N))

        def area_term(q, k):
            # electrode interfacial area a_k L_k A  [m^2]
            return 3.0 * q[f"eps_act_{k}"] / q[f"R_{k}"] * q[f"L_{k}"] * q["A"]

        def linear(q):
            Dn, Dp = q["D_n"], q["D_p"]
            A = sp.block_diag([Dn * mesh_n.laplacian, Dp * mesh_p.laplacian], format="csr")
            B = np.zeros(2 * N)
            B[N - 1] = -mesh_n.boundary / (FARADAY * area_term(q, "n"))
            B[2 * N - 1] = mesh_p.boundary / (FARADAY * area_term(q, "p"))
            return A, B

        def linear_derivative(q, name):
            if name == "D_n":
                return sp.block_diag([mesh_n.laplacian, zero_block], format="csr"), np.zeros(2 * N)
            if name == "D_p":
                return sp.block_diag([zero_block, mesh_p.laplacian], format="csr"), np.zeros(2 * N)
            if name in ("R_c", "T", "c_e", "k_n", "k_p", "c_max_n", "c_max_p", "soc0", "eps_inact_n", "eps_inact_p"):
                return sp.csr_matrix((2 * N, 2 * N)), np.zeros(2 * N)
            return None

        def initial_state(q):
            x, y = _stoichiometries(q, cfg, q["soc0"])
            return np.concatenate([np.full(N, x * q["c_max_n"]), np.full(N, y * q["c_max_p"])])

        def kinetics(cs, q, k):
            # 2 a_k L_k A i0_k, the exchange-current scale of the overpotential
            cmax = q[f"c_max_{k}"]
            with np.errstate(invalid="ignore"):
                root = np.sqrt(cs * (cmax - cs))
            return 2.0 * area_term(q, k) * q[f"k_{k}"] * FARADAY * np.sqrt(q["c_e"]) * root

        def output(t, X, q, current):
            X = np.atleast_2d(X)
            cur = np.broadcast_to(np.asarray(current, dtype=float), (X.shape[0],))
            cs_n, cs_p = X[:, N - 1], X[:, 2 * N - 1]
            xs, ys = cs_n / q["c_max_n"], cs_p / q["c_max_p"]
            thermal = 2.0 * GAS_CONSTANT * q["T"] / FARADAY
            with np.errstate(divide="ignore", invalid="ignore"):
                eta = thermal * (np.arcsinh(cur / kinetics(cs_n, q, "n"))
                                 + np.arcsinh(cur / kinetics(cs_p, q, "p")))
            v = ocp_p(ys) - ocp_n(xs) - eta - cur * q["R_c"]
            ok = (xs > 0) & (xs < 1) & (ys > 0) & (ys < 1)
            return np.where(ok, v, np.nan)

        def output_jacobian(t, X, q, current):
            X = np.atleast_2d(X)
            m = X.shape[0]
            cur = np.broadcast_to(np.asarray(current, dtype=float), (m,))
            thermal = 2.0 * GAS_CONSTANT * q["T"] / FARADAY
            J = np.zeros((m, 2 * N))
            dI = -np.full(m, q["R_c"])
            for k, col, sign, ocp in (("n", N - 1, -1.0, ocp_n), ("p", 2 * N - 1, 1.0, ocp_p)):
                cs = X[:, col]
                cmax = q[f"c_max_{k}"]
                kap = kinetics(cs, q, k)
                damp = thermal / np.sqrt(1.0 + (cur / kap) ** 2)
                dkap_dc = kap * (cmax - 2.0 * cs) / (2.0 * cs * (cmax - cs))
                J[:, col] = sign * ocp.derivative(cs / cmax) / cmax + damp * cur / kap ** 2 * dkap_dc
                dI = dI - damp / kap
            return J, dI

        def output_param_derivative(t, X, q, current, name):
            m = np.atleast_2d(X).shape[0]
            if name == "R_c":
                return -np.broadcast_to(np.asarray(current, dtype=float), (m,))
            if name in ("D_n", "D_p", "soc0", "eps_inact_n", "eps_inact_p"):
                return np.zeros(m)
            return None

        lo = np.zeros(2 * N)
        hi = np.concatenate([np.full(N, p["c_max_n"]), np.full(N, p["c_max_p"])])
        return DaeSystem(
            name="spm",
            n_states=2 * N,
            defaults=self.default_parameters(),
            initial_state=initial_state,
            output=output,
            linear=linear,
            linear_derivative=linear_derivative,
            output_jacobian=output_jacobian,
            output_param_derivative=output_param_derivative,
            state_bounds=(lo, hi),
            geometric=self.geometric,
            geometry=geometry,
            builder=self,
            state_names=tuple(f"c_n{i}" for i in range(N)) + tuple(f"c_p{i}" for i in range(N)),
            info={"n_shells": N, "config": cfg, "mesh": (mesh_n, mesh_p)},
        )


def build_spm(cfg: SpmConfig | None = None) -> DaeSystem:
    """Discretised SPM for the configuration's default geometry."""
    return SpmModel(cfg).system()
