"""Thevenin equivalent-circuit model: series resistance and RC branches on an OCV source."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .base import BuildError, DaeSystem
from .curves import Curve, default_ocv_table

__all__ = ["EcmConfig", "build_ecm"]


@dataclass(frozen=True)
class EcmConfig:
    """ECM coefficients. ``rc`` holds ``(R_i [Ohm], C_i [F])`` pairs; capacity in Ah."""

    R0: float = 0.01
    rc: tuple[tuple[float, float], ...] = ((0.02, 2000.0),)
    capacity: float = 5.0
    ocv_soc: tuple[float, ...] = field(default_factory=lambda: tuple(default_ocv_table()[0]))
    ocv_volts: tuple[float, ...] = field(default_factory=lambda: tuple(default_ocv_table()[1]))
    soc0: float = 1.0

    def __post_init__(self):
        if self.R0 <= 0 or self.capacity <= 0:
            raise BuildError("R0 and capacity must be positive")
        for r, c in self.rc:
            if r <= 0 or c <= 0:
                raise BuildError("RC branch resistances and capacitances must be positive")


def build_ecm(cfg: EcmConfig | None = None) -> DaeSystem:
    """States ``[SOC, V_1..V_m]``; ``h = OCV(SOC) - I R0 - sum V_i``."""
    cfg = cfg or EcmConfig()
    ocv = Curve.from_table(cfg.ocv_soc, cfg.ocv_volts, name="ocv", require="increasing",
                           domain=(-np.inf, np.inf))
    m = len(cfg.rc)
    n = m + 1
    defaults = {"R0": float(cfg.R0)}
    for i, (r, c) in enumerate(cfg.rc, start=1):
        defaults[f"R{i}"] = float(r)
        defaults[f"C{i}"] = float(c)
    defaults["Q"] = float(cfg.capacity)
    defaults["soc0"] = float(cfg.soc0)
    rnames = [f"R{i}" for i in range(1, m + 1)]
    cnames = [f"C{i}" for i in range(1, m + 1)]

    def linear(p):
        diag = np.zeros(n)
        B = np.empty(n)
        B[0] = -1.0 / (3600.0 * p["Q"])
        for i in range(m):
            R, C = p[rnames[i]], p[cnames[i]]
            diag[i + 1] = -1.0 / (R * C)
            B[i + 1] = 1.0 / C
        return sp.diags(diag, format="csr"), B

    def linear_derivative(p, name):
        dA = np.zeros(n)
        dB = np.zeros(n)
        if name == "Q":
            dB[0] = 1.0 / (3600.0 * p["Q"] ** 2)
        elif name in rnames:
            i = rnames.index(name)
            R, C = p[name], p[cnames[i]]
            dA[i + 1] = 1.0 / (R * R * C)
        elif name in cnames:
            i = cnames.index(name)
            R, C = p[rnames[i]], p[name]
            dA[i + 1] = 1.0 / (R * C * C)
            dB[i + 1] = -1.0 / (C * C)
        elif name not in ("R0", "soc0"):
            return None
        return sp.diags(dA, format="csr"), dB

    def initial_state(p):
        x = np.zeros(n)
        x[0] = p["soc0"]
        return x

    def output(t, X, p, current):
        X = np.atleast_2d(X)
        return ocv(X[:, 0]) - np.asarray(current) * p["R0"] - X[:, 1:].sum(axis=1)

    def output_jacobian(t, X, p, current):
        X = np.atleast_2d(X)
        J = -np.ones_like(X)
        J[:, 0] = ocv.derivative(X[:, 0])
        dI = np.full(X.shape[0], -p["R0"])
        return J, dI

    def output_param_derivative(t, X, p, current, name):
        cur = np.broadcast_to(np.asarray(current, dtype=float), (np.atleast_2d(X).shape[0],))
        if name == "R0":
            return -cur
        return np.zeros_like(cur)

    return DaeSystem(
        name="ecm",
        n_states=n,
        defaults=defaults,
        initial_state=initial_state,
        output=output,
        linear=linear,
        linear_derivative=linear_derivative,
        output_jacobian=output_jacobian,
        output_param_derivative=output_param_derivative,
        state_names=("soc",) + tuple(f"V{i}" for i in range(1, m + 1)),
        info={"ocv": ocv},
    )
