"""Evolution strategies: CMA-ES, exponential NES and separable NES."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .base import Algorithm, register

__all__ = ["CmaState", "cma_weights", "cma_update", "nes_utilities", "XnesState", "xnes_update",
           "SnesState", "snes_update", "CMAES", "XNES", "SNES", "default_population"]


def default_population(d: int) -> int:
    return 4 + int(math.floor(3 * math.log(d)))


def _box_sample(draw, lower, upper, tries=10):
    """Resample up to ``tries`` times for a point inside the box, then clip."""
    for _ in range(tries):
        z, x = draw()
        if np.all(x >= lower) and np.all(x <= upper):
            return z, x
    return z, np.clip(x, lower, upper)


# ----------------------------------------------------------------------------
# CMA-ES


def cma_weights(lam: int):
    """Positive recombination weights for the best ``mu = lam // 2`` samples."""
    mu = lam // 2
    w = math.log((lam + 1) / 2) - np.log(np.arange(1, mu + 1))
    w = w / w.sum()
    return w, 1.0 / np.sum(w ** 2)


@dataclass
class CmaState:
    mean: np.ndarray
    sigma: float
    C: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    generation: int = 0

    @classmethod
    def initial(cls, mean, sigma, scales=None) -> "CmaState":
        d = len(mean)
        scales = np.ones(d) if scales is None else np.asarray(scales, dtype=float)
        return cls(np.asarray(mean, dtype=float).copy(), float(sigma), np.diag(scales ** 2),
                   np.zeros(d), np.zeros(d))

    def eig(self):
        C = (self.C + self.C.T) / 2
        vals, B = np.linalg.eigh(C)
        return B, np.sqrt(np.maximum(vals, 1e-300))


def cma_update(state: CmaState, X, fvals) -> CmaState:
    """Rank-one plus rank-mu update after evaluating samples ``X``."""
    X = np.asarray(X, dtype=float)
    lam, d = X.shape
    w, mueff = cma_weights(lam)
    mu = w.size
    c_sigma = (mueff + 2) / (d + mueff + 5)
    d_sigma = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (d + 1)) - 1) + c_sigma
    c_c = (4 + mueff / d) / (d + 4 + 2 * mueff / d)
    c_1 = 2 / ((d + 1.3) ** 2 + mueff)
    c_mu = min(1 - c_1, 2 * (mueff - 2 + 1 / mueff) / ((d + 2) ** 2 + mueff))
    chi_n = math.sqrt(d) * (1 - 1 / (4 * d) + 1 / (21 * d * d))

    order = np.argsort(fvals, kind="stable")[:mu]
    Y = (X[order] - state.mean) / state.sigma
    y_w = w @ Y
    mean = state.mean + state.sigma * y_w

    B, D = state.eig()
    inv_sqrt = B @ np.diag(1 / D) @ B.T
    p_sigma = (1 - c_sigma) * state.p_sigma + math.sqrt(c_sigma * (2 - c_sigma) * mueff) * (inv_sqrt @ y_w)
    g = state.generation + 1
    norm_ps = np.linalg.norm(p_sigma)
    h_sigma = norm_ps / math.sqrt(1 - (1 - c_sigma) ** (2 * g)) < (1.4 + 2 / (d + 1)) * chi_n
    p_c = (1 - c_c) * state.p_c + (math.sqrt(c_c * (2 - c_c) * mueff) * y_w if h_sigma else 0.0)
    delta = (1 - h_sigma) * c_c * (2 - c_c)
    C = ((1 - c_1 - c_mu + c_1 * delta) * state.C + c_1 * np.outer(p_c, p_c)
         + c_mu * (Y.T * w) @ Y)
    sigma = state.sigma * math.exp((c_sigma / d_sigma) * (norm_ps / chi_n - 1))
    return CmaState(mean, sigma, (C + C.T) / 2, p_sigma, p_c, g)


@register("cmaes")
class CMAES(Algorithm):
    """CMA-ES with ``lambda = 4 + floor(3 ln d)`` by default.

    The initial covariance is diagonal with the per-coordinate step sizes;
    samples outside the box are redrawn up to 10 times and then clipped.
    Infeasible samples rank last.
    """

    def __init__(self, *args):
        super().__init__(*args)
        self.lam = self.cfg.population_size or default_population(self.d)
        s = float(np.max(self.sigma0))
        self.state = CmaState.initial(self.x0, s, self.sigma0 / s)

    def ask(self):
        B, D = self.state.eig()
        A = B * D
        out = []
        for _ in range(self.lam):
            def draw():
                z = self.rng.standard_normal(self.d)
                return z, self.state.mean + self.state.sigma * (A @ z)
            out.append(_box_sample(draw, self.lower, self.upper)[1])
        return out

    def tell(self, xs, values, grads=None):
        f = np.array(values, dtype=float)
        if not np.any(np.isfinite(f)):
            self.state.sigma *= 0.5
            return
        self.state = cma_update(self.state, xs, f)


# ----------------------------------------------------------------------------
# natural evolution strategies


def nes_utilities(lam: int) -> np.ndarray:
    """Rank-based fitness shaping, best first, summing to zero."""
    ranks = np.arange(1, lam + 1)
    raw = np.maximum(0.0, math.log(lam / 2 + 1) - np.log(ranks))
    return raw / raw.sum() - 1.0 / lam


def nes_rates(d: int):
    """``(eta_mu, eta_sigma)``; the same shape rate is applied to ``B``."""
    return 1.0, (3 + math.log(d)) / (5 * math.sqrt(d))


@dataclass
class XnesState:
    mean: np.ndarray
    sigma: float
    B: np.ndarray


def xnes_update(state: XnesState, Z, utilities, eta_mu=None, eta_sigma=None, eta_B=None) -> XnesState:
    """Exponential NES update from standard-normal draws ``Z`` sorted best first."""
    Z = np.asarray(Z, dtype=float)
    lam, d = Z.shape
    e_mu, e_s = nes_rates(d)
    eta_mu = e_mu if eta_mu is None else eta_mu
    eta_sigma = e_s if eta_sigma is None else eta_sigma
    eta_B = e_s if eta_B is None else eta_B
    u = np.asarray(utilities, dtype=float)
    g_delta = u @ Z
    G_M = (Z.T * u) @ Z - u.sum() * np.eye(d)
    g_sigma = np.trace(G_M) / d
    G_B = G_M - g_sigma * np.eye(d)
    mean = state.mean + eta_mu * state.sigma * (state.B @ g_delta)
    sigma = state.sigma * math.exp(eta_sigma / 2 * g_sigma)
    B = state.B @ expm(eta_B / 2 * G_B)
    return XnesState(mean, sigma, B)


@dataclass
class SnesState:
    mean: np.ndarray
    sigma: np.ndarray


def snes_update(state: SnesState, Z, utilities, eta_mu=None, eta_sigma=None) -> SnesState:
    """Separable NES update with per-coordinate step sizes."""
    Z = np.asarray(Z, dtype=float)
    lam, d = Z.shape
    e_mu, e_s = nes_rates(d)
    eta_mu = e_mu if eta_mu is None else eta_mu
    eta_sigma = e_s if eta_sigma is None else eta_sigma
    u = np.asarray(utilities, dtype=float)
    mean = state.mean + eta_mu * state.sigma * (u @ Z)
    sigma = state.sigma * np.exp(eta_sigma / 2 * (u @ (Z * Z - 1)))
    return SnesState(mean, sigma)


class _Nes(Algorithm):
    def __init__(self, *args):
        super().__init__(*args)
        lam = self.cfg.population_size or default_population(self.d)
        self.lam = max(lam, 2)
        self.utilities = nes_utilities(self.lam)
        self.Z = None

    def _transform(self, z):
        raise NotImplementedError

    def ask(self):
        Z, X = [], []
        for _ in range(self.lam):
            def draw():
                z = self.rng.standard_normal(self.d)
                return z, self._transform(z)
            z, x = _box_sample(draw, self.lower, self.upper)
            Z.append(z)
            X.append(x)
        self.Z = np.array(Z)
        return X

    def _ranked(self, values):
        order = np.argsort(np.asarray(values, dtype=float), kind="stable")
        return self.Z[order]


@register("xnes")
class XNES(_Nes):
    def __init__(self, *args):
        super().__init__(*args)
        s = float(np.max(self.sigma0))
        self.state = XnesState(self.x0.copy(), s, np.diag(self.sigma0 / s))

    def _transform(self, z):
        return self.state.mean + self.state.sigma * (self.state.B @ z)

    def tell(self, xs, values, grads=None):
        if not np.any(np.isfinite(values)):
            self.state.sigma *= 0.5
            return
        self.state = xnes_update(self.state, self._ranked(values), self.utilities,
                                 self.opt.get("eta_mu"), self.opt.get("eta_sigma"), self.opt.get("eta_B"))


@register("snes")
class SNES(_Nes):
    def __init__(self, *args):
        super().__init__(*args)
        self.state = SnesState(self.x0.copy(), self.sigma0.astype(float).copy())

    def _transform(self, z):
        return self.state.mean + self.state.sigma * z

    def tell(self, xs, values, grads=None):
        if not np.any(np.isfinite(values)):
            self.state.sigma = self.state.sigma * 0.5
            return
        self.state = snes_update(self.state, self._ranked(values), self.utilities,
                                 self.opt.get("eta_mu"), self.opt.get("eta_sigma"))
