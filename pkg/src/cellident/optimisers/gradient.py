"""Gradient-based drivers: gradient descent, AdamW and iRProp-.

Each update rule is a pure function; the algorithm classes wrap them in the
ask/tell protocol. A failed evaluation (``inf`` cost) is treated as a failed
line search: the iterate is restored and the step shrunk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .base import Algorithm, NoFeasibleEvaluation, register

__all__ = ["gradient_descent_step", "AdamState", "adamw_step", "RpropState", "irprop_minus_step",
           "GradientDescent", "AdamW", "IRPropMinus"]


def gradient_descent_step(u, g, eta):
    """``u - eta g``."""
    return np.asarray(u, dtype=float) - eta * np.asarray(g, dtype=float)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, d: int) -> "AdamState":
        return cls(np.zeros(d), np.zeros(d), 0)


def adamw_step(state: AdamState, u, g, eta, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01):
    """One AdamW update with decoupled weight decay; returns ``(state', u')``."""
    u = np.asarray(u, dtype=float)
    g = np.asarray(g, dtype=float)
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    u_new = u - eta * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * u)
    return AdamState(m, v, t), u_new


@dataclass
class RpropState:
    delta: np.ndarray
    g_prev: np.ndarray

    @classmethod
    def initial(cls, d: int, delta0) -> "RpropState":
        return cls(np.broadcast_to(np.asarray(delta0, dtype=float), (d,)).copy(), np.zeros(d))


def irprop_minus_step(state: RpropState, u, g, eta_plus=1.2, eta_minus=0.5, delta_min=1e-12,
                      delta_max=50.0):
    """iRProp-: sign-based steps with per-coordinate adaptive lengths."""
    u = np.asarray(u, dtype=float)
    g = np.array(g, dtype=float)
    prod = g * state.g_prev
    delta = state.delta
    grow = prod > 0
    shrink = prod < 0
    delta = np.where(grow, np.minimum(delta * eta_plus, delta_max), delta)
    delta = np.where(shrink, np.maximum(delta * eta_minus, delta_min), delta)
    g[shrink] = 0.0
    return RpropState(delta, g), u - np.sign(g) * delta


class _GradientAlgorithm(Algorithm):
    """Single-point iteration with step-shrinking on failure."""

    def __init__(self, *args):
        super().__init__(*args)
        self.x = self.x0.copy()
        self.f = math.inf
        self.g = None
        self.prev_f = math.inf
        self.change = None
        self.pending = self.x.copy()
        self.started = False

    def ask(self):
        return [self.pending]

    def tell(self, xs, values, grads=None):
        f, g = values[0], grads[0]
        if not np.isfinite(f) or g is None:
            if not self.started:
                raise NoFeasibleEvaluation(f"{self.id}: objective failed at the initial point")
            self.change = None
            self.on_failure()
            self.pending = self.clip(self.propose(self.x, self.g))
            return
        self.started = True
        self.change = None if not np.isfinite(self.f) else abs(self.f - f)
        self.x, self.f, self.g = xs[0], f, g
        self.pending = self.clip(self.propose(self.x, g))

    def spread(self, values):
        return self.change

    def on_failure(self):
        raise NotImplementedError

    def propose(self, x, g):
        raise NotImplementedError


@register("gd", gradient=True)
class GradientDescent(_GradientAlgorithm):
    def __init__(self, *args):
        super().__init__(*args)
        self.eta = self.cfg.step_size if self.cfg.step_size is not None else 0.01

    def on_failure(self):
        self.eta *= 0.5

    def propose(self, x, g):
        return gradient_descent_step(x, g, self.eta)


@register("adamw", gradient=True)
class AdamW(_GradientAlgorithm):
    def __init__(self, *args):
        super().__init__(*args)
        self.eta = self.cfg.step_size if self.cfg.step_size is not None else 0.01
        self.state = AdamState.zeros(self.d)
        self.saved = self.state

    def on_failure(self):
        self.eta *= 0.5
        self.state = self.saved

    def propose(self, x, g):
        self.saved = self.state
        self.state, u = adamw_step(self.state, x, g, self.eta,
                                   self.opt.get("beta1", 0.9), self.opt.get("beta2", 0.999),
                                   self.opt.get("eps", 1e-8), self.opt.get("weight_decay", 0.01))
        return u


@register("irprop-", gradient=True)
class IRPropMinus(_GradientAlgorithm):
    def __init__(self, *args):
        super().__init__(*args)
        span = self.upper - self.lower
        dmax = np.where(np.isfinite(span), span, 50.0)
        self.state = RpropState.initial(self.d, self.sigma0)
        self.saved = self.state
        self.delta_max = self.opt.get("delta_max", dmax)
        self.delta_min = self.opt.get("delta_min", 1e-12)

    def on_failure(self):
        self.state = RpropState(np.maximum(self.saved.delta * 0.5, self.delta_min), np.zeros(self.d))

    def propose(self, x, g):
        self.saved = self.state
        self.state, u = irprop_minus_step(self.state, x, g, self.opt.get("eta_plus", 1.2),
                                          self.opt.get("eta_minus", 0.5), self.delta_min, self.delta_max)
        return u
