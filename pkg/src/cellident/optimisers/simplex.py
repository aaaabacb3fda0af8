"""Nelder-Mead simplex search.

One iteration is written as a generator that yields trial points and receives
their costs, so the same logic serves the pure :func:`nelder_mead_step` (which
calls a function directly) and the ask/tell driver.
"""

from __future__ import annotations

import numpy as np

from .base import Algorithm, register

__all__ = ["nelder_mead_iteration", "nelder_mead_step", "reflect", "NelderMead"]

ALPHA, GAMMA, RHO, SIGMA = 1.0, 2.0, 0.5, 0.5


def reflect(simplex, fvals, alpha: float = ALPHA):
    """Centroid of all but the worst vertex and the reflected worst vertex."""
    simplex = np.asarray(simplex, dtype=float)
    worst = int(np.argmax(fvals))
    others = np.delete(simplex, worst, axis=0)
    c = others.mean(axis=0)
    return c, c + alpha * (c - simplex[worst])


def nelder_mead_iteration(simplex, fvals, alpha=ALPHA, gamma=GAMMA, rho=RHO, sigma=SIGMA, clip=None):
    """Generator performing one iteration; yields batches of points, receives costs.

    Returns ``(simplex', fvals', move)`` via ``StopIteration.value`` where move
    is one of reflect, expand, contract-out, contract-in or shrink. ``clip``
    (optional) projects every trial point into the feasible box.
    """
    clip = clip or (lambda x: x)
    S = np.array(simplex, dtype=float)
    F = np.array(fvals, dtype=float)
    order = np.argsort(F, kind="stable")
    S, F = S[order], F[order]
    c, xr = reflect(S, F, alpha)
    xr = clip(xr)
    fr = (yield [xr])[0]
    if F[0] <= fr < F[-2]:
        S[-1], F[-1] = xr, fr
        return S, F, "reflect"
    if fr < F[0]:
        xe = clip(c + gamma * (xr - c))
        fe = (yield [xe])[0]
        if fe < fr:
            S[-1], F[-1] = xe, fe
            return S, F, "expand"
        S[-1], F[-1] = xr, fr
        return S, F, "reflect"
    if fr < F[-1]:
        xc = clip(c + rho * (xr - c))
        fc = (yield [xc])[0]
        if fc <= fr:
            S[-1], F[-1] = xc, fc
            return S, F, "contract-out"
    else:
        xc = clip(c + rho * (S[-1] - c))
        fc = (yield [xc])[0]
        if fc < F[-1]:
            S[-1], F[-1] = xc, fc
            return S, F, "contract-in"
    new = np.array([clip(v) for v in S[0] + sigma * (S[1:] - S[0])])
    fn = yield list(new)
    S[1:] = new
    F[1:] = fn
    return S, F, "shrink"


def nelder_mead_step(simplex, fvals, func, **coeffs):
    """Apply one Nelder-Mead move using ``func`` for the trial evaluations."""
    gen = nelder_mead_iteration(simplex, fvals, **coeffs)
    batch = next(gen)
    while True:
        try:
            batch = gen.send([float(func(x)) for x in batch])
        except StopIteration as stop:
            return stop.value


@register("nelder-mead")
class NelderMead(Algorithm):
    """Initial simplex ``x0 + step e_i`` (stepping inwards at an upper bound)."""

    def __init__(self, *args):
        super().__init__(*args)
        verts = [self.x0.copy()]
        for i in range(self.d):
            v = self.x0.copy()
            step = self.sigma0[i]
            v[i] = v[i] + step if v[i] + step <= self.upper[i] else v[i] - step
            verts.append(v)
        self.S = np.array(verts)
        self.F = None
        self.gen = None
        self.batch = [v for v in self.S]
        self.move = None

    def ask(self):
        return self.batch

    def tell(self, xs, values, grads=None):
        if self.F is None:
            self.S = np.array(xs)
            self.F = np.array(values, dtype=float)
        else:
            try:
                self.batch = self.gen.send(list(values))
                return
            except StopIteration as stop:
                self.S, self.F, self.move = stop.value
        self.gen = nelder_mead_iteration(self.S, self.F, self.opt.get("alpha", ALPHA),
                                         self.opt.get("gamma", GAMMA), self.opt.get("rho", RHO),
                                         self.opt.get("sigma", SIGMA), self.clip)
        self.batch = next(self.gen)

    def spread(self, values):
        if self.F is None or self.gen is None:
            return None
        F = self.F[np.isfinite(self.F)]
        if F.size < self.F.size:
            return None
        return float(F.max() - F.min())
