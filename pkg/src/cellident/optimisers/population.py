"""Metaheuristic populations: particle swarm, cuckoo search, differential evolution."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .base import Algorithm, register

__all__ = ["Swarm", "pso_step", "levy_steps", "cuckoo_step", "abandon_nests", "de_trials", "de_select",
           "ParticleSwarm", "CuckooSearch", "DifferentialEvolution"]


# ----------------------------------------------------------------------------
# particle swarm


@dataclass
class Swarm:
    x: np.ndarray
    v: np.ndarray
    pbest: np.ndarray
    pbest_f: np.ndarray


def pso_step(swarm: Swarm, gbest, w=0.729, c1=1.494, c2=1.494, rng=None, r1=None, r2=None) -> Swarm:
    """Velocity and position update; ``r1``/``r2`` override the uniform draws."""
    n, d = swarm.x.shape
    if r1 is None:
        r1 = rng.random((n, d))
    if r2 is None:
        r2 = rng.random((n, d))
    v = w * swarm.v + c1 * r1 * (swarm.pbest - swarm.x) + c2 * r2 * (np.asarray(gbest) - swarm.x)
    return Swarm(swarm.x + v, v, swarm.pbest.copy(), swarm.pbest_f.copy())


@register("pso")
class ParticleSwarm(Algorithm):
    def __init__(self, *args):
        super().__init__(*args)
        self.n = self.cfg.population_size or 20
        self.swarm = None
        self.pending = None

    def ask(self):
        if self.swarm is None:
            # the sampler is attached after construction
            self.pending = self.initial_population(self.n, getattr(self, "sampler", None))
        return list(self.pending)

    def tell(self, xs, values, grads=None):
        X = np.array(xs)
        F = np.array(values, dtype=float)
        if self.swarm is None:
            v = self.rng.uniform(-1.0, 1.0, X.shape) * self.sigma0
            self.swarm = Swarm(X, v, X.copy(), F.copy())
        else:
            self.swarm.x = X
            better = F < self.swarm.pbest_f
            self.swarm.pbest[better] = X[better]
            self.swarm.pbest_f[better] = F[better]
        g = int(np.argmin(self.swarm.pbest_f))
        new = pso_step(self.swarm, self.swarm.pbest[g], self.opt.get("w", 0.729), self.opt.get("c1", 1.494),
                       self.opt.get("c2", 1.494), self.rng)
        # clamp at the box and stop the velocity component that hit it
        clipped = self.clip(new.x)
        new.v = np.where(clipped != new.x, 0.0, new.v)
        new.x = clipped
        self.swarm = new
        self.pending = new.x

    def spread(self, values):
        if self.swarm is None:
            return None
        f = self.swarm.pbest_f
        if not np.all(np.isfinite(f)):
            return None
        return float(f.max() - f.min())


# ----------------------------------------------------------------------------
# cuckoo search


def levy_steps(shape, beta: float, rng) -> np.ndarray:
    """Mantegna's algorithm for Levy-stable steps of index ``beta``."""
    num = math.gamma(1 + beta) * math.sin(math.pi * beta / 2)
    den = math.gamma((1 + beta) / 2) * beta * 2 ** ((beta - 1) / 2)
    sigma_u = (num / den) ** (1 / beta)
    u = rng.standard_normal(shape) * sigma_u
    v = rng.standard_normal(shape)
    return u / np.abs(v) ** (1 / beta)


def cuckoo_step(nests, best, alpha, beta, rng, partner: bool = True) -> np.ndarray:
    """New eggs by Levy flights scaled by the distance to the best nest.

    With ``partner`` (default) a nest that coincides with the best uses its
    distance to a random partner instead, so the incumbent keeps exploring
    rather than freezing; ``partner=False`` gives the plain rule, under which
    such a nest does not move.
    """
    nests = np.asarray(nests, dtype=float)
    n = nests.shape[0]
    scale = nests - np.asarray(best)
    if partner:
        mate = rng.integers(n, size=n)
        at_best = np.all(scale == 0.0, axis=1)
        scale[at_best] = (nests - nests[mate])[at_best]
    return nests + alpha * levy_steps(nests.shape, beta, rng) * scale


def abandon_nests(nests, fvals, p_a, rng):
    """Indices of the worst ``round(p_a n)`` nests and their replacements.

    Replacements are random walks ``x + r (x_j - x_k)`` with random partners;
    the best nest is never abandoned.
    """
    nests = np.asarray(nests, dtype=float)
    n = nests.shape[0]
    k = min(int(round(p_a * n)), n - 1)
    if k <= 0:
        return np.array([], dtype=int), np.empty((0, nests.shape[1]))
    worst = np.argsort(fvals, kind="stable")[::-1][:k]
    j = rng.permutation(n)[:k]
    kk = rng.permutation(n)[:k]
    r = rng.random((k, nests.shape[1]))
    return worst, nests[worst] + r * (nests[j] - nests[kk])


@register("cuckoo")
class CuckooSearch(Algorithm):
    """Levy-flight cuckoo search; options ``alpha`` (0.5), ``beta`` (1.5), ``p_a`` (0.25)."""

    def __init__(self, *args):
        super().__init__(*args)
        self.n = self.cfg.population_size or 15
        self.alpha = self.opt.get("alpha", 0.5)
        self.beta = self.opt.get("beta", 1.5)
        self.p_a = self.opt.get("p_a", 0.25)
        self.nests = None
        self.f = None
        self.phase = "init"
        self.pending = None
        self.targets = None

    def ask(self):
        if self.phase == "init":
            self.pending = self.initial_population(self.n, getattr(self, "sampler", None))
        return list(self.pending)

    def _lay(self):
        best = self.nests[int(np.argmin(self.f))]
        self.pending = self.clip(cuckoo_step(self.nests, best, self.alpha, self.beta, self.rng))
        self.phase = "lay"

    def tell(self, xs, values, grads=None):
        X = np.array(xs)
        F = np.array(values, dtype=float)
        if self.phase == "init":
            self.nests, self.f = X, F
            self._lay()
            return
        if self.phase == "lay":
            # each egg competes with a randomly chosen nest
            for i in range(self.n):
                j = self.rng.integers(self.n)
                if F[i] < self.f[j]:
                    self.nests[j], self.f[j] = X[i], F[i]
            idx, repl = abandon_nests(self.nests, self.f, self.p_a, self.rng)
            if idx.size:
                self.targets = idx
                self.pending = self.clip(repl)
                self.phase = "abandon"
                return
            self._lay()
            return
        self.nests[self.targets] = X
        self.f[self.targets] = F
        self._lay()

    def spread(self, values):
        if self.f is None:
            return None
        f = np.sort(self.f)[: max(2, self.n - int(round(self.p_a * self.n)))]
        if not np.all(np.isfinite(f)):
            return None
        return float(f.max() - f.min())


# ----------------------------------------------------------------------------
# differential evolution


def de_trials(pop, F=0.5, CR=0.9, rng=None) -> np.ndarray:
    """rand/1/bin trial vectors, one per member, with at least one mutated coordinate."""
    pop = np.asarray(pop, dtype=float)
    n, d = pop.shape
    if n < 4:
        raise ValueError("differential evolution needs at least 4 members")
    trials = pop.copy()
    for i in range(n):
        choices = [k for k in range(n) if k != i]
        a, b, c = rng.choice(choices, 3, replace=False)
        mutant = pop[a] + F * (pop[b] - pop[c])
        cross = rng.random(d) < CR
        cross[rng.integers(d)] = True
        trials[i] = np.where(cross, mutant, pop[i])
    return trials


def de_select(pop, fvals, trials, tvals):
    """Greedy one-to-one replacement (ties go to the trial)."""
    pop = np.array(pop, dtype=float)
    fvals = np.array(fvals, dtype=float)
    better = np.asarray(tvals) <= fvals
    pop[better] = np.asarray(trials)[better]
    fvals[better] = np.asarray(tvals)[better]
    return pop, fvals


@register("de")
class DifferentialEvolution(Algorithm):
    def __init__(self, *args):
        super().__init__(*args)
        self.n = self.cfg.population_size or 20
        self.F = self.opt.get("F", 0.5)
        self.CR = self.opt.get("CR", 0.9)
        self.pop = None
        self.fvals = None
        self.pending = None

    def ask(self):
        if self.pop is None:
            self.pending = self.initial_population(self.n, getattr(self, "sampler", None))
        return list(self.pending)

    def tell(self, xs, values, grads=None):
        X = np.array(xs)
        V = np.array(values, dtype=float)
        if self.pop is None:
            self.pop, self.fvals = X, V
        else:
            self.pop, self.fvals = de_select(self.pop, self.fvals, X, V)
        self.pending = self.clip(de_trials(self.pop, self.F, self.CR, self.rng))

    def spread(self, values):
        if self.fvals is None or not np.all(np.isfinite(self.fvals)):
            return None
        return float(self.fvals.max() - self.fvals.min())
