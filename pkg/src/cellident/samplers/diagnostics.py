"""Chain diagnostics: effective sample size, split-R-hat, credible intervals."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .mcmc import Chain

__all__ = ["autocorrelation", "ess", "rhat", "credible_interval", "PosteriorSummary", "summary",
           "ESS_FLOOR"]

log = logging.getLogger(__name__)

ESS_FLOOR = 1.0


def autocorrelation(x) -> np.ndarray:
    """Normalised autocorrelation of a 1-d series for every lag (FFT based)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    y = x - x.mean()
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(y, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n] / n
    if acov[0] <= 0:
        return np.zeros(n)
    return acov / acov[0]


def _ess_1d(x) -> float:
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4 or np.ptp(x) == 0:
        return ESS_FLOOR
    rho = autocorrelation(x)
    # Geyer's initial positive sequence on pair sums, made monotone
    pairs = rho[: 2 * (n // 2)].reshape(-1, 2).sum(axis=1)
    total = 0.0
    prev = np.inf
    for gk in pairs:
        if gk <= 0:
            break
        gk = min(gk, prev)
        total += gk
        prev = gk
    tau = -1.0 + 2.0 * total
    return float(min(n / max(tau, 1e-12), n))


def ess(chain) -> np.ndarray | float:
    """Effective sample size per column.

    ``chain`` is a 1-d series, an ``n x d`` array or a :class:`Chain`. A
    constant series returns the floor value ``ESS_FLOOR`` and logs a warning.
    """
    x = chain.samples if isinstance(chain, Chain) else np.asarray(chain, dtype=float)
    if x.ndim == 1:
        out = _ess_1d(x)
        if out == ESS_FLOOR and np.ptp(x) == 0:
            log.warning("constant chain: ESS reported at the floor value %g", ESS_FLOOR)
        return out
    return np.array([ess(x[:, j]) for j in range(x.shape[1])])


def rhat(chains) -> np.ndarray | float:
    """Split-R-hat: every chain is halved and the halves compared.

    ``chains`` is a sequence of 1-d series, of ``n x d`` arrays, or of
    :class:`Chain`. A single chain is allowed (it yields two halves).
    """
    arrs = [c.samples if isinstance(c, Chain) else np.asarray(c, dtype=float) for c in chains]
    if not arrs:
        raise ValueError("rhat needs at least one chain")
    n = min(a.shape[0] for a in arrs)
    half = n // 2
    if half < 2:
        raise ValueError("chains are too short to split (need at least 4 samples)")
    if arrs[0].ndim == 2:
        return np.array([rhat([a[:, j] for a in arrs]) for j in range(arrs[0].shape[1])])
    splits = []
    for a in arrs:
        a = a[-n:]
        splits.append(a[:half])
        splits.append(a[n - half:])
    S = np.array(splits)
    means = S.mean(axis=1)
    W = S.var(axis=1, ddof=1).mean()
    B = half * means.var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else float("inf")
    var_plus = (half - 1) / half * W + B / half
    return float(np.sqrt(var_plus / W))


def credible_interval(samples, level: float = 0.95):
    """Equal-tailed interval from linearly interpolated quantiles, per column."""
    if not 0 < level <= 1:
        raise ValueError("level must lie in (0, 1]")
    x = samples.samples if isinstance(samples, Chain) else np.asarray(samples, dtype=float)
    a = (1.0 - level) / 2.0
    lo = np.quantile(x, a, axis=0)
    hi = np.quantile(x, 1.0 - a, axis=0)
    return lo, hi


@dataclass
class PosteriorSummary:
    names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    ess: np.ndarray
    rhat: np.ndarray
    acceptance: list[float]
    n_samples: int
    sampler: str
    seed: int
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        params = {}
        for i, name in enumerate(self.names):
            params[name] = {
                "mean": float(self.mean[i]),
                "std": float(self.std[i]),
                "lower": float(self.lower[i]),
                "upper": float(self.upper[i]),
                "ess": float(self.ess[i]),
                "rhat": float(self.rhat[i]),
            }
        return {
            "sampler": self.sampler,
            "seed": self.seed,
            "level": self.level,
            "n_chains": len(self.acceptance),
            "n_samples": self.n_samples,
            "acceptance": [float(a) for a in self.acceptance],
            "parameters": params,
            "flags": list(self.flags),
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def summary(chains: Sequence[Chain], level: float = 0.95) -> PosteriorSummary:
    """Pool the chains; ESS is summed over chains and capped at the pooled size."""
    if not chains:
        raise ValueError("no chains to summarise")
    pooled = np.concatenate([c.samples for c in chains])
    lo, hi = credible_interval(pooled, level)
    e = np.sum([ess(c.samples) for c in chains], axis=0)
    e = np.minimum(e, pooled.shape[0])
    r = rhat(chains)
    flags = []
    for i, name in enumerate(chains[0].names):
        if np.ptp(pooled[:, i]) == 0:
            flags.append(f"{name}: constant samples, ESS at floor")
        elif r[i] > 1.05:
            flags.append(f"{name}: split R-hat {r[i]:.3f} > 1.05")
    return PosteriorSummary(chains[0].names, pooled.mean(axis=0), pooled.std(axis=0, ddof=1), lo, hi, level,
                            e, np.atleast_1d(r), [c.acceptance for c in chains], pooled.shape[0],
                            chains[0].sampler, chains[0].seed, flags)
