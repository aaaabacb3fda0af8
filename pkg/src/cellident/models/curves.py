"""Open-circuit curves: tabulated (monotone cubic) or built-in analytic fits."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

from .base import BuildError

__all__ = ["Curve", "graphite_ocp", "nmc811_ocp", "default_ocv", "default_ocv_table"]


class Curve:
    """Scalar curve ``U(x)`` with derivative, defined on ``[x_min, x_max]``.

    Points outside the domain evaluate to NaN so that the output map can flag
    stoichiometries that have left their admissible range.
    """

    def __init__(self, fun, dfun, domain=(0.0, 1.0), name="curve", monotone=None):
        self._f = fun
        self._df = dfun
        self.domain = (float(domain[0]), float(domain[1]))
        self.name = name
        self.monotone = monotone

    @classmethod
    def from_table(cls, x, y, name="table", require="any", domain=None) -> "Curve":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.ndim != 1 or x.shape != y.shape or x.size < 2:
            raise BuildError(f"{name}: table needs two equal-length 1-d columns")
        if np.any(np.diff(x) <= 0):
            raise BuildError(f"{name}: abscissa must be strictly increasing")
        dy = np.diff(y)
        if require == "increasing" and np.any(dy <= 0):
            raise BuildError(f"{name}: table must be strictly increasing")
        if require == "monotone" and not (np.all(dy < 0) or np.all(dy > 0)):
            raise BuildError(f"{name}: table must be strictly monotone")
        interp = PchipInterpolator(x, y, extrapolate=True)
        deriv = interp.derivative()
        return cls(interp, deriv, domain or (x[0], x[-1]), name,
                   monotone="increasing" if np.all(dy > 0) else "decreasing" if np.all(dy < 0) else None)

    @classmethod
    def from_csv(cls, path, name=None, **kw) -> "Curve":
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or set(reader.fieldnames) != {"x", "volts"}:
                raise BuildError(f"{path}: expected header 'x,volts'")
            rows = [(float(r["x"]), float(r["volts"])) for r in reader]
        x, y = zip(*rows) if rows else ((), ())
        return cls.from_table(x, y, name=name or path.stem, **kw)

    def table(self, n: int = 201) -> tuple[np.ndarray, np.ndarray]:
        x = np.linspace(*self.domain, n)
        return x, self(x)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.domain
        with np.errstate(all="ignore"):
            out = np.asarray(self._f(x), dtype=float)
        return np.where((x >= lo) & (x <= hi), out, np.nan)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(all="ignore"):
            return np.asarray(self._df(x), dtype=float)


def _sech2(z):
    return 1.0 / np.cosh(z) ** 2


def graphite_ocp() -> Curve:
    """Graphite/SiOx negative-electrode open-circuit potential (literature fit)."""

    def f(x):
        return (1.9793 * np.exp(-39.3631 * x) + 0.2482
                - 0.0909 * np.tanh(29.8538 * (x - 0.1234))
                - 0.04478 * np.tanh(14.9159 * (x - 0.2769))
                - 0.0205 * np.tanh(30.4444 * (x - 0.6103)))

    def df(x):
        return (-39.3631 * 1.9793 * np.exp(-39.3631 * x)
                - 0.0909 * 29.8538 * _sech2(29.8538 * (x - 0.1234))
                - 0.04478 * 14.9159 * _sech2(14.9159 * (x - 0.2769))
                - 0.0205 * 30.4444 * _sech2(30.4444 * (x - 0.6103)))

    return Curve(f, df, (0.0, 1.0), "graphite", monotone="decreasing")


def nmc811_ocp() -> Curve:
    """NMC811 positive-electrode open-circuit potential (literature fit)."""

    def f(y):
        return (-0.8090 * y + 4.4875
                - 0.0428 * np.tanh(18.5138 * (y - 0.5542))
                - 17.7326 * np.tanh(15.7890 * (y - 0.3117))
                + 17.5842 * np.tanh(15.9308 * (y - 0.3120)))

    def df(y):
        return (-0.8090
                - 0.0428 * 18.5138 * _sech2(18.5138 * (y - 0.5542))
                - 17.7326 * 15.7890 * _sech2(15.7890 * (y - 0.3117))
                + 17.5842 * 15.9308 * _sech2(15.9308 * (y - 0.3120)))

    return Curve(f, df, (0.0, 1.0), "nmc811", monotone="decreasing")


def default_ocv_table(n: int = 21) -> tuple[np.ndarray, np.ndarray]:
    soc = np.linspace(0.0, 1.0, n)
    volts = 3.4 + 0.7 * soc - 0.3 * np.exp(-20.0 * soc) + 0.05 * np.tanh(8.0 * (soc - 0.9))
    return soc, volts


def default_ocv() -> Curve:
    return Curve.from_table(*default_ocv_table(), name="ocv", require="increasing")
