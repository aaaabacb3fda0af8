"""Adaptive Dormand-Prince 5(4) integration with dense output and forward sensitivities.

The stepping kernel is written once and used two ways: compiled with numba for
linear systems ``dx/dt = A x + B I`` (CSR matrix-vector products inside the
kernel), and as plain Python for general right-hand sides, including
semi-explicit index-1 DAEs whose algebraic rows are solved by damped Newton at
every stage.
"""

from __future__ import annotations

import math
import types
from dataclasses import dataclass
from typing import Mapping, Sequence

import numba
import numpy as np
import scipy.sparse as sp

from .base import DaeSystem, Protocol, SolverError, Trace, rebuild_geometry

__all__ = [
    "SolverOptions",
    "integrate",
    "integrate_with_sensitivities",
    "find_steady_state",
    "fd_step",
]

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A2 = 1 / 5
_A3 = (3 / 40, 9 / 40)
_A4 = (44 / 45, -56 / 15, 32 / 9)
_A5 = (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729)
_A6 = (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656)
_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84)
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)
# continuous extension, rows = stages, columns = powers sigma^1..sigma^4
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_OK, _UNDERFLOW, _MAX_STEPS, _BOX, _NONFINITE = 0, 1, 2, 3, 4
_STATUS_TEXT = {
    _UNDERFLOW: "step size underflow",
    _MAX_STEPS: "maximum number of steps exceeded",
    _BOX: "state left its admissible box",
    _NONFINITE: "non-finite state",
}


@dataclass(frozen=True)
class SolverOptions:
    rtol: float = 1e-8
    atol: float = 1e-10
    max_step: float = math.inf
    max_steps: int = 1_000_000
    event_interval: float = 60.0


@numba.njit(cache=True, nogil=True)
def _rms(v):
    return math.sqrt(np.sum(v * v) / v.shape[0])


def _rhs(t, x, args):
    # plain-Python binding: ``args`` is the right-hand side callable itself
    return args(t, x)


def _kernel(args, t0, t1, x0, k1, h, t_out, out, j, rtol, atol, max_step, lo, hi, max_steps):
    """Advance from ``t0`` to ``t1``; fill ``out[j:]`` for sample times in (t0, t1].

    The right-hand side is the module-level name ``_rhs(t, x, args)``; the
    compiled copy of this function rebinds it to the CSR product.
    Returns ``(status, t, x, k_last, h_next, j, n_steps, n_rejected)``.
    """
    n = x0.shape[0]
    m = t_out.shape[0]
    t = t0
    x = x0.copy()
    n_steps = 0
    n_rej = 0
    while j < m and t_out[j] <= t0:
        out[j, :] = x
        j += 1
    if h <= 0.0:
        scale = atol + np.abs(x) * rtol
        d0 = _rms(x / scale)
        d1 = _rms(k1 / scale)
        h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
        h0 = min(h0, t1 - t0)
        k2 = _rhs(t + h0, x + h0 * k1, args)
        d2 = _rms((k2 - k1) / scale) / h0
        if max(d1, d2) <= 1e-15:
            h1 = max(1e-6, h0 * 1e-3)
        else:
            h1 = (0.01 / max(d1, d2)) ** 0.2
        h = min(100.0 * h0, h1)
    while t < t1:
        if n_steps + n_rej >= max_steps:
            return _MAX_STEPS, t, x, k1, h, j, n_steps, n_rej
        h = min(h, max_step)
        if h < 10.0 * 2.220446049250313e-16 * max(abs(t), 1.0):
            return _UNDERFLOW, t, x, k1, h, j, n_steps, n_rej
        last = False
        if t + h >= t1 or t1 - (t + h) < 1e-12 * max(abs(t1), 1.0):
            h = t1 - t
            last = True
        k2 = _rhs(t + _C[1] * h, x + h * (_A2 * k1), args)
        k3 = _rhs(t + _C[2] * h, x + h * (_A3[0] * k1 + _A3[1] * k2), args)
        k4 = _rhs(t + _C[3] * h, x + h * (_A4[0] * k1 + _A4[1] * k2 + _A4[2] * k3), args)
        k5 = _rhs(t + _C[4] * h, x + h * (_A5[0] * k1 + _A5[1] * k2 + _A5[2] * k3 + _A5[3] * k4), args)
        k6 = _rhs(t + h, x + h * (_A6[0] * k1 + _A6[1] * k2 + _A6[2] * k3 + _A6[3] * k4 + _A6[4] * k5), args)
        x_new = x + h * (_B[0] * k1 + _B[2] * k3 + _B[3] * k4 + _B[4] * k5 + _B[5] * k6)
        t_new = t1 if last else t + h
        k7 = _rhs(t_new, x_new, args)
        err_vec = h * (_E[0] * k1 + _E[2] * k3 + _E[3] * k4 + _E[4] * k5 + _E[5] * k6 + _E[6] * k7)
        scale = atol + np.maximum(np.abs(x), np.abs(x_new)) * rtol
        err = _rms(err_vec / scale)
        if not math.isfinite(err):
            if not np.all(np.isfinite(x)):
                return _NONFINITE, t, x, k1, h, j, n_steps, n_rej
            h *= 0.2
            n_rej += 1
            continue
        if err > 1.0:
            h *= max(0.2, 0.9 * err ** -0.2)
            n_rej += 1
            continue
        # accepted: dense output for samples in (t, t_new]
        while j < m and t_out[j] <= t_new:
            s = (t_out[j] - t) / h
            s2 = s * s
            s3 = s2 * s
            s4 = s3 * s
            q = np.zeros(n)
            for r in range(7):
                w = _P[r, 0] * s + _P[r, 1] * s2 + _P[r, 2] * s3 + _P[r, 3] * s4
                if w != 0.0:
                    if r == 0:
                        q += w * k1
                    elif r == 2:
                        q += w * k3
                    elif r == 3:
                        q += w * k4
                    elif r == 4:
                        q += w * k5
                    elif r == 5:
                        q += w * k6
                    elif r == 6:
                        q += w * k7
            out[j, :] = x + h * q
            j += 1
        n_steps += 1
        t = t_new
        x = x_new
        k1 = k7
        if not np.all(np.isfinite(x)):
            return _NONFINITE, t, x, k1, h, j, n_steps, n_rej
        if np.any(x < lo) or np.any(x > hi):
            return _BOX, t, x, k1, h, j, n_steps, n_rej
        fac = 10.0 if err == 0.0 else min(10.0, max(0.2, 0.9 * err ** -0.2))
        h *= fac
    return _OK, t, x, k1, h, j, n_steps, n_rej


def _csr_rhs(t, x, args):
    indptr, indices, data, b, current = args
    n = x.shape[0]
    out = b * current
    for i in range(n):
        acc = out[i]
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * x[indices[k]]
        out[i] = acc
    return out


_P = np.ascontiguousarray(_P)
_csr_rhs_jit = numba.njit(cache=True, nogil=True)(_csr_rhs)
_kernel_csr = numba.njit(cache=True, nogil=True)(
    types.FunctionType(_kernel.__code__, dict(_kernel.__globals__, _rhs=_csr_rhs_jit), "_kernel_csr"))
_kernel_py = _kernel


def fd_step(value: float, rel: float = 1e-6, floor: float = 1e-10) -> float:
    """Central-difference step: relative to ``value``, or ``floor`` when it is zero."""
    step = rel * abs(value)
    return step if step > 0.0 else floor


# ----------------------------------------------------------------------------
# right-hand side assembly


class _Stepper:
    """Dispatches kernel calls for one (system, parameter) combination."""

    def __init__(self, system: DaeSystem, p: Mapping[str, float], n: int, linear=None):
        self.system = system
        self.p = p
        self.n = n
        self.linear = linear
        self.z_guess = None
        if linear is not None:
            A, B = linear
            A = sp.csr_matrix(A)
            A.sort_indices()
            self.arrays = (A.indptr.astype(np.int64), A.indices.astype(np.int64),
                           A.data.astype(np.float64), np.ascontiguousarray(B, dtype=np.float64))

    def args(self, current):
        return self.arrays + (float(current),)

    def run(self, t0, t1, x0, current, h, t_out, out, j, opts, lo, hi):
        if self.linear is not None:
            args = self.args(current)
            k1 = _csr_rhs_jit(t0, x0, args)
            return _kernel_csr(args, float(t0), float(t1), x0, k1, float(h), t_out, out, j,
                               opts.rtol, opts.atol, float(opts.max_step), lo, hi, int(opts.max_steps))
        rhs = self.python_rhs(current)
        return _kernel_py(rhs, t0, t1, x0, rhs(t0, x0), h, t_out, out, j,
                          opts.rtol, opts.atol, opts.max_step, lo, hi, opts.max_steps)

    def python_rhs(self, current):
        system, p = self.system, self.p
        if not system.has_algebraic:
            return lambda t, x: np.asarray(system.F(t, x, p, current), dtype=float)
        mask = system.mass == 0
        diff_idx = np.nonzero(~mask)[0]
        alg_idx = np.nonzero(mask)[0]
        stepper = self

        def rhs(t, xd):
            full = stepper.complete(t, xd, current, diff_idx, alg_idx)
            return system.F(t, full, p, current)[diff_idx]

        return rhs

    def complete(self, t, xd, current, diff_idx, alg_idx):
        """Solve the algebraic rows g(t, xd, z) = 0 for z by damped Newton."""
        system, p = self.system, self.p
        full = np.empty(system.n_states)
        full[diff_idx] = xd
        z = self.z_guess if self.z_guess is not None else np.zeros(alg_idx.size)
        for _ in range(50):
            full[alg_idx] = z
            g = system.F(t, full, p, current)[alg_idx]
            gnorm = np.max(np.abs(g)) if g.size else 0.0
            if gnorm < 1e-12 * max(1.0, np.max(np.abs(z)) if z.size else 1.0):
                break
            J = np.empty((alg_idx.size, alg_idx.size))
            for c, idx in enumerate(alg_idx):
                dz = fd_step(full[idx])
                fp = full.copy()
                fm = full.copy()
                fp[idx] += dz
                fm[idx] -= dz
                J[:, c] = (system.F(t, fp, p, current)[alg_idx] - system.F(t, fm, p, current)[alg_idx]) / (2 * dz)
            step = np.linalg.solve(J, -g)
            lam = 1.0
            while lam > 1e-4:
                full[alg_idx] = z + lam * step
                g_new = system.F(t, full, p, current)[alg_idx]
                if np.max(np.abs(g_new)) < gnorm:
                    break
                lam *= 0.5
            z = z + lam * step
        else:
            raise SolverError("Newton iteration for algebraic states did not converge", t)
        full[alg_idx] = z
        self.z_guess = z
        return full


def _state_box(system: DaeSystem, n: int):
    if system.state_bounds is None:
        return np.full(n, -np.inf), np.full(n, np.inf)
    lo, hi = system.state_bounds
    return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)


def _march(stepper: _Stepper, x0, protocol: Protocol, opts: SolverOptions, lo, hi,
           output_check=None, diff_idx=None):
    """Integrate through all protocol segments, returning sampled states and stats."""
    t_out = np.ascontiguousarray(protocol.t_eval, dtype=np.float64)
    n = x0.shape[0]
    out = np.full((t_out.size, n), np.nan)
    j = 0
    x = np.ascontiguousarray(x0, dtype=np.float64)
    steps = rejected = 0
    edges = protocol.boundaries
    terminated = None
    for seg, current in enumerate(protocol.currents):
        t0, t1 = edges[seg], edges[seg + 1]
        if j >= t_out.size:
            break
        t1 = min(t1, t_out[-1]) if seg == len(protocol.currents) - 1 else t1
        if t1 <= t0:
            while j < t_out.size and t_out[j] <= t0:
                out[j] = x
                j += 1
            break
        chunks = [t1] if output_check is None else list(
            np.append(np.arange(t0 + opts.event_interval, t1, opts.event_interval), t1))
        start = t0
        h = 0.0
        for stop in chunks:
            j_before = j
            status, t_end, x, _k, h, j, ns, nr = stepper.run(
                start, stop, x, current, h, t_out, out, j, opts, lo, hi)
            steps += ns
            rejected += nr
            crossed = output_check is not None and j > j_before and output_check(j_before, j, out)
            if crossed:
                # the cut-off was reached before any failure later in this chunk
                terminated = "cutoff"
                break
            if status == _BOX and output_check is not None:
                # an electrode surface emptied between samples while discharging to
                # a cut-off: the discharge is over
                terminated = "depleted"
                break
            if status != _OK:
                raise SolverError(_STATUS_TEXT[status], float(t_end))
            start = stop
        if terminated:
            break
    return out, j, {"steps": steps, "rejected": rejected}, terminated


def _evaluate_output(system, p, times, states, currents):
    y = np.asarray(system.output(times, states, p, currents), dtype=float)
    bad = ~np.isfinite(y)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise SolverError("output map left its admissible range", float(times[k]))
    return y


def _prepare(system: DaeSystem, theta):
    system = rebuild_geometry(system, theta)
    p = system.resolve(theta)
    return system, p


def _linear_form(system: DaeSystem, p):
    return system.linear(p) if system.is_linear else None


def integrate(system: DaeSystem, theta: Mapping[str, float] | None, protocol: Protocol,
              opts: SolverOptions | None = None, keep_states: bool = True) -> Trace:
    """Simulate ``system`` under ``protocol`` and sample the output at ``protocol.t_eval``."""
    opts = opts or SolverOptions()
    system, p = _prepare(system, theta)
    x0 = np.asarray(system.initial_state(p), dtype=float)
    stepper = _Stepper(system, p, x0.size, _linear_form(system, p))
    lo, hi = _state_box(system, x0.size)
    currents = protocol.sample_currents()
    diff_idx = alg_idx = None
    if system.has_algebraic:
        diff_idx = np.nonzero(system.mass != 0)[0]
        alg_idx = np.nonzero(system.mass == 0)[0]
        stepper.z_guess = x0[alg_idx]
        full0 = stepper.complete(protocol.t_start, x0[diff_idx], protocol.currents[0], diff_idx, alg_idx)
        x_march, lo_m, hi_m = full0[diff_idx], lo[diff_idx], hi[diff_idx]
    else:
        x_march, lo_m, hi_m = x0, lo, hi

    check = None
    if protocol.cutoff_voltage is not None:
        if system.has_algebraic:
            raise NotImplementedError("cut-off events are not supported for systems with algebraic rows")
        cutoff = protocol.cutoff_voltage

        def check(j0, j1, out):
            y = system.output(protocol.t_eval[j0:j1], out[j0:j1], p, currents[j0:j1])
            return bool(np.any(np.asarray(y) < cutoff))

    out, j, stats, terminated = _march(stepper, x_march, protocol, opts, lo_m, hi_m, check)
    if system.has_algebraic:
        full = np.empty((j, system.n_states))
        for r in range(j):
            full[r] = stepper.complete(protocol.t_eval[r], out[r], currents[r], diff_idx, alg_idx)
        states = full
    else:
        states = out[:j]
    times = np.array(protocol.t_eval[:j])
    cur = currents[:j]
    if terminated == "cutoff":
        y_all = np.asarray(system.output(times, states, p, cur), dtype=float)
        below = np.nonzero(y_all < protocol.cutoff_voltage)[0]
        keep = int(below[0]) + 1 if below.size else j
        times, states, cur = times[:keep], states[:keep], cur[:keep]
    elif terminated == "depleted":
        y_all = np.asarray(system.output(times, states, p, cur), dtype=float)
        bad = np.nonzero(~np.isfinite(y_all))[0]
        keep = int(bad[0]) if bad.size else j
        if keep < 1:
            raise SolverError("electrode depleted before the first sample", float(times[0]))
        times, states, cur = times[:keep], states[:keep], cur[:keep]
    y = _evaluate_output(system, p, times, states, cur)
    return Trace(times=times, outputs=y, currents=np.array(cur),
                 states=states if keep_states else None, stats=stats, terminated=terminated)


# ----------------------------------------------------------------------------
# sensitivities


def _system_at(system: DaeSystem, p):
    """System for parameters ``p`` without touching the builder cache (for perturbations)."""
    if system.builder is not None and system.builder.geometry_key(p) != system.geometry:
        return system.builder.discretise(p)
    return system


def _dlinear(system: DaeSystem, p, name):
    if system.linear_derivative is not None:
        d = system.linear_derivative(p, name)
        if d is not None:
            return d
    delta = fd_step(p[name])
    pp, pm = dict(p), dict(p)
    pp[name] += delta
    pm[name] -= delta
    Ap, Bp = _system_at(system, pp).linear(pp)
    Am, Bm = _system_at(system, pm).linear(pm)
    return (sp.csr_matrix(Ap) - sp.csr_matrix(Am)) / (2 * delta), (np.asarray(Bp) - np.asarray(Bm)) / (2 * delta)


def _dx0(system: DaeSystem, p, name):
    delta = fd_step(p[name])
    pp, pm = dict(p), dict(p)
    pp[name] += delta
    pm[name] -= delta
    xp = np.asarray(_system_at(system, pp).initial_state(pp), dtype=float)
    xm = np.asarray(_system_at(system, pm).initial_state(pm), dtype=float)
    return (xp - xm) / (2 * delta)


def _output_state_jacobian(system, p, times, X, cur):
    if system.output_jacobian is not None:
        return np.asarray(system.output_jacobian(times, X, p, cur)[0], dtype=float)
    m, n = X.shape
    J = np.empty((m, n))
    for c in range(n):
        d = np.maximum(1e-6 * np.abs(X[:, c]), 1e-10)
        Xp, Xm = X.copy(), X.copy()
        Xp[:, c] += d
        Xm[:, c] -= d
        J[:, c] = (system.output(times, Xp, p, cur) - system.output(times, Xm, p, cur)) / (2 * d)
    return J


def _output_param_derivative(system, p, times, X, cur, name):
    if system.output_param_derivative is not None:
        d = system.output_param_derivative(times, X, p, cur, name)
        if d is not None:
            return np.asarray(d, dtype=float)
    delta = fd_step(p[name])
    pp, pm = dict(p), dict(p)
    pp[name] += delta
    pm[name] -= delta
    yp = _system_at(system, pp).output(times, X, pp, cur)
    ym = _system_at(system, pm).output(times, X, pm, cur)
    return (np.asarray(yp) - np.asarray(ym)) / (2 * delta)


def integrate_with_sensitivities(system: DaeSystem, theta: Mapping[str, float] | None,
                                 protocol: Protocol, names: Sequence[str] | None = None,
                                 opts: SolverOptions | None = None, keep_states: bool = True) -> Trace:
    """Simulate with forward sensitivities ``dy/dtheta`` for the parameters ``names``.

    Sensitivity states are integrated in relative form ``theta_k dx/dtheta_k`` so
    that error control sees them on the scale of the states themselves.
    """
    opts = opts or SolverOptions()
    system, p = _prepare(system, theta)
    names = tuple(names if names is not None else (theta or {}).keys())
    if system.has_algebraic:
        raise NotImplementedError("sensitivities are not supported for systems with algebraic rows")
    if protocol.cutoff_voltage is not None:
        raise NotImplementedError("sensitivities are not supported with cut-off events")
    d = len(names)
    x0 = np.asarray(system.initial_state(p), dtype=float)
    n = x0.size
    scales = np.array([p[k] if p[k] != 0 else 1.0 for k in names])
    s0 = [scales[k] * _dx0(system, p, name) for k, name in enumerate(names)]
    aug0 = np.concatenate([x0] + s0)
    lo, hi = _state_box(system, n)
    lo_aug = np.concatenate([lo, np.full(n * d, -np.inf)])
    hi_aug = np.concatenate([hi, np.full(n * d, np.inf)])

    if system.is_linear:
        A, B = system.linear(p)
        A = sp.csr_matrix(A)
        blocks = [[None] * (d + 1) for _ in range(d + 1)]
        blocks[0][0] = A
        B_aug = [np.asarray(B, dtype=float)]
        for k, name in enumerate(names):
            dA, dB = _dlinear(system, p, name)
            blocks[k + 1][0] = sp.csr_matrix(dA) * scales[k]
            blocks[k + 1][k + 1] = A
            B_aug.append(np.asarray(dB, dtype=float) * scales[k])
        A_aug = sp.bmat(blocks, format="csr")
        stepper = _Stepper(system, p, n * (d + 1), (A_aug, np.concatenate(B_aug)))
    else:
        stepper = _Stepper(system, p, n * (d + 1))
        stepper.python_rhs = lambda current: _augmented_rhs(system, p, names, scales, n, current)

    out, j, stats, _ = _march(stepper, aug0, protocol, opts, lo_aug, hi_aug)
    times = np.array(protocol.t_eval[:j])
    cur = protocol.sample_currents()[:j]
    X = out[:j, :n]
    y = _evaluate_output(system, p, times, X, cur)
    Jx = _output_state_jacobian(system, p, times, X, cur)
    sens = np.empty((j, d))
    for k, name in enumerate(names):
        S = out[:j, n * (k + 1): n * (k + 2)] / scales[k]
        sens[:, k] = np.einsum("ij,ij->i", Jx, S) + _output_param_derivative(system, p, times, X, cur, name)
    return Trace(times=times, outputs=y, currents=np.array(cur), states=X if keep_states else None,
                 sensitivities=sens, sensitivity_names=names, stats=stats)


def _augmented_rhs(system, p, names, scales, n, current):
    d = len(names)

    def rhs(t, z):
        x = z[:n]
        f = system.F(t, x, p, current)
        out = np.empty_like(z)
        out[:n] = f
        Jx = np.empty((n, n))
        for c in range(n):
            dx = fd_step(x[c])
            xp, xm = x.copy(), x.copy()
            xp[c] += dx
            xm[c] -= dx
            Jx[:, c] = (system.F(t, xp, p, current) - system.F(t, xm, p, current)) / (2 * dx)
        for k, name in enumerate(names):
            delta = fd_step(p[name])
            pp, pm = dict(p), dict(p)
            pp[name] += delta
            pm[name] -= delta
            dfdp = (_system_at(system, pp).F(t, x, pp, current) - _system_at(system, pm).F(t, x, pm, current)) / (2 * delta)
            S = z[n * (k + 1): n * (k + 2)]
            out[n * (k + 1): n * (k + 2)] = Jx @ S + scales[k] * dfdp
        return out

    return rhs


# ----------------------------------------------------------------------------
# steady state


def state_jacobian(system: DaeSystem, p, x, current=0.0, t=0.0, rel=1e-6, floor=1e-10):
    if system.is_linear:
        A, _ = system.linear(p)
        return sp.csr_matrix(A).toarray()
    n = x.size
    J = np.empty((n, n))
    for c in range(n):
        dx = fd_step(x[c], rel, floor)
        xp, xm = x.copy(), x.copy()
        xp[c] += dx
        xm[c] -= dx
        J[:, c] = (system.F(t, xp, p, current) - system.F(t, xm, p, current)) / (2 * dx)
    return J


def find_steady_state(system: DaeSystem, theta: Mapping[str, float] | None, soc: float,
                      tol: float = 1e-10, max_iter: int = 50) -> np.ndarray:
    """Zero-current equilibrium at the requested state of charge.

    Starts from the model's initial-state map at ``soc`` and applies
    minimum-norm Newton corrections (the Jacobian is singular along conserved
    directions such as the state of charge).
    """
    system, p = _prepare(system, theta)
    if "soc0" in p:
        p["soc0"] = float(soc)
    x = np.asarray(system.initial_state(p), dtype=float)
    for _ in range(max_iter):
        F = system.F(0.0, x, p, 0.0)
        res = float(np.max(np.abs(F))) if F.size else 0.0
        if res < tol:
            return x
        J = state_jacobian(system, p, x)
        step = np.linalg.lstsq(J, -F, rcond=None)[0]
        lam = 1.0
        while lam > 1e-6:
            trial = x + lam * step
            if np.max(np.abs(system.F(0.0, trial, p, 0.0))) < res:
                break
            lam *= 0.5
        x = x + lam * step
    res = float(np.max(np.abs(system.F(0.0, x, p, 0.0))))
    if res < tol:
        return x
    raise SolverError(f"steady-state Newton iteration did not converge (residual {res:.3e})")
