"""Run symmetric/asymmetric iterations and their corrected variants.

Histories are stored iterate-major: ``z`` has shape (T+1, n) with row t the
iterate after step t.  Row functions receive the transposed slice (n, t) so
the last axis is the iterate index.  Any iterate with a non-finite entry or
magnitude above 1e12 raises DivergenceError naming the offending step.
"""

import time

import numpy as np

from .erm import DIVERGENCE_LIMIT
from .errors import ConfigError, DivergenceError


class Trajectory:
    """Iterate history plus per-step wall times (timing never hits the CSVs)."""

    def __init__(self, z=None, u=None, v=None, step_seconds=None):
        self.z = z
        self.u = u
        self.v = v
        self.step_seconds = step_seconds

    @property
    def symmetric(self):
        return self.z is not None


def _guard(x, step, track):
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
        raise DivergenceError(
            f"iterate magnitude exceeded {DIVERGENCE_LIMIT:g}", step=step, track=track
        )


def run_symmetric(a, prog):
    a = np.asarray(a, dtype=float)
    n = prog.n
    if a.shape != (n, n):
        raise ConfigError(f"matrix shape {a.shape} != ({n}, {n})")
    z = np.zeros((prog.T + 1, n))
    z[0] = prog.z0
    _guard(z[0], 0, "z")
    times = np.zeros(prog.T)
    for t in range(1, prog.T + 1):
        tic = time.perf_counter()
        hist = z[:t].T  # (n, t)
        z[t] = a @ prog.mat_fns[t - 1](hist) + prog.add_fns[t - 1](hist)
        _guard(z[t], t, "z")
        times[t - 1] = time.perf_counter() - tic
    return Trajectory(z=z, step_seconds=times)


def run_asymmetric(a, prog):
    a = np.asarray(a, dtype=float)
    m, n = prog.m, prog.n
    if a.shape != (m, n):
        raise ConfigError(f"matrix shape {a.shape} != ({m}, {n})")
    u = np.zeros((prog.T + 1, m))
    v = np.zeros((prog.T + 1, n))
    u[0] = prog.u0
    v[0] = prog.v0
    _guard(u[0], 0, "u")
    _guard(v[0], 0, "v")
    times = np.zeros(prog.T)
    for t in range(1, prog.T + 1):
        tic = time.perf_counter()
        u[t] = a @ prog.u_mat_fns[t - 1](v[:t].T) + prog.u_add_fns[t - 1](u[:t].T)
        _guard(u[t], t, "u")
        v[t] = a.T @ prog.v_mat_fns[t - 1](u[: t + 1].T) + prog.v_add_fns[t - 1](v[:t].T)
        _guard(v[t], t, "v")
        times[t - 1] = time.perf_counter() - tic
    return Trajectory(u=u, v=v, step_seconds=times)


def run_leave_k_out(a, prog, drop_set):
    """Rerun with the rows AND columns in drop_set zeroed out of A.

    Initialization and functions are unchanged; drop_set = [] reproduces
    run_symmetric(a, prog) bit for bit.
    """
    a = np.asarray(a, dtype=float)
    n = prog.n
    drop = np.asarray(sorted(set(int(i) for i in drop_set)), dtype=int)
    if drop.size and (drop.min() < 0 or drop.max() >= n):
        raise ConfigError("drop_set indices outside [0, n)")
    masked = a.copy()
    if drop.size:
        masked[drop, :] = 0.0
        masked[:, drop] = 0.0
    return run_symmetric(masked, prog)


def _check_onsager(onsager, T, widths, label):
    if len(onsager) != T:
        raise ConfigError(f"need {T} {label} correction rows, got {len(onsager)}")
    out = []
    for t in range(1, T + 1):
        c = np.asarray(onsager[t - 1], dtype=float)
        want = widths(t)
        if c.shape != want:
            raise ConfigError(f"{label} correction for step {t}: shape {c.shape} != {want}")
        out.append(c)
    return out


def run_amp_symmetric(a, fns, onsager, z0):
    """z^(t) = A f_t(history) - sum_s onsager[t][s] * f_s(history at step s).

    ``onsager[t-1]`` has shape (t-1, n): one correction vector per earlier
    step.  Values f_s are the ones computed when step s ran (memory terms).
    """
    a = np.asarray(a, dtype=float)
    z0 = np.asarray(z0, dtype=float)
    n = z0.shape[0]
    T = len(fns)
    if a.shape != (n, n):
        raise ConfigError(f"matrix shape {a.shape} != ({n}, {n})")
    for t in range(1, T + 1):
        if fns[t - 1].arity != t:
            raise ConfigError(f"update function for step {t} must consume columns 0..{t - 1}")
    ons = _check_onsager(onsager, T, lambda t: (t - 1, n), "memory")
    z = np.zeros((T + 1, n))
    z[0] = z0
    _guard(z[0], 0, "z")
    vals = np.zeros((T + 1, n))
    times = np.zeros(T)
    for t in range(1, T + 1):
        tic = time.perf_counter()
        vals[t] = fns[t - 1](z[:t].T)
        z[t] = a @ vals[t]
        for s in range(1, t):
            z[t] -= ons[t - 1][s - 1] * vals[s]
        _guard(z[t], t, "z")
        times[t - 1] = time.perf_counter() - tic
    return Trajectory(z=z, step_seconds=times)


def run_amp_asymmetric(a, u_fns, v_fns, u_onsager, v_onsager, u0, v0):
    """Corrected asymmetric iteration.

    u^(t) = A f_t(v-history)        - sum_{s<t}  u_onsager[t][s] * g_s-values
    v^(t) = A^T g_t(u-hist incl. t) - sum_{s<=t} v_onsager[t][s] * f_s-values
    """
    a = np.asarray(a, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    m, n = u0.shape[0], v0.shape[0]
    T = len(u_fns)
    if len(v_fns) != T:
        raise ConfigError("update function lists must have equal length")
    if a.shape != (m, n):
        raise ConfigError(f"matrix shape {a.shape} != ({m}, {n})")
    for t in range(1, T + 1):
        if u_fns[t - 1].arity != t or v_fns[t - 1].arity != t + 1:
            raise ConfigError(f"step {t} update arities wrong")
    u_ons = _check_onsager(u_onsager, T, lambda t: (t - 1, m), "u memory")
    v_ons = _check_onsager(v_onsager, T, lambda t: (t, n), "v memory")
    u = np.zeros((T + 1, m))
    v = np.zeros((T + 1, n))
    u[0], v[0] = u0, v0
    _guard(u[0], 0, "u")
    _guard(v[0], 0, "v")
    f_vals = np.zeros((T + 1, n))
    g_vals = np.zeros((T + 1, m))
    times = np.zeros(T)
    for t in range(1, T + 1):
        tic = time.perf_counter()
        f_vals[t] = u_fns[t - 1](v[:t].T)
        u[t] = a @ f_vals[t]
        for s in range(1, t):
            u[t] -= u_ons[t - 1][s - 1] * g_vals[s]
        _guard(u[t], t, "u")
        g_vals[t] = v_fns[t - 1](u[: t + 1].T)
        v[t] = a.T @ g_vals[t]
        for s in range(1, t + 1):
            v[t] -= v_ons[t - 1][s - 1] * f_vals[s]
        _guard(v[t], t, "v")
        times[t - 1] = time.perf_counter() - tic
    return Trajectory(u=u, v=v, step_seconds=times)


def trajectory_to_csv(traj, path):
    """Long-format dump: track,t,coordinate,value at 17 significant digits."""
    rows = []
    tracks = [("z", traj.z)] if traj.symmetric else [("u", traj.u), ("v", traj.v)]
    for name, arr in tracks:
        for t in range(arr.shape[0]):
            for i in range(arr.shape[1]):
                rows.append(f"{name},{t},{i},{arr[t, i]:.17g}")
    with open(path, "w") as fh:
        fh.write("track,t,coordinate,value\n")
        fh.write("\n".join(rows))
        fh.write("\n")
