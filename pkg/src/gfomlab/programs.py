"""Row-separate nonlinearities and named iteration programs.

A RowFunction consumes, per coordinate, the row of past iterate values for
that coordinate and returns one number; it carries an analytic first partial
for every history column because state-evolution coefficients are built from
those derivatives.  Programs bundle the per-step functions with an
initialization: symmetric programs update

    z^(t) = A mat_fns[t](z-history) + add_fns[t](z-history),

asymmetric programs update, in order within a step,

    u^(t) = A u_mat_fns[t](v-history) + u_add_fns[t](u-history)
    v^(t) = A^T v_mat_fns[t](u-history incl. u^(t)) + v_add_fns[t](v-history).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .erm import logistic_dloss_x, sigmoid, dsmoothed_sign, smoothed_sign, default_logit_clamp
from .errors import ConfigError


def _sel(param, rows):
    return param if rows is None else np.asarray(param)[rows]


@dataclass
class RowFunction:
    """One row-separate map history_row -> value with analytic partials.

    ``fn(hist, rows)`` takes hist of shape (..., R, arity) (last axis =
    iterate index) and returns (..., R); ``dfn(hist, rows, which)`` is the
    first partial in history column ``which``.  ``rows`` selects which
    coordinates the R-axis refers to (None = the full native row set);
    functions with ``row_constant=True`` ignore it.
    """

    arity: int
    fn: callable
    dfn: callable
    row_constant: bool = True
    lipschitz_hint: float | None = None

    def eval(self, row, history_row):
        h = np.asarray(history_row, dtype=float).reshape(1, self.arity)
        rows = None if self.row_constant else np.asarray([row])
        return float(self.fn(h, rows)[0])

    def partial(self, row, history_row, which):
        if not 0 <= which < self.arity:
            raise ConfigError(f"partial index {which} outside arity {self.arity}")
        h = np.asarray(history_row, dtype=float).reshape(1, self.arity)
        rows = None if self.row_constant else np.asarray([row])
        return float(self.dfn(h, rows, which)[0])

    def __call__(self, hist, rows=None):
        return self.fn(np.asarray(hist, dtype=float), rows)

    def d(self, hist, rows=None, which=0):
        return self.dfn(np.asarray(hist, dtype=float), rows, which)


def zero_row_function(arity):
    return RowFunction(
        arity=arity,
        fn=lambda h, rows: np.zeros(h.shape[:-1]),
        dfn=lambda h, rows, which: np.zeros(h.shape[:-1]),
        lipschitz_hint=0.0,
    )


def constant_rows(values, arity):
    """Per-row constants, ignoring the history entirely."""
    values = np.asarray(values, dtype=float)
    return RowFunction(
        arity=arity,
        fn=lambda h, rows: np.broadcast_to(_sel(values, rows), h.shape[:-1]).copy(),
        dfn=lambda h, rows, which: np.zeros(h.shape[:-1]),
        row_constant=False,
        lipschitz_hint=0.0,
    )


def pick_iterate(arity, col):
    """Identity on history column ``col``."""
    if not 0 <= col < arity:
        raise ConfigError("column outside arity")
    return RowFunction(
        arity=arity,
        fn=lambda h, rows: h[..., col].copy(),
        dfn=lambda h, rows, which: (
            np.ones(h.shape[:-1]) if which == col else np.zeros(h.shape[:-1])
        ),
        lipschitz_hint=1.0,
    )


def scalar_map(arity, col, g, dg, lipschitz_hint=None):
    """g applied to history column ``col`` (g, dg vectorized over arrays)."""
    return RowFunction(
        arity=arity,
        fn=lambda h, rows: np.asarray(g(h[..., col]), dtype=float),
        dfn=lambda h, rows, which: (
            np.asarray(dg(h[..., col]), dtype=float)
            if which == col
            else np.zeros(h.shape[:-1])
        ),
        lipschitz_hint=lipschitz_hint,
    )


def tanh_map(arity, col):
    return scalar_map(arity, col, np.tanh, lambda x: 1.0 / np.cosh(x) ** 2, lipschitz_hint=1.0)


def affine_combination(arity, weights, intercept=0.0):
    """sum_j weights[j] * h_j + intercept; intercept may vary per row."""
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (arity,):
        raise ConfigError("weights must have one entry per history column")
    intercept = np.asarray(intercept, dtype=float)
    per_row = intercept.ndim > 0

    def fn(h, rows):
        out = np.einsum("...j,j->...", h, weights)
        return out + (_sel(intercept, rows) if per_row else float(intercept))

    return RowFunction(
        arity=arity,
        fn=fn,
        dfn=lambda h, rows, which: np.full(h.shape[:-1], weights[which]),
        row_constant=not per_row,
        lipschitz_hint=float(np.sum(np.abs(weights))),
    )


@dataclass
class SymmetricProgram:
    T: int
    mat_fns: list    # multiplied by A; entry t-1 consumes columns 0..t-1
    add_fns: list
    z0: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.z0 = np.asarray(self.z0, dtype=float)
        if len(self.mat_fns) != self.T or len(self.add_fns) != self.T:
            raise ConfigError("need one mat/add function per step")
        for t in range(1, self.T + 1):
            if self.mat_fns[t - 1].arity != t or self.add_fns[t - 1].arity != t:
                raise ConfigError(f"step {t} functions must consume columns 0..{t - 1}")

    @property
    def n(self):
        return self.z0.shape[0]


@dataclass
class AsymmetricProgram:
    T: int
    u_mat_fns: list  # on v-history, arity t
    u_add_fns: list  # on u-history, arity t
    v_mat_fns: list  # on u-history including u^(t), arity t+1
    v_add_fns: list  # on v-history, arity t
    u0: np.ndarray
    v0: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.u0 = np.asarray(self.u0, dtype=float)
        self.v0 = np.asarray(self.v0, dtype=float)
        lists = (self.u_mat_fns, self.u_add_fns, self.v_mat_fns, self.v_add_fns)
        if any(len(fns) != self.T for fns in lists):
            raise ConfigError("need one function of each role per step")
        for t in range(1, self.T + 1):
            ok = (
                self.u_mat_fns[t - 1].arity == t
                and self.u_add_fns[t - 1].arity == t
                and self.v_mat_fns[t - 1].arity == t + 1
                and self.v_add_fns[t - 1].arity == t
            )
            if not ok:
                raise ConfigError(f"step {t} arities wrong (v_mat consumes the current column)")

    @property
    def m(self):
        return self.u0.shape[0]

    @property
    def n(self):
        return self.v0.shape[0]


# ---------------------------------------------------------------------------
# named builders

def build_power_iteration(T, z0):
    """Unnormalized power iteration: z^(t) = A z^(t-1)."""
    if T < 1:
        raise ConfigError("horizon must be >= 1")
    return SymmetricProgram(
        T=T,
        mat_fns=[pick_iterate(t, t - 1) for t in range(1, T + 1)],
        add_fns=[zero_row_function(t) for t in range(1, T + 1)],
        z0=z0,
    )


def build_tanh_iteration(T, z0):
    """z^(t) = A tanh(z^(t-1)): the bounded-update test program."""
    return SymmetricProgram(
        T=T,
        mat_fns=[tanh_map(t, t - 1) for t in range(1, T + 1)],
        add_fns=[zero_row_function(t) for t in range(1, T + 1)],
        z0=z0,
    )


def build_pgd_linear(loss, prox, eta, mu0, xi, T):
    """Proximal gradient for the linear model as an asymmetric program.

    v-track carries the pre-prox point: mu^(t) = prox_eta(v^(t)), with
    u^(t) = A (mu^(t-1) - mu0) and
    v^(t) = A^T [eta L'(xi - u^(t))] + mu^(t-1).
    The estimate is recovered through meta["mu_from_v"].
    """
    if eta <= 0:
        raise ConfigError("eta must be > 0")
    mu0 = np.asarray(mu0, dtype=float)
    xi = np.asarray(xi, dtype=float)
    m, n = xi.shape[0], mu0.shape[0]

    def centered_estimate(t):
        # prox(v^(t-1)) - mu0, feeding the u-update
        def fn(h, rows):
            return prox.apply(eta, h[..., t - 1]) - _sel(mu0, rows)

        def dfn(h, rows, which):
            if which != t - 1:
                return np.zeros(h.shape[:-1])
            return prox.dapply(eta, h[..., t - 1])

        return RowFunction(arity=t, fn=fn, dfn=dfn, row_constant=False)

    def estimate(t):
        return scalar_map(t, t - 1, lambda v: prox.apply(eta, v), lambda v: prox.dapply(eta, v))

    def grad_rows(t):
        # eta L'(xi_k - u_k^(t)) entering through A^T
        def fn(h, rows):
            return eta * loss.d1(_sel(xi, rows) - h[..., t])

        def dfn(h, rows, which):
            if which != t:
                return np.zeros(h.shape[:-1])
            return -eta * loss.d2(_sel(xi, rows) - h[..., t])

        return RowFunction(arity=t + 1, fn=fn, dfn=dfn, row_constant=False)

    u_mat = [constant_rows(-mu0, 1)] + [centered_estimate(t) for t in range(2, T + 1)]
    v_add = [zero_row_function(1)] + [estimate(t) for t in range(2, T + 1)]
    return AsymmetricProgram(
        T=T,
        u_mat_fns=u_mat,
        u_add_fns=[zero_row_function(t) for t in range(1, T + 1)],
        v_mat_fns=[grad_rows(t) for t in range(1, T + 1)],
        v_add_fns=v_add,
        u0=np.zeros(m),
        v0=np.zeros(n),
        meta={"mu_from_v": lambda v: prox.apply(eta, v), "eta": eta},
    )


def build_gd_ridge(loss, eta, lam, mu0, xi, subsample_masks, T):
    """(Stochastic) gradient descent with ridge penalty, centered tracks.

    v^(t) = mu^(t) - mu0 with v^(0) = -mu0; u^(t) = A v^(t-1);
    v^(t) = A^T [eta s^(t-1) L'(xi - u^(t))] + (1 - eta lam) v^(t-1)
            - eta lam mu0.
    subsample_masks: None (full sample) or (T, m) 0/1 array.
    """
    if eta < 0:
        # eta = 0 freezes every track; allowed for degenerate-law checks
        raise ConfigError("eta must be >= 0")
    if lam < 0:
        raise ConfigError("lambda must be >= 0")
    mu0 = np.asarray(mu0, dtype=float)
    xi = np.asarray(xi, dtype=float)
    m, n = xi.shape[0], mu0.shape[0]
    if subsample_masks is None:
        masks = np.ones((T, m))
    else:
        masks = np.asarray(subsample_masks, dtype=float)
        if masks.shape != (T, m):
            raise ConfigError(f"masks must have shape ({T}, {m})")

    def grad_rows(t):
        mask = masks[t - 1]

        def fn(h, rows):
            return eta * _sel(mask, rows) * loss.d1(_sel(xi, rows) - h[..., t])

        def dfn(h, rows, which):
            if which != t:
                return np.zeros(h.shape[:-1])
            return -eta * _sel(mask, rows) * loss.d2(_sel(xi, rows) - h[..., t])

        return RowFunction(arity=t + 1, fn=fn, dfn=dfn, row_constant=False)

    def decay(t):
        w = np.zeros(t)
        w[t - 1] = 1.0 - eta * lam
        return affine_combination(t, w, intercept=-eta * lam * mu0)

    return AsymmetricProgram(
        T=T,
        u_mat_fns=[pick_iterate(t, t - 1) for t in range(1, T + 1)],
        u_add_fns=[zero_row_function(t) for t in range(1, T + 1)],
        v_mat_fns=[grad_rows(t) for t in range(1, T + 1)],
        v_add_fns=[decay(t) for t in range(1, T + 1)],
        u0=np.zeros(m),
        v0=-mu0,
        meta={"mu_from_v": lambda v: v + mu0, "eta": eta, "masks": masks},
    )


def _dlogistic_dmargin(x, z, sigma):
    # d/dz of -s(z) sigmoid(-s(z) x), s = smoothed_sign(., sigma)
    s = smoothed_sign(z, sigma)
    sig = sigmoid(-s * x)
    return dsmoothed_sign(z, sigma) * (-sig + s * x * sig * (1.0 - sig))


def build_logistic(prox, eta, sigma, mu0, xi, T, clamp=None):
    """Smoothed logistic PGD as an asymmetric program.

    Step 1 pushes the fixed signal through A so that u^(1) = A mu0 is the
    clean margin; later steps score u^(t) = A mu^(t-1) against it.  The
    score (first loss argument) is clamped to [-clamp, clamp], default
    20 log n.
    """
    if sigma < 0:
        raise ConfigError("sigma must be >= 0")
    mu0 = np.asarray(mu0, dtype=float)
    xi = np.asarray(xi, dtype=float)
    m, n = xi.shape[0], mu0.shape[0]
    if clamp is None:
        clamp = default_logit_clamp(n)
    if clamp <= 0:
        raise ConfigError("clamp must be > 0")

    def estimate(t):
        return scalar_map(t, t - 1, lambda v: prox.apply(eta, v), lambda v: prox.dapply(eta, v))

    def grad_rows(t):
        # -eta dL_sigma/dx at x = clip(u^(t)), margin-plus-noise z = u^(1) + xi
        def fn(h, rows):
            x = np.clip(h[..., t], -clamp, clamp) if t > 1 else np.zeros(h.shape[:-1])
            return -eta * logistic_dloss_x(x, h[..., 1], _sel(xi, rows), sigma)

        def dfn(h, rows, which):
            x = np.clip(h[..., t], -clamp, clamp) if t > 1 else np.zeros(h.shape[:-1])
            z = h[..., 1] + _sel(xi, rows)
            if which == t and t > 1:
                s = smoothed_sign(z, sigma)
                sig = sigmoid(-s * x)
                inside = (np.abs(h[..., t]) < clamp).astype(float)
                return -eta * (s * s * sig * (1.0 - sig)) * inside
            if which == 1:
                return -eta * _dlogistic_dmargin(x, z, sigma)
            return np.zeros(h.shape[:-1])

        return RowFunction(arity=t + 1, fn=fn, dfn=dfn, row_constant=False)

    u_mat = [constant_rows(mu0, 1)] + [estimate(t) for t in range(2, T + 1)]
    v_add = [zero_row_function(1)] + [estimate(t) for t in range(2, T + 1)]
    return AsymmetricProgram(
        T=T,
        u_mat_fns=u_mat,
        u_add_fns=[zero_row_function(t) for t in range(1, T + 1)],
        v_mat_fns=[grad_rows(t) for t in range(1, T + 1)],
        v_add_fns=v_add,
        u0=np.zeros(m),
        v0=np.zeros(n),
        meta={"mu_from_v": lambda v: prox.apply(eta, v), "eta": eta, "sigma": sigma,
              "clamp": clamp},
    )


# ---------------------------------------------------------------------------
# asymmetric -> symmetric embedding

def _block_row_function(arity, m, n, top, cols_top, bottom, cols_bottom):
    """Embed half-space row functions into the (m+n)-row space.

    ``top`` acts on rows < m reading embedded history columns ``cols_top``;
    ``bottom`` on rows >= m reading ``cols_bottom``; the other half is 0.
    """
    cols_top = np.asarray(cols_top, dtype=int) if top is not None else None
    cols_bottom = np.asarray(cols_bottom, dtype=int) if bottom is not None else None

    def split(rows):
        idx = np.arange(m + n) if rows is None else np.asarray(rows)
        top_pos = np.nonzero(idx < m)[0]
        bot_pos = np.nonzero(idx >= m)[0]
        return idx, top_pos, bot_pos

    def _half(h, rows, half_fn, cols, pos, offset, idx, which=None):
        sub = np.take(np.take(h, pos, axis=-2), cols, axis=-1)
        sub_rows = None if half_fn.row_constant else idx[pos] - offset
        if which is None:
            return half_fn.fn(sub, sub_rows)
        hits = np.nonzero(cols == which)[0]
        if hits.size == 0:
            return np.zeros(sub.shape[:-1])
        return half_fn.dfn(sub, sub_rows, int(hits[0]))

    def fn(h, rows):
        idx, top_pos, bot_pos = split(rows)
        out = np.zeros(h.shape[:-1])
        if top is not None and top_pos.size:
            out[..., top_pos] = _half(h, rows, top, cols_top, top_pos, 0, idx)
        if bottom is not None and bot_pos.size:
            out[..., bot_pos] = _half(h, rows, bottom, cols_bottom, bot_pos, m, idx)
        return out

    def dfn(h, rows, which):
        idx, top_pos, bot_pos = split(rows)
        out = np.zeros(h.shape[:-1])
        if top is not None and top_pos.size:
            out[..., top_pos] = _half(h, rows, top, cols_top, top_pos, 0, idx, which)
        if bottom is not None and bot_pos.size:
            out[..., bot_pos] = _half(h, rows, bottom, cols_bottom, bot_pos, m, idx, which)
        return out

    return RowFunction(arity=arity, fn=fn, dfn=dfn, row_constant=False)


def symmetrize(prog, m, n):
    """Embed an asymmetric program into a symmetric one over R^(m+n).

    With the block matrix [[0, A], [A^T, 0]], the embedded run interleaves
    the two tracks: u^(t) occupies the top of column 2t, v^(t) the bottom of
    column 2t+1 (step 1 injects v^(0) as a constant).  Track-for-track the
    embedded run equals the direct asymmetric run exactly.
    """
    if prog.m != m or prog.n != n:
        raise ConfigError(f"program dims ({prog.m}, {prog.n}) != ({m}, {n})")
    T = prog.T
    mat_fns = [zero_row_function(1)]
    add_fns = [constant_rows(np.concatenate([np.zeros(m), prog.v0]), 1)]
    for t in range(1, T + 1):
        u_cols = [2 * s for s in range(t)]           # u^(0..t-1)
        v_cols = [2 * s + 1 for s in range(t)]       # v^(0..t-1)
        u_cols_cur = u_cols + [2 * t]                # u^(0..t)
        mat_fns.append(_block_row_function(
            2 * t, m, n, top=None, cols_top=None,
            bottom=prog.u_mat_fns[t - 1], cols_bottom=v_cols))
        add_fns.append(_block_row_function(
            2 * t, m, n, top=prog.u_add_fns[t - 1], cols_top=u_cols,
            bottom=None, cols_bottom=None))
        mat_fns.append(_block_row_function(
            2 * t + 1, m, n, top=prog.v_mat_fns[t - 1], cols_top=u_cols_cur,
            bottom=None, cols_bottom=None))
        add_fns.append(_block_row_function(
            2 * t + 1, m, n, top=None, cols_top=None,
            bottom=prog.v_add_fns[t - 1], cols_bottom=v_cols))
    return SymmetricProgram(
        T=2 * T + 1,
        mat_fns=mat_fns,
        add_fns=add_fns,
        z0=np.concatenate([prog.u0, np.zeros(n)]),
        meta={"embedded_T": T, "m": m, "n": n},
    )


def embed_matrix(a):
    """[[0, A], [A^T, 0]] for an m x n matrix A (already normalized)."""
    a = np.asarray(a, dtype=float)
    m, n = a.shape
    out = np.zeros((m + n, m + n))
    out[:m, m:] = a
    out[m:, :m] = a.T
    return out


def extract_embedded_tracks(z_iterates, m, n, T):
    """(u, v) histories from an embedded trajectory's iterate matrix."""
    z = np.asarray(z_iterates)
    u = np.zeros((T + 1, m))
    v = np.zeros((T + 1, n))
    u[0] = z[0][:m]
    v[0] = z[1][m:]
    for t in range(1, T + 1):
        u[t] = z[2 * t][:m]
        v[t] = z[2 * t + 1][m:]
    return u, v


# ---------------------------------------------------------------------------
# derivative consistency

def check_partials(rf, rng, probes=100, rows_count=None, rel_tol=1e-5, scale=1.5):
    """Max violation of |FD - partial| <= rel_tol * max(1, |partial|).

    Central differences with step 1e-5 * max(1, |x|) at ``probes`` random
    history points; returns the worst signed violation (<= 0 means pass).
    """
    worst = -np.inf
    for _ in range(probes):
        h = rng.normal(scale=scale, size=rf.arity)
        row = 0 if rf.row_constant else int(rng.integers(rows_count))
        for which in range(rf.arity):
            step = 1e-5 * max(1.0, abs(h[which]))
            hp = h.copy()
            hp[which] += step
            hm = h.copy()
            hm[which] -= step
            fd = (rf.eval(row, hp) - rf.eval(row, hm)) / (2.0 * step)
            an = rf.partial(row, h, which)
            worst = max(worst, abs(fd - an) - rel_tol * max(1.0, abs(an)))
    return worst


def validate_program(prog, seed=0, probes=100):
    """FD-check every row function of a program; raises ConfigError on fail."""
    rng = np.random.default_rng(seed)
    if isinstance(prog, SymmetricProgram):
        groups = [("mat", prog.mat_fns, prog.n), ("add", prog.add_fns, prog.n)]
    else:
        # u_mat and v_add read v-side histories (n rows); u_add and v_mat
        # read u-side histories (m rows)
        groups = [
            ("u_mat", prog.u_mat_fns, prog.n), ("u_add", prog.u_add_fns, prog.m),
            ("v_mat", prog.v_mat_fns, prog.m), ("v_add", prog.v_add_fns, prog.n),
        ]
    for name, fns, rows_count in groups:
        for t, rf in enumerate(fns, start=1):
            bad = check_partials(rf, rng, probes=probes, rows_count=rows_count)
            if bad > 0:
                raise ConfigError(f"{name}[{t}] partials off by {bad:.3e} beyond tolerance")
