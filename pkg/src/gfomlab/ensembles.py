"""Random matrix ensembles with independent entries and variance profiles.

Entry laws are standardized (mean 0, variance 1) and then scaled by the
square root of a per-entry variance profile, so two ensembles built on the
same profile have exactly matching second moments whatever their laws.
Normalizations: 1/sqrt(n) for symmetric matrices, 1/sqrt(m) or 1/sqrt(m+n)
for rectangular ones.

Sampling is counter-based: each entry consumes exactly one 64-bit uniform at
a fixed flat index of a Philox stream (see seeds.py), so a matrix is a pure
function of (spec, dims, seed).
"""

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtri

from .errors import ConfigError
from .seeds import DOMAIN_ENSEMBLE_A, DOMAIN_ENSEMBLE_B, entry_uniforms

LAW_KINDS = ("gaussian", "rademacher", "uniform_pm", "shifted_bernoulli")
NORMALIZATIONS = ("inv_sqrt_n", "inv_sqrt_m", "inv_sqrt_m_plus_n")


@dataclass(frozen=True)
class EntryLaw:
    """A standardized scalar entry law (mean 0, variance 1)."""

    kind: str
    p: float | None = None

    def __post_init__(self):
        if self.kind not in LAW_KINDS:
            raise ConfigError(f"unknown entry law {self.kind!r}")
        if self.kind == "shifted_bernoulli":
            if self.p is None or not 0.0 < self.p < 1.0:
                raise ConfigError("shifted_bernoulli needs p in (0, 1)")
        elif self.p is not None:
            raise ConfigError(f"law {self.kind!r} takes no parameter p")

    def transform(self, u):
        """Map uniforms in [0, 1) to standardized variates, elementwise."""
        u = np.asarray(u)
        if self.kind == "gaussian":
            return ndtri(np.maximum(u, 1e-300))
        if self.kind == "rademacher":
            return np.where(u < 0.5, -1.0, 1.0)
        if self.kind == "uniform_pm":
            return (2.0 * u - 1.0) * math.sqrt(3.0)
        p = self.p
        return np.where(u < p, -math.sqrt((1.0 - p) / p), math.sqrt(p / (1.0 - p)))


def gaussian_law():
    return EntryLaw("gaussian")


def rademacher_law():
    return EntryLaw("rademacher")


def uniform_pm_law():
    return EntryLaw("uniform_pm")


def shifted_bernoulli_law(p):
    return EntryLaw("shifted_bernoulli", p=p)


@dataclass(frozen=True)
class VarianceProfile:
    """Pre-normalization second moments E A0_ij^2, all finite and >= 0."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.atleast_2d(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "values", vals)
        if vals.ndim != 2:
            raise ConfigError("variance profile must be a 2-d array")
        if not np.all(np.isfinite(vals)):
            raise ConfigError("variance profile has non-finite entries")
        if np.any(vals < 0):
            raise ConfigError("variance profile has negative entries")

    @property
    def shape(self):
        return self.values.shape

    def is_constant(self):
        return bool(np.all(self.values == self.values.flat[0]))

    def require_symmetric(self):
        if self.values.shape[0] != self.values.shape[1]:
            raise ConfigError(f"profile shape {self.values.shape} is not square")
        if not np.array_equal(self.values, self.values.T):
            raise ConfigError("symmetric ensemble needs a symmetric profile")


def constant_profile(shape, value=1.0):
    return VarianceProfile(np.full(shape, float(value)))


@dataclass(frozen=True)
class EnsembleSpec:
    """Entry law + profile + normalization for one random matrix ensemble.

    ``truncate`` (default None = off) zeroes pre-normalization entries with
    |A0_ij| > truncate * sqrt(log(max(m, n))); a stress-testing knob only.
    """

    law: EntryLaw
    profile: VarianceProfile
    normalization: str
    symmetric: bool
    truncate: float | None = None

    def __post_init__(self):
        if self.normalization not in NORMALIZATIONS:
            raise ConfigError(f"unknown normalization {self.normalization!r}")
        if self.symmetric:
            if self.normalization != "inv_sqrt_n":
                raise ConfigError("symmetric ensembles use inv_sqrt_n")
            self.profile.require_symmetric()

    def denominator(self, m, n):
        if self.normalization == "inv_sqrt_n":
            return math.sqrt(n)
        if self.normalization == "inv_sqrt_m":
            return math.sqrt(m)
        return math.sqrt(m + n)

    def weight_matrix(self, m, n):
        """Effective per-entry second moments E A_kl^2 after normalization."""
        if self.profile.shape != (m, n):
            raise ConfigError(f"profile shape {self.profile.shape} != ({m}, {n})")
        return self.profile.values / self.denominator(m, n) ** 2


def profile_weights(profile, m, n, normalization):
    """E A_kl^2 matrix for a profile under a named normalization.

    ``profile`` may be a VarianceProfile or a raw (m, n) array of
    un-normalized per-entry second moments.
    """
    values = profile.values if isinstance(profile, VarianceProfile) else np.asarray(
        profile, dtype=float)
    if values.shape != (m, n):
        raise ConfigError(f"profile shape {values.shape} != ({m}, {n})")
    if normalization not in NORMALIZATIONS:
        raise ConfigError(f"unknown normalization {normalization!r}")
    denom = {"inv_sqrt_n": n, "inv_sqrt_m": m, "inv_sqrt_m_plus_n": m + n}[normalization]
    return values / denom


def _as_seedseq(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def _raw_entries(spec, m, n, seedseq):
    u = entry_uniforms(seedseq, m * n).reshape(m, n)
    a0 = spec.law.transform(u) * np.sqrt(spec.profile.values)
    if spec.truncate is not None:
        cut = spec.truncate * math.sqrt(math.log(max(m, n)))
        a0 = np.where(np.abs(a0) > cut, 0.0, a0)
    return a0


def sample_symmetric(spec, n, seed):
    """Draw the n x n symmetric matrix A = A0 / sqrt(n).

    The upper triangle (including the diagonal) of A0 has independent
    entries sqrt(profile_ij) * xi_ij with xi_ij ~ law; the lower triangle
    mirrors it.  Deterministic given (spec, n, seed).
    """
    if not spec.symmetric:
        raise ConfigError("sample_symmetric needs a symmetric EnsembleSpec")
    if spec.profile.shape != (n, n):
        raise ConfigError(f"profile shape {spec.profile.shape} != ({n}, {n})")
    a0 = _raw_entries(spec, n, n, _as_seedseq(seed))
    upper = np.triu(a0)
    a0 = upper + np.triu(a0, k=1).T
    return a0 / math.sqrt(n)


def sample_asymmetric(spec, m, n, seed):
    """Draw the m x n matrix A = A0 / denominator, independent entries."""
    if spec.symmetric:
        raise ConfigError("sample_asymmetric needs an asymmetric EnsembleSpec")
    if spec.profile.shape != (m, n):
        raise ConfigError(f"profile shape {spec.profile.shape} != ({m}, {n})")
    a0 = _raw_entries(spec, m, n, _as_seedseq(seed))
    return a0 / spec.denominator(m, n)


def matched_pair(spec_a, law_b, *, n, m=None, seed=0):
    """(A, B): same profile and normalization, laws spec_a.law vs law_b.

    Seeds for the two draws are derived independently from ``seed``, so the
    matrices are independent while their second moments match exactly.
    """
    root = _as_seedseq(seed)
    seed_a = np.random.SeedSequence(root.entropy, spawn_key=root.spawn_key + (DOMAIN_ENSEMBLE_A,))
    seed_b = np.random.SeedSequence(root.entropy, spawn_key=root.spawn_key + (DOMAIN_ENSEMBLE_B,))
    spec_b = replace(spec_a, law=law_b)
    if spec_a.symmetric:
        return sample_symmetric(spec_a, n, seed_a), sample_symmetric(spec_b, n, seed_b)
    if m is None:
        raise ConfigError("matched_pair needs m for rectangular ensembles")
    return sample_asymmetric(spec_a, m, n, seed_a), sample_asymmetric(spec_b, m, n, seed_b)


def matrix_to_csv(a, path):
    """Dense row-major CSV dump, 17 significant digits."""
    np.savetxt(path, np.atleast_2d(a), fmt="%.17g", delimiter=",")
