"""Numerical kernels: step functions, symmetric eigen-decompositions,
chi-squared distribution functions and reproducible random streams.

All matrix routines accept a single ``(d, d)`` matrix or a stack of shape
``(..., d, d)`` and operate on the trailing two axes.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .exceptions import DomainError, NotPSDError

DEFAULT_TOL = 1e-10


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous piecewise-constant function on ``[0, inf)``.

    The value at ``t`` is ``post_jump_values[j]`` for the last ``j`` with
    ``jump_times[j] <= t``, or ``initial_value`` when no jump has occurred.
    """

    initial_value: float
    jump_times: np.ndarray
    post_jump_values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.jump_times, dtype=float).reshape(-1)
        values = np.asarray(self.post_jump_values, dtype=float).reshape(-1)
        if times.shape != values.shape:
            raise DomainError("jump_times and post_jump_values differ in length")
        if times.size and (times[0] < 0 or np.any(np.diff(times) <= 0)):
            raise DomainError("jump_times must be nonnegative and strictly increasing")
        object.__setattr__(self, "jump_times", times)
        object.__setattr__(self, "post_jump_values", values)
        object.__setattr__(self, "initial_value", float(self.initial_value))

    @classmethod
    def constant(cls, value):
        return cls(value, np.empty(0), np.empty(0))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.jump_times, t, side="right")
        padded = np.concatenate(([self.initial_value], self.post_jump_values))
        out = padded[idx]
        return float(out) if out.ndim == 0 else out

    def left_limit(self, t):
        """Value just before ``t``."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.jump_times, t, side="left")
        padded = np.concatenate(([self.initial_value], self.post_jump_values))
        out = padded[idx]
        return float(out) if out.ndim == 0 else out

    def integrate(self, a, b):
        return integrate_step(self, a, b)


def integrate_step(f, a, b):
    """Exact integral of the step function ``f`` over ``[a, b]``."""
    a = float(a)
    b = float(b)
    if a < 0 or a > b:
        raise DomainError(f"need 0 <= a <= b, got a={a}, b={b}")
    if a == b:
        return 0.0
    inside = (f.jump_times > a) & (f.jump_times < b)
    knots = np.concatenate(([a], f.jump_times[inside], [b]))
    levels = f(knots[:-1])
    return float(np.dot(levels, np.diff(knots)))


def _symmetrize(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _eigh(a):
    a = _symmetrize(a)
    if a.shape[-1] == 0:
        return np.zeros(a.shape[:-1]), a.copy()
    return np.linalg.eigh(a)


def _cutoff(eigvals, tol):
    scale = np.max(np.abs(eigvals), axis=-1, keepdims=True) if eigvals.shape[-1] else 0.0
    return tol * scale


def pseudo_inverse(a, tol=DEFAULT_TOL):
    """Moore-Penrose inverse of a symmetric matrix (or stack) via ``eigh``.

    Eigenvalues with ``|lambda| <= tol * max|lambda|`` are treated as zero.
    """
    if tol < 0:
        raise DomainError("tol must be nonnegative")
    w, v = _eigh(a)
    keep = np.abs(w) > _cutoff(w, tol)
    inv_w = np.divide(1.0, w, out=np.zeros_like(w), where=keep)
    out = (v * inv_w[..., None, :]) @ np.swapaxes(v, -1, -2)
    return _symmetrize(out)


def numeric_rank(a, tol=DEFAULT_TOL):
    """Number of eigenvalues with ``|lambda| > tol * max|lambda|``."""
    w, _ = _eigh(a)
    rank = np.sum(np.abs(w) > _cutoff(w, tol), axis=-1)
    return int(rank) if np.ndim(rank) == 0 else rank


def psd_sqrt(a, tol=DEFAULT_TOL):
    """Symmetric PSD square root.

    Negative eigenvalues down to ``-tol * max|lambda|`` are clamped to zero;
    anything more negative raises :class:`NotPSDError`.
    """
    w, v = _eigh(a)
    if np.any(w < -_cutoff(w, tol)):
        raise NotPSDError(f"matrix has a negative eigenvalue {w.min():.3g}")
    root = np.sqrt(np.clip(w, 0.0, None))
    return _symmetrize((v * root[..., None, :]) @ np.swapaxes(v, -1, -2))


def chi2_cdf(df, x):
    """Chi-squared CDF; vectorized over ``df`` and ``x``."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("chi2_cdf is defined for x >= 0")
    out = special.chdtr(df, x)
    return float(out) if np.ndim(out) == 0 else out


def chi2_sf(df, x):
    """Upper tail ``1 - chi2_cdf(df, x)`` without cancellation; ``df == 0`` gives 0."""
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    df = np.asarray(df)
    out = np.where(df > 0, special.chdtrc(np.maximum(df, 1), x), 0.0)
    return float(out) if np.ndim(out) == 0 else out


def chi2_quantile(df, p):
    """Quantile function of the chi-squared distribution.

    ``p == 1`` returns ``inf`` (needed when a calibrated level is zero);
    ``p`` outside ``(0, 1]`` is rejected.
    """
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p > 1)):
        raise DomainError("p must lie in (0, 1]")
    half = np.asarray(df, dtype=float) / 2.0
    lower = 2.0 * special.gammaincinv(half, np.minimum(p, 0.5))
    upper = 2.0 * special.gammainccinv(half, np.maximum(1.0 - p, 0.0))
    out = np.where(p <= 0.5, lower, np.where(p < 1, upper, np.inf))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class RngStream:
    """Addressable random stream.

    Equal ``(master_seed, stream_index, parent)`` triples yield identical
    sequences; distinct indices are independent ``SeedSequence`` children.
    """

    master_seed: int
    stream_index: int = 0
    parent: tuple = field(default=())

    def child(self, index):
        return RngStream(self.master_seed, int(index), self.parent + (self.stream_index,))

    def generator(self):
        key = self.parent + (self.stream_index,)
        seq = np.random.SeedSequence(int(self.master_seed) % 2**64, spawn_key=key)
        return np.random.Generator(np.random.PCG64(seq))


def as_generator(rng):
    """Accept an :class:`RngStream`, a ``Generator`` or an integer seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return RngStream(int(rng)).generator()


def standard_normal_vector(dim, rng):
    if dim < 1:
        raise DomainError("dim must be >= 1")
    return as_generator(rng).standard_normal(dim)
