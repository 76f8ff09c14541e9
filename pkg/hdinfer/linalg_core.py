"""
Shared numerical substrate: array checks, norms, the standard normal cdf and
quantile, empirical quantiles and seedable, splittable randomness
"""
import logging
import math
from typing import Literal, Union

import numpy as np
from scipy import special

from hdinfer.annotations import Matrix, Probability, Seed, Vector


# ======
# Logger
# ======
logger = logging.getLogger(__name__)


# =========
# Constants
# =========
_SQRT_2PI = math.sqrt(2.0 * math.pi)
# Guards the ceiling convention against float noise in B * level
_QUANTILE_INDEX_SLACK = 1e-9


# ==========
# Exceptions
# ==========
class DimensionError(Exception):
    """Array shapes are empty or inconsistent"""

    pass


class DomainError(ValueError):
    """Argument outside of its mathematical domain"""

    pass


# ======
# Arrays
# ======
def as_vector(v, name: str = "vector") -> Vector:
    """Cast to a nonempty, finite 1d float array

    Raises:
        DimensionError: if `v` is not 1d or is empty
        DomainError: if `v` has non-finite entries
    """
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionError(
            f"{name} must be a nonempty 1d array, got {arr.shape=}"
        )
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} has non-finite entries")
    return arr


def as_matrix(a, name: str = "matrix") -> Matrix:
    """Cast to a nonempty, finite 2d float array

    Raises:
        DimensionError: if `a` is not 2d or has a zero dimension
        DomainError: if `a` has non-finite entries
    """
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2 or arr.size == 0:
        raise DimensionError(
            f"{name} must be a nonempty 2d array, got {arr.shape=}"
        )
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} has non-finite entries")
    return arr


def check_alpha(alpha: float, name: str = "alpha") -> float:
    """Check 0 < alpha < 1"""
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"{name} must lie in (0, 1), got {alpha=}")
    return float(alpha)


# =====
# Norms
# =====
def norm(v: Vector, which: Literal["l1", "l2", "linf"]) -> float:
    """l1, l2 or sup norm of a vector

    Args:
        v (Vector): nonempty vector
        which (str): one of "l1", "l2", "linf"

    Returns:
        float: the norm
    """
    v = as_vector(v)
    if which == "l1":
        return float(np.sum(np.abs(v)))
    if which == "l2":
        return float(np.linalg.norm(v, ord=2))
    if which == "linf":
        return float(np.max(np.abs(v)))
    raise DomainError(f"Unknown norm {which=}")


def max_abs(a: Matrix) -> float:
    """Largest absolute entry of an array"""
    return float(np.max(np.abs(a)))


def max_row_l1(a: Matrix) -> float:
    """Largest l1 norm among the rows of a matrix"""
    return float(np.max(np.sum(np.abs(a), axis=1)))


# ===============
# Standard normal
# ===============
def std_normal_pdf(x):
    return np.exp(-0.5 * np.square(x)) / _SQRT_2PI


def std_normal_cdf(x: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Standard normal cdf, accurate deep in both tails

    scipy's `ndtr` goes through erfc on the lower tail, so the relative
    accuracy holds for very negative `x`.

    Raises:
        DomainError: on NaN input
    """
    arr = np.asarray(x, dtype=float)
    if np.any(np.isnan(arr)):
        raise DomainError("std_normal_cdf is undefined at NaN")
    out = special.ndtr(arr)
    return float(out) if out.ndim == 0 else out


def std_normal_sf(x: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """1 - Phi(x), computed as Phi(-x) to keep upper-tail precision"""
    return std_normal_cdf(-np.asarray(x, dtype=float))


def std_normal_quantile(
    p: Union[Probability, np.ndarray]
) -> Union[float, np.ndarray]:
    """Inverse of the standard normal cdf

    Seeded by scipy's rational approximation `ndtri`, then refined by one
    Newton step. The step is taken on the smaller of p and 1 - p, so that
    quantiles such as Phi^-1(1 - alpha/p) stay accurate for tiny alpha/p.

    Raises:
        DomainError: unless 0 < p < 1
    """
    arr = np.asarray(p, dtype=float)
    if np.any(np.isnan(arr)) or np.any((arr <= 0.0) | (arr >= 1.0)):
        raise DomainError(f"Quantile level must lie in (0, 1), got {p=}")
    tail = np.minimum(arr, 1.0 - arr)
    y = special.ndtri(tail)
    y = y - (special.ndtr(y) - tail) / std_normal_pdf(y)
    out = np.where(arr > 0.5, -y, y)
    return float(out) if out.ndim == 0 else out


# ==================
# Empirical quantile
# ==================
def empirical_quantile(samples: Vector, level: Probability) -> float:
    """The ceil(B * level)-th order statistic of B samples

    Args:
        samples (Vector): B >= 1 values
        level (float): in (0, 1]

    Returns:
        float: conservative (upper) empirical quantile
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 1 or samples.size == 0:
        raise DimensionError("empirical_quantile needs at least one sample")
    if not (0.0 < level <= 1.0):
        raise DomainError(f"Quantile level must lie in (0, 1], got {level=}")
    n_samples = samples.size
    rank = math.ceil(n_samples * level - _QUANTILE_INDEX_SLACK)
    rank = min(max(rank, 1), n_samples)
    return float(np.partition(samples, rank - 1)[rank - 1])


# ==========
# Randomness
# ==========
class Rng:
    """Deterministic, splittable random stream

    Backed by numpy's counter-based Philox bit generator. A stream is fully
    identified by (seed, key); `fork` appends indices to the key, so child
    streams only depend on where they sit in the tree, never on the order in
    which workers consume them.

    Attributes
        seed (int): nonnegative root seed
        key (tuple[int, ...]): path from the root stream
        generator (np.random.Generator): the underlying generator
    """

    def __init__(self, seed: Seed, key: tuple = ()):
        if seed < 0:
            raise DomainError(f"Seed must be nonnegative, got {seed=}")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        seed_seq = np.random.SeedSequence(
            entropy=self.seed, spawn_key=self.key
        )
        self.generator = np.random.Generator(np.random.Philox(seed_seq))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, key={self.key})"

    def fork(self, *indices: int) -> "Rng":
        """Independent child stream at `indices` below the current key"""
        return Rng(seed=self.seed, key=self.key + tuple(indices))

    def standard_normal(self, size) -> np.ndarray:
        return self.generator.standard_normal(size=size)

    def uniform(self, size, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self.generator.uniform(low=low, high=high, size=size)

    def exponential(self, size) -> np.ndarray:
        return self.generator.standard_exponential(size=size)

    def bernoulli(self, prob, size=None) -> np.ndarray:
        return (self.generator.uniform(size=size) < prob).astype(float)

    def multinomial_counts(self, n: int) -> np.ndarray:
        """Counts of n uniform draws with replacement among n cells"""
        return self.generator.multinomial(n=n, pvals=np.full(n, 1.0 / n))

    def student_t(self, dof: float, size) -> np.ndarray:
        """Student-t draws built as N(0,1) / sqrt(chi2_dof / dof)"""
        if dof <= 0:
            raise DomainError(f"Degrees of freedom must be positive, {dof=}")
        normal = self.generator.standard_normal(size=size)
        chi2 = self.generator.chisquare(df=dof, size=size)
        return normal / np.sqrt(chi2 / dof)

    def child_seed(self) -> Seed:
        """Nonnegative integer seed for APIs that take a seed, not a stream"""
        return int(self.generator.integers(low=0, high=2**62))
