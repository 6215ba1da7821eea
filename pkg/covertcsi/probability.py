"""
Finite-alphabet probability objects and information measures
Entropies and mutual informations are reported in bits, divergences in nats
"""

import logging
from dataclasses import dataclass
from functools import reduce
from typing import Sequence, Tuple, Union, List

import numpy as np
from scipy.special import entr, rel_entr

from config import SIMPLEX_TOL, NFOLD_MEMORY_CAP
from covertcsi.exceptions import BudgetExceededError

logger = logging.getLogger(__name__)

LN2 = np.log(2.0)


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


def _check_simplex(arr: np.ndarray, tol: float, what: str):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} has non-finite entries")
    if np.any(arr < 0):
        raise ValueError(f"{what} has negative entries (min {arr.min():.3g})")
    total = arr.sum()
    if abs(total - 1.0) > tol:
        raise ValueError(f"{what} sums to {total:.17g}, not 1")


@dataclass(frozen=True)
class Pmf:
    """Probability vector over a finite alphabet"""
    probs: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.probs)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError(f"Pmf needs a non-empty vector, got shape {arr.shape}")
        _check_simplex(arr, SIMPLEX_TOL, "Pmf")
        object.__setattr__(self, 'probs', arr)

    @classmethod
    def normalized(cls, values) -> 'Pmf':
        """Build a Pmf from computed values, clipping round-off negatives."""
        arr = np.clip(np.asarray(values, dtype=float).ravel(), 0.0, None)
        return cls(arr / arr.sum())

    @classmethod
    def point_mass(cls, size: int, index: int) -> 'Pmf':
        arr = np.zeros(size)
        arr[index] = 1.0
        return cls(arr)

    @classmethod
    def uniform(cls, size: int) -> 'Pmf':
        return cls(np.full(size, 1.0 / size))

    @property
    def size(self) -> int:
        return self.probs.size

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.probs > 0)

    def __len__(self):
        return self.size


@dataclass(frozen=True)
class ConditionalPmf:
    """Row-stochastic matrix, one Pmf per conditioning symbol"""
    rows: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.rows)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"ConditionalPmf needs a non-empty matrix, got shape {arr.shape}")
        for i, row in enumerate(arr):
            _check_simplex(row, SIMPLEX_TOL, f"ConditionalPmf row {i}")
        object.__setattr__(self, 'rows', arr)

    @classmethod
    def normalized(cls, values) -> 'ConditionalPmf':
        arr = np.clip(np.asarray(values, dtype=float), 0.0, None)
        return cls(arr / arr.sum(axis=1, keepdims=True))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.rows.shape

    def row(self, index: int) -> Pmf:
        return Pmf(self.rows[index])


@dataclass(frozen=True)
class JointPmf:
    """Joint distribution over a tuple of labelled finite alphabets"""
    probs: np.ndarray
    axes: Tuple[str, ...]

    def __post_init__(self):
        arr = _frozen(self.probs)
        axes = tuple(self.axes)
        if arr.ndim != len(axes):
            raise ValueError(f"JointPmf has {arr.ndim} dimensions but {len(axes)} axis labels")
        if len(set(axes)) != len(axes):
            raise ValueError(f"duplicate axis labels {axes}")
        _check_simplex(arr, SIMPLEX_TOL, "JointPmf")
        object.__setattr__(self, 'probs', arr)
        object.__setattr__(self, 'axes', axes)

    @classmethod
    def normalized(cls, values, axes: Sequence[str]) -> 'JointPmf':
        arr = np.clip(np.asarray(values, dtype=float), 0.0, None)
        return cls(arr / arr.sum(), tuple(axes))

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.probs.shape

    def axis_index(self, label: str) -> int:
        try:
            return self.axes.index(label)
        except ValueError:
            raise ValueError(f"unknown axis '{label}', joint has axes {self.axes}") from None

    def project(self, keep: Sequence[str]) -> np.ndarray:
        """Raw marginal array over `keep`, in the order given."""
        idx = [self.axis_index(a) for a in keep]
        if len(set(idx)) != len(idx):
            raise ValueError(f"repeated axes in {tuple(keep)}")
        drop = tuple(i for i in range(len(self.axes)) if i not in idx)
        arr = self.probs.sum(axis=drop) if drop else self.probs
        remaining = [i for i in range(len(self.axes)) if i in idx]
        return np.transpose(arr, [remaining.index(i) for i in idx])

    def conditional(self, target: str, given: str) -> ConditionalPmf:
        """P(target | given); rows of zero-mass conditioning symbols get the target marginal."""
        pair = self.project([given, target])
        mass = pair.sum(axis=1, keepdims=True)
        fallback = pair.sum(axis=0)
        rows = np.where(mass > 0, pair / np.where(mass > 0, mass, 1.0), fallback)
        return ConditionalPmf.normalized(rows)


ProbLike = Union[Pmf, JointPmf, np.ndarray, Sequence[float]]


def _as_array(p: ProbLike) -> np.ndarray:
    if isinstance(p, (Pmf, JointPmf)):
        return p.probs
    if isinstance(p, ConditionalPmf):
        return p.rows
    return np.asarray(p, dtype=float)


def _axes_list(axes) -> List[str]:
    if isinstance(axes, str):
        return [axes]
    return list(axes)


def entropy(p: ProbLike) -> float:
    """
    Shannon entropy in bits, with 0*log(1/0) taken as 0.

    Args:
        p: Pmf, JointPmf or raw probability array

    Returns:
        H(p) in bits
    """
    return float(max(entr(_as_array(p)).sum() / LN2, 0.0))


def binary_entropy(p: float) -> float:
    """H_b(p) in bits."""
    return entropy(np.array([p, 1.0 - p]))


def mutual_information(j: JointPmf, axes_a, axes_b) -> float:
    """
    Mutual information I(A;B) in bits between two disjoint groups of axes.

    Args:
        j: joint distribution
        axes_a: axis label or labels forming A
        axes_b: axis label or labels forming B

    Returns:
        I(A;B) in bits, never negative
    """
    a = _axes_list(axes_a)
    b = _axes_list(axes_b)
    if not a or not b:
        raise ValueError("both axis groups must be non-empty")
    if set(a) & set(b):
        raise ValueError(f"axis groups overlap: {sorted(set(a) & set(b))}")
    pab = j.project(a + b)
    na = int(np.prod(pab.shape[:len(a)]))
    pab = pab.reshape(na, -1)
    prod = np.outer(pab.sum(axis=1), pab.sum(axis=0))
    return float(max(rel_entr(pab, prod).sum() / LN2, 0.0))


def kl_divergence(p: ProbLike, q: ProbLike) -> float:
    """D(p||q) in nats; returns inf when supp(p) is not inside supp(q)."""
    pa = _as_array(p)
    qa = _as_array(q)
    if pa.shape != qa.shape:
        raise ValueError(f"shape mismatch: {pa.shape} vs {qa.shape}")
    value = float(rel_entr(pa, qa).sum())
    if np.isinf(value):
        return float('inf')
    return max(value, 0.0)


def tv_distance(p: ProbLike, q: ProbLike) -> float:
    """Half the L1 distance."""
    pa = _as_array(p)
    qa = _as_array(q)
    if pa.shape != qa.shape:
        raise ValueError(f"shape mismatch: {pa.shape} vs {qa.shape}")
    return float(min(max(0.5 * np.abs(pa - qa).sum(), 0.0), 1.0))


def nats_to_bits(value: float) -> float:
    return value / LN2


def marginalize(j: JointPmf, keep_axes) -> Union[float, Pmf, JointPmf]:
    """
    Project a joint onto the kept axes (in the order given).

    Returns:
        the total mass as a float when nothing is kept, a Pmf for one axis,
        otherwise a JointPmf
    """
    keep = _axes_list(keep_axes)
    if not keep:
        return float(j.probs.sum())
    arr = j.project(keep)
    if len(keep) == 1:
        return Pmf.normalized(arr)
    return JointPmf.normalized(arr, keep)


def n_fold_product(p: Pmf, n: int, label: str = 'Z', cap: int = NFOLD_MEMORY_CAP) -> JointPmf:
    """
    n-fold product measure p x p x ... x p.

    Args:
        p: single-letter distribution
        n: number of factors, at least 1
        label: axis-label prefix, axes are label1..labeln
        cap: largest number of entries allowed

    Returns:
        JointPmf over n axes
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    if p.size ** n > cap:
        raise BudgetExceededError(
            f"n-fold product needs {p.size}^{n} entries, cap is {cap}")
    arr = reduce(np.multiply.outer, [p.probs] * n)
    return JointPmf.normalized(arr, [f"{label}{i + 1}" for i in range(n)])


def per_letter_divergences(p_hat: JointPmf, q0: Pmf) -> List[float]:
    """D(P_Zi || Q0) in nats for every coordinate of a joint over Z^n."""
    return [kl_divergence(p_hat.project([axis]), q0) for axis in p_hat.axes]
