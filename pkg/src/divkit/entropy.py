"""Spectral entropy scores on Gram matrices and reweighted empirical measures.

Vendi is exp of the von Neumann entropy of K/n; RKE is exp of the order-2
Renyi entropy of the same matrix, computed directly from the Frobenius norm
(no eigendecomposition).  Reweighting a fixed sample set with a simplex
vector q replaces K/n by diag(sqrt(q)) K diag(sqrt(q)), which shares its
nonzero spectrum with the weighted covariance of the (implicit) kernel
features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import EmbeddingSet
from .errors import (
    DataError,
    DimensionMismatch,
    NotPSD,
    NotUnitTrace,
    NumericError,
    SizeCapExceeded,
)
from .kernels import GramMatrix, KernelSpec, gram

#: eigenvalues below this (relative to unit trace) count as zero inside logs,
#: implementing the 0*log(0) = 0 convention stably
SPECTRAL_FLOOR = 1e-12

#: weights at or below this are treated as off-support by the gradient
WEIGHT_FLOOR = 1e-15

#: exact eigendecomposition refused above this size by default
DEFAULT_SIZE_CAP = 20_000


@dataclass(frozen=True)
class WeightVector:
    """A point on the n-simplex; renormalized to sum exactly 1 on construction."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if w.size < 1:
            raise DataError("weight vector must have at least one entry")
        if not np.isfinite(w).all():
            raise DataError("weights must be finite")
        if w.min() < -1e-12:
            raise DataError(f"weights must be nonnegative, min is {w.min():.3e}")
        w = np.maximum(w, 0.0)
        total = w.sum()
        if total <= 0:
            raise DataError("weights sum to zero")
        w = w / total
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.size

    @staticmethod
    def uniform(n: int) -> "WeightVector":
        return WeightVector(np.full(n, 1.0 / n))

    @staticmethod
    def point_mass(n: int, i: int) -> "WeightVector":
        w = np.zeros(n)
        w[i] = 1.0
        return WeightVector(w)


@dataclass(frozen=True)
class SpectrumReport:
    """Clamped descending eigenvalues of a unit-trace PSD matrix."""

    eigenvalues: np.ndarray
    trace: float
    floor: float = SPECTRAL_FLOOR

    @staticmethod
    def from_matrix(a: np.ndarray, floor: float = SPECTRAL_FLOOR) -> "SpectrumReport":
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DataError(f"expected a square matrix, got shape {a.shape}")
        trace = float(np.trace(a))
        if abs(trace - 1.0) > 1e-6:
            raise NotUnitTrace(f"trace is {trace!r}, expected 1")
        a = (a + a.T) / 2.0
        try:
            vals = np.linalg.eigvalsh(a)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"eigendecomposition failed: {exc}") from exc
        if vals[0] < -1e-10:
            raise NotPSD(f"smallest eigenvalue {vals[0]:.3e} below tolerance")
        vals = np.maximum(vals[::-1], 0.0)
        return SpectrumReport(vals, trace, floor)


def von_neumann_entropy(a, floor: float = SPECTRAL_FLOOR) -> float:
    """Entropy -sum(lam * log(lam)) of a unit-trace PSD matrix (nats).

    Accepts either the matrix itself or a precomputed SpectrumReport.
    Eigenvalues at or below ``floor`` contribute nothing (0*log(0) = 0).
    """
    report = a if isinstance(a, SpectrumReport) else SpectrumReport.from_matrix(a, floor)
    lam = report.eigenvalues
    live = lam[lam > report.floor]
    return max(0.0, float(-(live * np.log(live)).sum()))


@dataclass(frozen=True)
class DiversityScore:
    """Vendi and RKE of one sample set under one kernel.

    Both scores live in [1, n]; RKE never exceeds Vendi because Renyi
    entropies decrease in their order.
    """

    vendi: float
    log_vendi: float
    rke: float
    n: int
    spec: KernelSpec | None

    def __post_init__(self):
        if not (1.0 - 1e-9 <= self.vendi <= self.n * (1.0 + 1e-9)):
            raise NumericError(f"vendi {self.vendi!r} outside [1, {self.n}]")
        if not (1.0 - 1e-9 <= self.rke <= self.n * (1.0 + 1e-9)):
            raise NumericError(f"rke {self.rke!r} outside [1, {self.n}]")
        if self.rke > self.vendi * (1.0 + 1e-6):
            raise NumericError(f"rke {self.rke!r} exceeds vendi {self.vendi!r}")

    def to_payload(self) -> dict:
        return {
            "vendi": self.vendi,
            "log_vendi": self.log_vendi,
            "rke": self.rke,
            "n": self.n,
            "kernel": self.spec.to_payload() if self.spec else None,
        }


def rke(k: GramMatrix) -> float:
    """n^2 / sum(K_ij^2): the Frobenius form of the order-2 score."""
    total = float((k.values * k.values).sum())
    return k.n * k.n / total


def score_gram(k: GramMatrix, size_cap: int = DEFAULT_SIZE_CAP) -> DiversityScore:
    """Vendi (exact eigendecomposition of K/n) and RKE of one Gram matrix."""
    if k.n > size_cap:
        raise SizeCapExceeded(f"n = {k.n} exceeds the exact-eigensolve cap {size_cap}")
    h = von_neumann_entropy(SpectrumReport.from_matrix(k.values / k.n))
    log_vendi = min(h, np.log(k.n)) if k.n > 1 else 0.0
    return DiversityScore(
        vendi=float(np.exp(log_vendi)),
        log_vendi=float(log_vendi),
        rke=rke(k),
        n=k.n,
        spec=k.spec,
    )


def vendi(x: EmbeddingSet, spec: KernelSpec, size_cap: int = DEFAULT_SIZE_CAP) -> DiversityScore:
    """Diversity scores of an embedding set under ``spec``."""
    if x.n > size_cap:
        raise SizeCapExceeded(f"n = {x.n} exceeds the exact-eigensolve cap {size_cap}")
    return score_gram(gram(x, spec), size_cap=size_cap)


# ---------------------------------------------------------------------------
# reweighted empirical measures
# ---------------------------------------------------------------------------

def _check_dims(k: GramMatrix, q: WeightVector) -> None:
    if q.n != k.n:
        raise DimensionMismatch(f"weights have {q.n} entries, Gram is {k.n}x{k.n}")


def weighted_gram(k: GramMatrix, q: WeightVector) -> np.ndarray:
    """diag(sqrt(q)) K diag(sqrt(q)); unit trace because K has unit diagonal."""
    _check_dims(k, q)
    root = np.sqrt(q.weights)
    return k.values * np.outer(root, root)


def vne_weighted(k: GramMatrix, q: WeightVector, floor: float = SPECTRAL_FLOOR) -> float:
    """Entropy of the q-reweighted measure; Shannon entropy of q when K = I."""
    return von_neumann_entropy(weighted_gram(k, q), floor)


def vne_gradient(
    k: GramMatrix,
    q: WeightVector,
    floor: float = SPECTRAL_FLOOR,
    weight_floor: float = WEIGHT_FLOOR,
) -> np.ndarray:
    """Gradient of ``vne_weighted`` with respect to the weights.

    Evaluated in the eigenbasis of A(q) = diag(sqrt(q)) K diag(sqrt(q)):
    with A = U diag(lam) U^T the i-th component is

        g_i = -(1/q_i) * sum_j U_ij^2 * lam_j * (log(max(lam_j, floor)) + 1),

    which reproduces the quadratic form of the i-th kernel feature against
    log(C(q)) + I.  Matches central finite differences along simplex tangent
    directions to relative 1e-5 at interior q.

    Weights at or below ``weight_floor`` take the analytically continued
    limit with the floor substituted for q_i in the division; components with
    exactly zero weight get a zero gradient (they carry no spectral mass).
    """
    _check_dims(k, q)
    a = weighted_gram(k, q)
    try:
        lam, u = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed: {exc}") from exc
    lam_pos = np.maximum(lam, 0.0)
    log_term = np.log(np.maximum(lam, floor)) + 1.0
    mass = (u * u) @ (lam_pos * log_term)
    return -mass / np.maximum(q.weights, weight_floor)


def inverse_rke_weighted(k2: GramMatrix, q: WeightVector) -> float:
    """q^T Ktilde q for a Hadamard-square Gram Ktilde; in (0, 1].

    The RKE of the reweighted measure is the reciprocal of this value.
    """
    _check_dims(k2, q)
    return float(q.weights @ k2.values @ q.weights)
