"""Linear measurement operators and a sampled RIC lower-bound estimator.

Two operator families are provided:

* ``GaussianSensing`` -- dense sensing; measurement ``l`` is the matrix
  inner product of the input with an i.i.d. standard-normal matrix,
  optionally scaled by ``1/sqrt(p)``.
* ``EntrySensing`` -- a without-replacement uniform sample of ``p``
  matrix entries (the matrix-completion setting).

Operators are immutable after construction, deterministically
reproducible from a 64-bit seed, and serializable to a small JSON
descriptor (the random data is regenerated from the seed, never stored).
"""

from __future__ import annotations

import json
import math

import numpy as np
from scipy import sparse

from .errors import ContractViolationError
from .matcore import check_matrix

# above this index-space size, entry sampling switches from a full
# permutation to rejection sampling with a hash set
_PERMUTATION_LIMIT = 10**7


class GaussianSensing:
    """Dense Gaussian sensing map from m-by-n matrices to p measurements.

    ``scale=None`` picks the normalized variant ``1/sqrt(p)`` for which
    the restricted isometry constants are meaningful; ``scale=1.0``
    gives raw N(0,1) sensing matrices.  Recovery behavior is identical
    between the two because every solver stepsize is a Rayleigh-quotient
    ratio, so fixed points are unchanged and only alpha rescales.
    """

    kind = "gaussian"

    def __init__(self, m: int, n: int, p: int, seed: int, scale: float | None = None):
        # p > m*n is permitted: an oversampled Gaussian map is well defined
        # (and is what drives its restricted isometry constant small)
        if m < 1 or n < 1 or p < 1:
            raise ContractViolationError("m, n, p must be positive")
        self.m = int(m)
        self.n = int(n)
        self.p = int(p)
        self.seed = int(seed)
        self.scale = float(scale) if scale is not None else 1.0 / math.sqrt(p)
        rng = np.random.default_rng(self.seed)
        # row l is the row-major vectorization of the l-th sensing matrix
        self._flat = rng.standard_normal((self.p, self.m * self.n))

    def apply(self, Z: np.ndarray) -> np.ndarray:
        Z = check_matrix(Z, "Z")
        if Z.shape != (self.m, self.n):
            raise ContractViolationError(
                f"expected a {self.m}x{self.n} matrix, got {Z.shape[0]}x{Z.shape[1]}"
            )
        return self.scale * (self._flat @ Z.ravel())

    def adjoint(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.p,):
            raise ContractViolationError(f"expected a length-{self.p} vector, got {v.shape}")
        return self.scale * (self._flat.T @ v).reshape(self.m, self.n)

    def apply_outer(self, L: np.ndarray, Rt: np.ndarray) -> np.ndarray:
        """Measure the product L @ Rt (dense product is formed here)."""
        return self.apply(L @ Rt)

    def apply_flat_batch(self, Zs: np.ndarray) -> np.ndarray:
        """Measure a batch of row-major-vectorized matrices, shape (k, m*n)."""
        return self.scale * (Zs @ self._flat.T)

    def descriptor(self) -> dict:
        return {
            "kind": self.kind,
            "m": self.m,
            "n": self.n,
            "p": self.p,
            "seed": self.seed,
            "scale": self.scale,
        }


class EntrySensing:
    """Uniform without-replacement sample of p entries of an m-by-n matrix.

    The sampled positions are stored sorted row-major; the measurement
    order is that sorted order (any fixed order is valid since a
    permutation of the measurement vector carries no information).
    """

    kind = "entry"
    scale = 1.0

    def __init__(self, m: int, n: int, p: int, seed: int):
        if m < 1 or n < 1 or p < 1:
            raise ContractViolationError("m, n, p must be positive")
        if p > m * n:
            raise ContractViolationError(f"p={p} exceeds m*n={m * n}")
        self.m = int(m)
        self.n = int(n)
        self.p = int(p)
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        mn = self.m * self.n
        if mn <= _PERMUTATION_LIMIT:
            flat = rng.permutation(mn)[: self.p]
        else:
            chosen: set[int] = set()
            while len(chosen) < self.p:
                draw = rng.integers(0, mn, size=self.p - len(chosen))
                chosen.update(int(x) for x in draw)
            flat = np.fromiter(chosen, dtype=np.int64, count=self.p)
        self._flat_idx = np.sort(flat)
        self.rows, self.cols = np.divmod(self._flat_idx, self.n)

    def apply(self, Z: np.ndarray) -> np.ndarray:
        Z = check_matrix(Z, "Z")
        if Z.shape != (self.m, self.n):
            raise ContractViolationError(
                f"expected a {self.m}x{self.n} matrix, got {Z.shape[0]}x{Z.shape[1]}"
            )
        return Z[self.rows, self.cols]

    def adjoint(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.p,):
            raise ContractViolationError(f"expected a length-{self.p} vector, got {v.shape}")
        out = np.zeros((self.m, self.n))
        out[self.rows, self.cols] = v
        return out

    def adjoint_sparse(self, v: np.ndarray) -> sparse.csr_matrix:
        """Adjoint as a sparse matrix; same values as ``adjoint``."""
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.p,):
            raise ContractViolationError(f"expected a length-{self.p} vector, got {v.shape}")
        return sparse.csr_matrix((v, (self.rows, self.cols)), shape=(self.m, self.n))

    def apply_outer(self, L: np.ndarray, Rt: np.ndarray) -> np.ndarray:
        """Measure L @ Rt touching only the sampled entries (p*k work)."""
        # transpose once so both gathers read contiguous rows
        rt_rows = np.ascontiguousarray(Rt.T)
        return np.einsum("ij,ij->i", L[self.rows], rt_rows[self.cols])

    def apply_flat_batch(self, Zs: np.ndarray) -> np.ndarray:
        return Zs[:, self._flat_idx]

    def descriptor(self) -> dict:
        return {
            "kind": self.kind,
            "m": self.m,
            "n": self.n,
            "p": self.p,
            "seed": self.seed,
            "scale": self.scale,
        }


SensingOperator = GaussianSensing | EntrySensing


def operator_from_descriptor(desc: dict | str) -> SensingOperator:
    """Rebuild an operator from its JSON descriptor (dict or JSON string)."""
    if isinstance(desc, str):
        desc = json.loads(desc)
    kind = desc.get("kind")
    if kind == "gaussian":
        return GaussianSensing(desc["m"], desc["n"], desc["p"], desc["seed"], desc.get("scale"))
    if kind == "entry":
        return EntrySensing(desc["m"], desc["n"], desc["p"], desc["seed"])
    raise ContractViolationError(f"unknown operator kind {kind!r}")


def estimate_ric_lower_bound(
    op: SensingOperator,
    r: int,
    trials: int,
    seed: int = 0,
    chunk: int | None = None,
) -> float:
    """Sampled lower bound on the rank-r restricted isometry constant.

    Draws random unit-Frobenius-norm matrices of rank <= j for every
    j = 1..r (``trials`` draws per rank, sample sets nested in r so the
    estimate is monotone nondecreasing in r) and returns the maximum of
    ``|  ||A(Z)||_2^2 - 1 |`` over all draws.

    This is a *lower bound* on the true constant, never the constant
    itself: the maximization over the rank-<=r manifold is replaced by a
    finite sample.  Do not treat the returned value as the RIC.
    """
    if r < 1 or r > min(op.m, op.n):
        raise ContractViolationError(f"r={r} out of range for a {op.m}x{op.n} operator")
    if trials < 1:
        raise ContractViolationError("trials must be >= 1")
    mn = op.m * op.n
    if chunk is None:
        chunk = max(1, min(trials, int(4_000_000 // max(mn, op.p, 1))))
    worst = 0.0
    for j in range(1, r + 1):
        rng = np.random.default_rng(np.random.SeedSequence((seed, j)))
        done = 0
        while done < trials:
            c = min(chunk, trials - done)
            L = rng.standard_normal((c, op.m, j))
            R = rng.standard_normal((c, j, op.n))
            Z = np.matmul(L, R).reshape(c, mn)
            norms = np.linalg.norm(Z, axis=1)
            norms[norms == 0.0] = 1.0
            Z /= norms[:, None]
            meas = op.apply_flat_batch(Z)
            dev = np.abs(np.einsum("ij,ij->i", meas, meas) - 1.0)
            worst = max(worst, float(dev.max()))
            done += c
    return worst
