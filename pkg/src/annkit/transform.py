"""Vector preprocessing: random rotation, PCA, metric-equivalence maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import as_vectors


@dataclass
class LinearTransform:
    """Affine map x -> A x + b applied row-wise. Immutable after creation."""

    matrix: np.ndarray  # (d_out, d_in) float32
    bias: np.ndarray  # (d_out,) float32
    is_orthonormal: bool = False

    @property
    def d_in(self) -> int:
        return self.matrix.shape[1]

    @property
    def d_out(self) -> int:
        return self.matrix.shape[0]

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = as_vectors(x, self.d_in)
        return np.ascontiguousarray(x @ self.matrix.T + self.bias, dtype=np.float32)


def random_rotation(d: int, seed: int = 0) -> LinearTransform:
    """Orthonormal d x d matrix from the QR of a seeded Gaussian draw.

    The R-diagonal sign fix makes the factorization (and thus the output)
    unique per seed.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((d, d))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))
    return LinearTransform(q.astype(np.float32), np.zeros(d, dtype=np.float32),
                           is_orthonormal=True)


def pca_train(x: np.ndarray, d_out: int) -> LinearTransform:
    """Top-d_out principal directions of mean-centered x.

    Row signs are fixed by making each component's largest-magnitude
    coefficient positive, so training is deterministic.
    """
    x = as_vectors(x)
    n, d = x.shape
    if d_out > d:
        raise ValueError(f"d_out={d_out} exceeds input dimension {d}")
    if n < d_out:
        raise ValueError(f"need at least d_out={d_out} training vectors, got {n}")
    mean = x.mean(axis=0, dtype=np.float64)
    centered = x.astype(np.float64) - mean
    cov = centered.T @ centered / n
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:d_out]
    comps = eigvecs[:, order].T  # (d_out, d)
    flip = np.sign(comps[np.arange(d_out), np.abs(comps).argmax(axis=1)])
    flip[flip == 0] = 1.0
    comps = comps * flip[:, None]
    bias = -(comps @ mean)
    return LinearTransform(comps.astype(np.float32), bias.astype(np.float32),
                           is_orthonormal=(d_out == d))


_MAP_METRICS = ("l2", "ip", "cos")


@dataclass
class MetricMap:
    """Table of preprocessing maps making one metric searchable by another.

    ``source`` is the metric whose neighbors are wanted; ``index`` is the
    metric of the index that stores the mapped vectors. For cells that target
    ``cos``, the mapped database vectors are unit-norm by construction, so an
    inner-product index over them realizes cosine ranking.
    """

    source: str
    index: str
    alpha: float | None = None
    beta: float | None = None
    _max_norm: float = field(default=0.0, repr=False)
    fitted: bool = False

    def __post_init__(self) -> None:
        if self.source not in _MAP_METRICS or self.index not in _MAP_METRICS:
            raise ValueError(f"metrics must be one of {_MAP_METRICS}")
        if self.source == self.index:
            raise ValueError("identity cell: no mapping needed")

    @property
    def d_extra(self) -> int:
        if self.source == "cos":
            return 0
        if (self.source, self.index) == ("l2", "cos"):
            return 2
        return 1

    def fit(self, db: np.ndarray) -> "MetricMap":
        """Choose alpha/beta so every square-root argument stays >= 0 for the
        supplied database vectors (5% headroom for later additions)."""
        db = as_vectors(db)
        norms = np.linalg.norm(db.astype(np.float64), axis=1)
        if self.source == "cos" and np.any(norms == 0):
            raise ValueError("zero-norm database vector cannot be normalized")
        y = float(norms.max(initial=0.0))
        self._max_norm = y
        if self.alpha is None:
            if (self.source, self.index) == ("ip", "cos"):
                # alpha scales y down: need alpha*||y|| <= 1
                self.alpha = 1.0 if y == 0 else 1.0 / (1.05 * y)
            else:
                self.alpha = 1.0 if y == 0 else 1.05 * y
        if self.beta is None and (self.source, self.index) == ("l2", "cos"):
            # need beta^2 (||y||^2 + ||y||^4/alpha^2) <= 1 for all y
            worst = y * y + y ** 4 / self.alpha ** 2
            self.beta = 1.0 if worst == 0 else 1.0 / (1.05 * np.sqrt(worst))
        self.fitted = True
        return self

    def _require_fitted(self) -> None:
        if not self.fitted:
            raise RuntimeError("metric map must be fitted before applying")

    def apply_query(self, q: np.ndarray) -> np.ndarray:
        self._require_fitted()
        q = as_vectors(q)
        n = q.shape[0]
        cell = (self.source, self.index)
        if self.source == "cos":
            norms = np.linalg.norm(q, axis=1, keepdims=True)
            if np.any(norms == 0):
                raise ValueError("zero-norm query cannot be normalized")
            return np.ascontiguousarray(q / norms, dtype=np.float32)
        if cell == ("l2", "ip"):
            extra = np.full((n, 1), -self.alpha / 2, dtype=np.float32)
            return np.hstack([q, extra])
        if cell == ("l2", "cos"):
            extra = np.hstack([np.full((n, 1), -self.alpha / 2), np.zeros((n, 1))])
            return np.hstack([q, extra.astype(np.float32)])
        # ip -> l2 and ip -> cos both pad a zero
        return np.hstack([q, np.zeros((n, 1), dtype=np.float32)])

    def apply_db(self, y: np.ndarray) -> np.ndarray:
        self._require_fitted()
        y = as_vectors(y)
        cell = (self.source, self.index)
        sq = np.einsum("nd,nd->n", y.astype(np.float64), y.astype(np.float64))
        if self.source == "cos":
            norms = np.sqrt(sq)
            if np.any(norms == 0):
                raise ValueError("zero-norm database vector cannot be normalized")
            return np.ascontiguousarray(y / norms[:, None].astype(np.float32))
        if cell == ("l2", "ip"):
            return np.hstack([y, (sq / self.alpha)[:, None].astype(np.float32)])
        if cell == ("l2", "cos"):
            arg = 1.0 - self.beta ** 2 * sq - self.beta ** 2 * sq ** 2 / self.alpha ** 2
            self._check_domain(arg)
            return np.hstack([self.beta * y,
                              (self.beta * sq / self.alpha)[:, None].astype(np.float32),
                              np.sqrt(arg)[:, None].astype(np.float32)])
        if cell == ("ip", "l2"):
            arg = self.alpha ** 2 - sq
            self._check_domain(arg)
            return np.hstack([y, np.sqrt(arg)[:, None].astype(np.float32)])
        # ip -> cos
        arg = 1.0 - self.alpha ** 2 * sq
        self._check_domain(arg)
        return np.hstack([self.alpha * y, np.sqrt(arg)[:, None].astype(np.float32)])

    def _check_domain(self, arg: np.ndarray) -> None:
        if np.any(arg < 0):
            raise ValueError(
                "vector norm exceeds the range fixed at fit time; refit the map "
                "before adding larger vectors")
