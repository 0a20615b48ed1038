"""Exposure estimators: (conditional) nearest-neighbour matching, Poisson
factorization fitted by coordinate-ascent VI, and the encoder-decoder."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.special import digamma, gammaln

from .errors import DataError, ElboError, ShapeError
from .matrices import UserMatrix
from .neuralnet import MlpModel, TrainConfig, TrainHistory, forward, train

logger = logging.getLogger(__name__)

METHODS = ("nn", "cnn", "pf", "encdec")


@dataclass
class ExposureEstimate:
    e_hat: np.ndarray = field(repr=False)
    method: str
    used_profile: bool
    user_ids: tuple[str, ...] = ()
    # index of the matched contributor, NN methods only
    match: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.e_hat.size and (self.e_hat.min() < 0 or self.e_hat.max() > 1):
            raise ValueError("exposure estimates must lie in [0, 1]")


# -- nearest-neighbour matching --------------------------------------------

def _rows(x, t: int | None):
    if isinstance(x, UserMatrix):
        return np.asarray(x.u, dtype=float), x.t
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ShapeError("expected a 2-D matrix of user rows")
    return x, x.shape[1] if t is None else t


def hamming_distances(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Pairwise Hamming distances between binary rows of ``x`` and ``c``."""
    return x @ (1.0 - c).T + (1.0 - x) @ c.T


def cosine_distances(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    nx = np.linalg.norm(x, axis=1)[:, None]
    nc = np.linalg.norm(c, axis=1)[None, :]
    denom = nx * nc
    sim = np.divide(x @ c.T, denom, out=np.zeros((len(x), len(c))), where=denom > 0)
    return 1.0 - sim


_METRICS = {"hamming": hamming_distances, "cosine": cosine_distances}


def _prepare(engagers, contributors, t, use_profile, metric):
    x, t = _rows(engagers, t)
    c, tc = _rows(contributors, t)
    if tc != t or x.shape[1] != c.shape[1]:
        raise ShapeError("engager and contributor rows must share the same layout")
    if len(c) == 0:
        raise DataError("the contributor pool is empty")
    if metric not in _METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    cols = slice(None) if use_profile else slice(0, t)
    return x, c, t, cols


def _excluded(dist, exclude, offset):
    if exclude is None:
        return dist
    ex = np.asarray(exclude)[offset:offset + len(dist)]
    rows = np.nonzero(ex >= 0)[0]
    dist[rows, ex[rows]] = np.inf
    return dist


def nn_match(engagers, contributors, use_profile: bool = False, *, t: int | None = None,
             exclude: Sequence[int] | None = None, metric: str = "hamming",
             block: int = 2048) -> ExposureEstimate:
    """Copy each engager's closest contributor's activity vector.

    Distances use the activity columns only, or the full user row when
    ``use_profile``. Ties go to the lowest contributor index.
    ``exclude[i]`` (or -1) removes one contributor from engager i's pool.
    """
    x, c, t, cols = _prepare(engagers, contributors, t, use_profile, metric)
    dist_fn = _METRICS[metric]
    match = np.empty(len(x), dtype=np.int64)
    for s in range(0, len(x), block):
        d = _excluded(dist_fn(x[s:s + block, cols], c[:, cols]), exclude, s)
        match[s:s + block] = np.argmin(d, axis=1)
    e_hat = c[match, :t].copy()
    return ExposureEstimate(e_hat, "nn", use_profile, match=match)


def conditional_nn_match(engagers, contributors, use_profile: bool = False, *,
                         t: int | None = None, exclude: Sequence[int] | None = None,
                         metric: str = "hamming", block: int = 2048) -> ExposureEstimate:
    """Nearest neighbour restricted to contributors covering the engager.

    A contributor covers an engager when it is active on every topic the
    engager is active on. Without any covering candidate the match
    minimises ``distance + (t + 1) * missed_topics``. The engager's own
    active topics are then forced to 1, so no estimate contradicts
    observed activity.
    """
    x, c, t, cols = _prepare(engagers, contributors, t, use_profile, metric)
    dist_fn = _METRICS[metric]
    kappa = t + 1
    match = np.empty(len(x), dtype=np.int64)
    for s in range(0, len(x), block):
        xb = x[s:s + block]
        d = _excluded(dist_fn(xb[:, cols], c[:, cols]), exclude, s)
        missed = xb[:, :t] @ (1.0 - c[:, :t]).T
        covered = (missed == 0) & np.isfinite(d)
        restricted = np.where(covered, d, np.inf)
        fallback = d + kappa * missed
        has_cover = covered.any(axis=1)
        match[s:s + block] = np.where(has_cover, np.argmin(restricted, axis=1),
                                      np.argmin(fallback, axis=1))
    e_hat = np.maximum(c[match, :t], x[:, :t])
    return ExposureEstimate(e_hat, "cnn", use_profile, match=match)


def contradictions(e_hat: np.ndarray, a: np.ndarray) -> int:
    """Cells with estimated exposure 0 but observed activity 1."""
    return int(np.sum((np.asarray(e_hat) == 0) & (np.asarray(a) == 1)))


# -- Poisson factorization --------------------------------------------------

@dataclass
class PfModel:
    """Mean-field Gamma posteriors for user factors and topic factors."""

    K: int
    shape_u: np.ndarray = field(repr=False)
    rate_u: np.ndarray = field(repr=False)
    shape_t: np.ndarray = field(repr=False)
    rate_t: np.ndarray = field(repr=False)
    hyper: tuple[float, float, float, float]
    elbo_history: list[float] = field(default_factory=list)
    user_ids: tuple[str, ...] = ()
    converged: bool = False

    @property
    def mean_u(self) -> np.ndarray:
        return self.shape_u / self.rate_u

    @property
    def mean_t(self) -> np.ndarray:
        return self.shape_t / self.rate_t

    def expected_rates(self, rows=None) -> np.ndarray:
        """E[pi_u . lambda_t] for the selected users (all by default)."""
        mu = self.mean_u if rows is None else self.mean_u[rows]
        return mu @ self.mean_t.T


def _gamma_kl_terms(shape, rate, a0, b0):
    """E_q[log p] - E_q[log q] summed over independent Gamma factors."""
    elog = digamma(shape) - np.log(rate)
    mean = shape / rate
    log_p = a0 * np.log(b0) - gammaln(a0) + (a0 - 1) * elog - b0 * mean
    log_q = shape * np.log(rate) - gammaln(shape) + (shape - 1) * elog - shape
    return float(np.sum(log_p - log_q))


def _elbo(vals, lse, mean_u, mean_t, mask, const):
    """Poisson data term with the allocations optimised out."""
    data = float(np.dot(vals, lse))
    if mask is None:
        data -= float(mean_u.sum(axis=0) @ mean_t.sum(axis=0))
    else:
        data -= float(np.sum(mask * (mean_u @ mean_t.T)))
    return data - const


def pf_fit(a, K: int = 20, hyper=(0.3, 0.3, 0.3, 0.3), max_iters: int = 300,
           tol: float = 1e-6, seed: int = 0, mask=None,
           user_ids: Sequence[str] = ()) -> PfModel:
    """Fit ``a[u, t] ~ Poisson(pi_u . lambda_t)`` with Gamma priors by CAVI.

    ``pi_uk ~ Gamma(c1, c2)`` and ``lambda_tk ~ Gamma(c3, c4)`` (shape, rate).
    Auxiliary multinomial allocations are refreshed before each factor
    block, so the ELBO cannot decrease between iterations. ``mask`` marks
    observed cells (default: all). Stops when the relative ELBO change
    drops below ``tol``.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.size == 0:
        raise ShapeError("count matrix must be a non-empty 2-D array")
    if K < 1:
        raise ValueError("K must be >= 1")
    hyper = tuple(float(h) for h in hyper)
    if len(hyper) != 4 or min(hyper) <= 0:
        raise ValueError("hyper must be four positive numbers (c1, c2, c3, c4)")
    if np.any(a < 0) or np.any(a != np.round(a)):
        raise DataError("Poisson factorization needs non-negative integer counts")
    if mask is not None:
        mask = np.asarray(mask, dtype=float)
        if mask.shape != a.shape:
            raise ShapeError("mask must match the count matrix")
    c1, c2, c3, c4 = hyper
    m, n = a.shape
    observed = a if mask is None else a * mask
    rows, cols = np.nonzero(observed)
    vals = observed[rows, cols]
    const = float(np.sum(gammaln(vals + 1)))
    # sparse incidence matrices turn the allocation sums into products
    nnz = np.arange(len(vals))
    to_u = sparse.csr_matrix((vals, (rows, nnz)), shape=(m, len(vals)))
    to_t = sparse.csr_matrix((vals, (cols, nnz)), shape=(n, len(vals)))

    rng = np.random.default_rng(seed)
    shape_u = c1 + 0.01 * rng.uniform(size=(m, K))
    rate_u = c2 + 0.01 * rng.uniform(size=(m, K))
    shape_t = c3 + 0.01 * rng.uniform(size=(n, K))
    rate_t = c4 + 0.01 * rng.uniform(size=(n, K))

    def softmax_rows(elog_u, elog_t):
        logits = elog_u[rows] + elog_t[cols]
        top = logits.max(axis=1, keepdims=True)
        np.exp(logits - top, out=logits)
        total = logits.sum(axis=1, keepdims=True)
        logits /= total
        return logits, np.log(total[:, 0]) + top[:, 0]

    def elog(shape, rate):
        return digamma(shape) - np.log(rate)

    history = []
    converged = False
    elog_u, elog_t = elog(shape_u, rate_u), elog(shape_t, rate_t)
    phi, _ = softmax_rows(elog_u, elog_t)
    for it in range(max_iters):
        mean_t = shape_t / rate_t
        shape_u = c1 + to_u @ phi
        rate_u = c2 + (mean_t.sum(axis=0)[None, :] if mask is None else mask @ mean_t)
        elog_u = elog(shape_u, rate_u)

        phi, _ = softmax_rows(elog_u, elog_t)
        mean_u = shape_u / rate_u
        shape_t = c3 + to_t @ phi
        rate_t = c4 + (mean_u.sum(axis=0)[None, :] if mask is None else mask.T @ mean_u)
        elog_t = elog(shape_t, rate_t)

        # the refreshed allocations also give the data term of the bound
        phi, lse = softmax_rows(elog_u, elog_t)
        elbo = _elbo(vals, lse, shape_u / rate_u, shape_t / rate_t, mask, const)
        elbo += _gamma_kl_terms(shape_u, rate_u, c1, c2)
        elbo += _gamma_kl_terms(shape_t, rate_t, c3, c4)
        if not np.isfinite(elbo):
            raise ElboError(f"non-finite ELBO at iteration {it + 1}")
        history.append(elbo)
        if it and abs(elbo - history[-2]) < tol * abs(history[-2]):
            converged = True
            break
    logger.debug("PF: %d iterations, ELBO %.6g", len(history), history[-1])
    return PfModel(K, shape_u, rate_u, shape_t, rate_t, hyper, history,
                   tuple(user_ids), converged)


def rate_to_probability(r, mapping: str = "poisson") -> np.ndarray:
    """``1 - exp(-r)`` (chance of a non-zero count) or plain clamping to [0, 1]."""
    r = np.asarray(r, dtype=float)
    if mapping == "poisson":
        return -np.expm1(-r)
    if mapping == "clamp":
        return np.clip(r, 0.0, 1.0)
    raise ValueError(f"unknown rate mapping {mapping!r}")


def pf_exposure(model: PfModel, engager_ids: Sequence[str] | Sequence[int],
                mapping: str = "poisson") -> ExposureEstimate:
    """Exposure probabilities from the fitted expected rates."""
    ids = list(engager_ids)
    if ids and isinstance(ids[0], str):
        index = {uid: i for i, uid in enumerate(model.user_ids)}
        missing = [u for u in ids if u not in index]
        if missing:
            raise DataError(f"unknown user id(s) for the PF model: {missing[:5]}")
        rows = np.array([index[u] for u in ids], dtype=np.int64)
        out_ids = tuple(ids)
    else:
        rows = np.asarray(ids, dtype=np.int64)
        out_ids = tuple(model.user_ids[i] for i in rows) if model.user_ids else ()
    e_hat = rate_to_probability(model.expected_rates(rows), mapping)
    return ExposureEstimate(e_hat, "pf", False, out_ids)


# -- encoder-decoder --------------------------------------------------------

@dataclass
class EncDecResult:
    estimate: ExposureEstimate
    model: MlpModel
    history: TrainHistory


def encdec_estimate(train_inputs, train_targets, test_inputs, use_profile: bool,
                    cfg: TrainConfig = TrainConfig(), *, t: int | None = None,
                    validation=None, hidden=(64, 32)) -> EncDecResult:
    """Train the encoder-decoder on (user row, exposure target) pairs.

    Inputs are full user rows; without ``use_profile`` only the first ``t``
    (activity) columns are fed to the network.
    """
    xtr = np.asarray(train_inputs, dtype=float)
    ytr = np.asarray(train_targets, dtype=float)
    xte = np.asarray(test_inputs, dtype=float)
    t = ytr.shape[1] if t is None else t
    cols = slice(None) if use_profile else slice(0, t)
    xtr, xte = xtr[:, cols], xte[:, cols]
    if validation is not None:
        validation = (np.asarray(validation[0], dtype=float)[:, cols], validation[1])
    model = MlpModel.encoder_decoder(xtr.shape[1], ytr.shape[1], hidden, seed=cfg.seed)
    model, hist = train(model, xtr, ytr, cfg, validation=validation)
    e_hat = forward(model, xte) if len(xte) else np.zeros((0, ytr.shape[1]))
    return EncDecResult(ExposureEstimate(e_hat, "encdec", use_profile), model, hist)
