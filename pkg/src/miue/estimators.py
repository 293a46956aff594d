"""Mutual information estimators (all values in nats).

Histogram, Gaussian KDE, Kraskov k-NN (KSG #1) and MINE estimators, the
sliced-MI wrapper that reduces high-dimensional pairs to 1-D projections,
the class-conditional average, and closed-form Gaussian references.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import autodiff as ad
from .numerics import digamma, gaussian_entropy, logdet_spd
from .optim import Adam
from .rng import RngState, sample_unit_sphere

log = logging.getLogger(__name__)

ESTIMATORS = ("histogram", "kde", "knn", "mine", "analytic-oracle")
SLICE_BASES = ("histogram", "kde", "knn")
PAPER_SLICES = 2000
KNN_JITTER = 1e-10
MINE_HIDDEN = 64
MINE_SMOOTHING = 50


class DegenerateInputError(ValueError):
    """Raised when every slice of a sliced estimate is degenerate."""


@dataclass
class MIConfig:
    estimator: str = "knn"
    bins: int = 100
    k_neighbors: int = 3
    bandwidth_rule: str = "gaussian-reference"
    mine_batch: int = 1000
    mine_iters: int = 500
    mine_lr: float = 1e-3
    slices: int = 200
    sliced: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}; choose from {ESTIMATORS}")
        if self.bins < 2:
            raise ValueError("bins must be >= 2")
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if self.slices < 1:
            raise ValueError("slices must be >= 1")
        if self.mine_batch < 2:
            raise ValueError("mine_batch must be >= 2")
        if self.bandwidth_rule != "gaussian-reference":
            raise ValueError(f"unsupported bandwidth rule {self.bandwidth_rule!r}")

    @classmethod
    def paper_preset(cls, **overrides) -> "MIConfig":
        """Full-scale defaults (2000 slices)."""
        return cls(**{"slices": PAPER_SLICES, **overrides})


@dataclass
class MIEstimate:
    value_nats: float
    estimator: str
    n_samples: int
    config: dict = field(default_factory=dict)
    degenerate: bool = False
    raw_value: float | None = None

    def __float__(self) -> float:
        return float(self.value_nats)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GaussianJointSpec:
    """Z ~ N(mu1, Sigma1) and Z' = Z + N(mu2, Sigma2)."""

    Sigma1: np.ndarray
    Sigma2: np.ndarray
    mu1: np.ndarray | None = None
    mu2: np.ndarray | None = None

    def __post_init__(self):
        self.Sigma1 = np.atleast_2d(np.asarray(self.Sigma1, dtype=np.float64))
        self.Sigma2 = np.atleast_2d(np.asarray(self.Sigma2, dtype=np.float64))
        if self.Sigma1.shape != self.Sigma2.shape or self.Sigma1.shape[0] != self.Sigma1.shape[1]:
            raise ValueError("Sigma1 and Sigma2 must be square with the same dimension")

    @property
    def dim(self) -> int:
        return self.Sigma1.shape[0]


def _clamped(raw: float, estimator: str, n: int, config=None, degenerate=False) -> MIEstimate:
    if raw < -0.05:
        log.debug("%s pre-clamp estimate %.4f is unusually negative", estimator, raw)
    return MIEstimate(value_nats=max(raw, 0.0), estimator=estimator, n_samples=n,
                      config=config or {}, degenerate=degenerate, raw_value=raw)


def _as_1d(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 2 and v.shape[1] == 1:
        v = v[:, 0]
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D sample, got shape {v.shape}")
    return v


def _as_2d(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v[:, None] if v.ndim == 1 else v


# ---------------------------------------------------------------------------
# 1-D estimators

def histogram_mi_1d(xs, ys, bins: int = 100) -> MIEstimate:
    """Plug-in MI from a ``bins`` x ``bins`` histogram on min-max rescaled data."""
    xs, ys = _as_1d(xs), _as_1d(ys)
    n = xs.shape[0]
    if n != ys.shape[0] or n < 2:
        raise ValueError("xs and ys must be paired with at least 2 samples")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    cfg = {"bins": bins}
    if np.ptp(xs) == 0 or np.ptp(ys) == 0:
        return _clamped(0.0, "histogram", n, cfg, degenerate=True)

    def bin_index(v):
        u = (v - v.min()) / (v.max() - v.min())
        return np.minimum((u * bins).astype(np.int64), bins - 1)

    ix, iy = bin_index(xs), bin_index(ys)
    cx = np.bincount(ix, minlength=bins).astype(np.float64)
    cy = np.bincount(iy, minlength=bins).astype(np.float64)
    joint = np.bincount(ix * bins + iy, minlength=bins * bins).reshape(bins, bins)
    r, c = np.nonzero(joint)
    counts = joint[r, c].astype(np.float64)
    terms = counts / n * np.log(counts * n / (cx[r] * cy[c]))
    # fsum is order independent, which keeps I(X,Y) == I(Y,X) bit for bit
    return _clamped(math.fsum(terms), "histogram", n, cfg)


def silverman_bandwidth(v: np.ndarray) -> float:
    """Gaussian reference rule 1.06 * sigma * n^(-1/5)."""
    return 1.06 * float(np.std(v, ddof=1)) * v.shape[0] ** (-0.2)


def kde_mi_1d(xs, ys, chunk: int = 1024) -> MIEstimate:
    """Resubstitution MI from Gaussian-kernel densities (product kernel for the joint)."""
    xs, ys = _as_1d(xs), _as_1d(ys)
    n = xs.shape[0]
    if n != ys.shape[0]:
        raise ValueError("xs and ys must be paired")
    if n < 5:
        raise ValueError("kde_mi_1d needs at least 5 samples")
    if np.std(xs) == 0 or np.std(ys) == 0:
        return _clamped(0.0, "kde", n, degenerate=True)
    hx, hy = silverman_bandwidth(xs), silverman_bandwidth(ys)
    cfg = {"bandwidth_x": hx, "bandwidth_y": hy}
    sx, sy = xs / hx, ys / hy
    log_px = np.empty(n)
    log_py = np.empty(n)
    log_pxy = np.empty(n)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        ax = (sx[start:stop, None] - sx[None, :]) ** 2
        ay = (sy[start:stop, None] - sy[None, :]) ** 2
        kx = np.exp(-0.5 * ax)
        ky = np.exp(-0.5 * ay)
        log_px[start:stop] = np.log(kx.sum(axis=1))
        log_py[start:stop] = np.log(ky.sum(axis=1))
        log_pxy[start:stop] = np.log((kx * ky).sum(axis=1))
    # normalizing constants: p_x = S_x / (n hx sqrt(2 pi)), p_xy = S_xy / (n hx hy 2 pi)
    # they cancel except for a log(n) term
    raw = float(np.mean(log_pxy - log_px - log_py)) + math.log(n)
    return _clamped(raw, "kde", n, cfg)


# ---------------------------------------------------------------------------
# k-NN (KSG estimator #1)

def knn_mi(X, Y, k: int = 3) -> MIEstimate:
    """Kraskov-Stoegbauer-Grassberger estimator #1 with max-norm neighborhoods."""
    X, Y = _as_2d(X), _as_2d(Y)
    n = X.shape[0]
    if Y.shape[0] != n:
        raise ValueError("X and Y must have the same number of rows")
    if n <= k:
        raise ValueError(f"knn_mi needs more samples than neighbors (n={n}, k={k})")
    degenerate = bool(np.all(np.ptp(X, axis=0) == 0) or np.all(np.ptp(Y, axis=0) == 0))
    jitter = KNN_JITTER * np.arange(n, dtype=np.float64)[:, None]
    X = X + jitter
    Y = Y + jitter
    joint = np.hstack([X, Y])
    dist, _ = cKDTree(joint).query(joint, k=k + 1, p=np.inf)
    eps = dist[:, -1]
    # strictly-less-than counting; the point itself is inside its own ball
    radius = np.nextafter(eps, 0)
    nx = cKDTree(X).query_ball_point(X, r=radius, p=np.inf, return_length=True) - 1
    ny = cKDTree(Y).query_ball_point(Y, r=radius, p=np.inf, return_length=True) - 1
    raw = digamma(k) + digamma(n) - float(np.mean(digamma(nx + 1.0) + digamma(ny + 1.0)))
    return _clamped(raw, "knn", n, {"k_neighbors": k}, degenerate=degenerate)


# ---------------------------------------------------------------------------
# MINE

def _standardize(v: np.ndarray) -> np.ndarray:
    sd = v.std(axis=0)
    return (v - v.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


def _init_linear(rng: RngState, fan_in: int, fan_out: int):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, (fan_in, fan_out)), rng.uniform(-bound, bound, fan_out)


def mine_mi(X, Y, cfg: MIConfig | None = None, rng: RngState | None = None) -> MIEstimate:
    """Donsker-Varadhan lower bound maximized by a small ReLU statistics network.

    T(x, y) has two hidden layers of width 64. Marginal pairs come from a
    within-batch permutation of Y. The reported value is the mean objective
    over the final 50 iterations and is not clamped.
    """
    cfg = cfg or MIConfig(estimator="mine")
    rng = rng or RngState(cfg.seed)
    X, Y = _standardize(_as_2d(X)), _standardize(_as_2d(Y))
    n, dx = X.shape
    dy = Y.shape[1]
    if Y.shape[0] != n:
        raise ValueError("X and Y must have the same number of rows")
    batch = min(cfg.mine_batch, n)
    init = rng.split("init")
    draw = rng.split("batches")
    w1, b1 = _init_linear(init, dx + dy, MINE_HIDDEN)
    w2, b2 = _init_linear(init, MINE_HIDDEN, MINE_HIDDEN)
    w3, b3 = _init_linear(init, MINE_HIDDEN, 1)
    params = [w1[:dx], w1[dx:], b1, w2, b2, w3, b3]
    opt = Adam(params, lr=cfg.mine_lr)

    def statistic(p, x, y):
        wx, wy, c1, v2, c2, v3, c3 = p
        h = ad.relu(ad.matmul(x, wx) + ad.matmul(y, wy) + c1)
        h = ad.relu(ad.matmul(h, v2) + c2)
        return ad.matmul(h, v3) + c3

    history = []
    for it in range(cfg.mine_iters):
        idx = draw.permutation(n)[:batch]
        perm = draw.permutation(batch)
        xb, yb = X[idx], Y[idx]
        leaves = [ad.Tensor(p) for p in params]
        t_joint = statistic(leaves, xb, yb)
        t_marg = statistic(leaves, xb, yb[perm])
        dv = ad.mean(t_joint) - (ad.logsumexp(ad.reshape(t_marg, (batch,)), axis=0) - math.log(batch))
        value = dv.item()
        if not np.isfinite(value):
            raise FloatingPointError(f"MINE objective diverged at iteration {it}")
        history.append(value)
        grads = ad.grad(dv, leaves)
        opt.step([-g for g in grads])
    tail = history[-MINE_SMOOTHING:]
    value = float(np.mean(tail))
    return MIEstimate(value_nats=value, estimator="mine", n_samples=n,
                      config={"mine_batch": batch, "mine_iters": cfg.mine_iters, "mine_lr": cfg.mine_lr},
                      raw_value=value)


# ---------------------------------------------------------------------------
# sliced and class-conditional MI

def _base_1d(base: str, x: np.ndarray, y: np.ndarray, cfg: MIConfig) -> MIEstimate:
    if base == "histogram":
        return histogram_mi_1d(x, y, cfg.bins)
    if base == "kde":
        return kde_mi_1d(x, y)
    if base == "knn":
        return knn_mi(x, y, cfg.k_neighbors)
    raise ValueError(f"sliced MI base must be one of {SLICE_BASES}, got {base!r}")


def sliced_mi(X, Y, m: int = 200, base: str = "knn", rng: RngState | None = None,
              cfg: MIConfig | None = None) -> MIEstimate:
    """Average 1-D MI over ``m`` random direction pairs (theta^T X, phi^T Y).

    Degenerate slices are left out of the average.
    """
    if m < 1:
        raise ValueError("need at least one slice")
    cfg = cfg or MIConfig(estimator=base)
    rng = rng or RngState(cfg.seed)
    X, Y = _as_2d(X), _as_2d(Y)
    thetas = sample_unit_sphere(rng.split("theta"), X.shape[1], size=m)
    phis = sample_unit_sphere(rng.split("phi"), Y.shape[1], size=m)
    px = X @ thetas.T
    py = Y @ phis.T
    values = []
    for s in range(m):
        est = _base_1d(base, px[:, s], py[:, s], cfg)
        if not est.degenerate:
            values.append(est.value_nats)
    if not values:
        raise DegenerateInputError("every slice was degenerate")
    return MIEstimate(value_nats=float(np.mean(values)), estimator=f"sliced-{base}",
                      n_samples=X.shape[0],
                      config={"slices": m, "used_slices": len(values), "base": base})


def estimate_mi(X, Y, cfg: MIConfig, rng: RngState | None = None) -> MIEstimate:
    """Dispatch on ``cfg.estimator``; multivariate inputs go through slicing
    for the histogram/kde estimators (and for knn when ``cfg.sliced``)."""
    rng = rng or RngState(cfg.seed)
    X, Y = _as_2d(X), _as_2d(Y)
    univariate = X.shape[1] == 1 and Y.shape[1] == 1
    if cfg.estimator == "mine":
        return mine_mi(X, Y, cfg, rng)
    if cfg.estimator == "analytic-oracle":
        return gaussian_plugin_mi(X, Y)
    if univariate:
        return _base_1d(cfg.estimator, X[:, 0], Y[:, 0], cfg)
    if cfg.estimator == "knn" and not cfg.sliced:
        return knn_mi(X, Y, cfg.k_neighbors)
    return sliced_mi(X, Y, cfg.slices, cfg.estimator, rng.split("slices"), cfg)


def classwise_mi(Z, Zp, labels, cfg: MIConfig, rng: RngState | None = None) -> MIEstimate:
    """Label-frequency-weighted average of per-class MI(Z|y, Z'|y).

    Rows of ``Z`` and ``Zp`` are paired (a clean sample and its poisoned copy).
    Each class draws its own slice directions. A class whose every slice is
    degenerate (constant features) contributes 0.
    """
    rng = rng or RngState(cfg.seed)
    Z, Zp = _as_2d(Z), _as_2d(Zp)
    labels = np.asarray(labels)
    if Z.shape[0] != Zp.shape[0] or Z.shape[0] != labels.shape[0]:
        raise ValueError("Z, Zp and labels must be row aligned")
    classes, counts = np.unique(labels, return_counts=True)
    need = 2 * cfg.k_neighbors
    per_class = {}
    total = 0.0
    degenerate = []
    for c, cnt in zip(classes, counts):
        if cnt < need:
            raise ValueError(f"class {c} has {cnt} samples, need at least {need}")
        rows = labels == c
        try:
            value = estimate_mi(Z[rows], Zp[rows], cfg, rng.split(f"class-{int(c)}")).value_nats
        except DegenerateInputError:
            value = 0.0
            degenerate.append(int(c))
        per_class[int(c)] = value
        total += cnt / labels.shape[0] * value
    return MIEstimate(value_nats=float(total), estimator=f"classwise-{cfg.estimator}",
                      n_samples=int(labels.shape[0]),
                      config={**asdict(cfg), "per_class": per_class, "degenerate_classes": degenerate},
                      degenerate=bool(degenerate))


# ---------------------------------------------------------------------------
# Gaussian references

def gaussian_mi_oracle(spec: GaussianJointSpec) -> float:
    """I(Z, Z + N) = 0.5 [log det(Sigma1 + Sigma2) - log det Sigma2]."""
    return 0.5 * (logdet_spd(spec.Sigma1 + spec.Sigma2) - logdet_spd(spec.Sigma2))


def bivariate_gaussian_mi(rho: float) -> float:
    """-0.5 log(1 - rho^2) for a correlated standard bivariate normal."""
    return -0.5 * math.log1p(-rho * rho)


def gaussian_plugin_mi(X, Y, ridge: float = 1e-9) -> MIEstimate:
    """MI of the Gaussian fitted to the joint sample."""
    X, Y = _as_2d(X), _as_2d(Y)
    dx = X.shape[1]
    C = np.cov(np.hstack([X, Y]), rowvar=False)
    C = 0.5 * (C + C.T) + ridge * np.eye(C.shape[0])
    raw = 0.5 * (logdet_spd(C[:dx, :dx]) + logdet_spd(C[dx:, dx:]) - logdet_spd(C))
    return _clamped(raw, "analytic-oracle", X.shape[0])


__all__ = [
    "MIConfig", "MIEstimate", "GaussianJointSpec", "DegenerateInputError",
    "histogram_mi_1d", "kde_mi_1d", "knn_mi", "mine_mi", "sliced_mi", "classwise_mi",
    "estimate_mi", "gaussian_mi_oracle", "gaussian_entropy", "bivariate_gaussian_mi",
    "gaussian_plugin_mi", "silverman_bandwidth",
]
