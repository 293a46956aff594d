"""Unlearnable-example generators.

The MI reduction loss pulls same-class features together in cosine
similarity (and pushes other classes away), with an extra penalty on raw
Euclidean spread. ``gen_miue`` runs it inside the min-min loop: one epoch of
cross-entropy training of a source model on the current poisoned data, then
one epoch of sign-PGD on the poisons with the model frozen. ``gen_em`` is the
same loop with cross-entropy in the poison phase. ``gen_ap`` and
``gen_random`` are the targeted-adversarial and random-noise baselines.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .data import Dataset
from .model import MlpSpec, ModelState, ce_loss, init_model, mlp_features, mlp_logits
from .optim import SGD, cosine_lr
from .rng import RngState

log = logging.getLogger(__name__)

NORM_GUARD = 1e-12


@dataclass
class PoisonBudget:
    epsilon: float
    norm: str = "inf"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.norm != "inf":
            raise ValueError("only the l-infinity budget is supported")


@dataclass
class PoisonSet:
    deltas: np.ndarray
    budget: PoisonBudget
    generator: str
    class_mask: list[int] | None = None
    config: dict = field(default_factory=dict)
    # the min-min generators keep their final source model for inspection
    source_model: ModelState | None = field(default=None, repr=False, compare=False)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.deltas), initial=0.0))

    def check(self, labels: np.ndarray | None = None, tol: float = 0.0) -> None:
        if self.max_abs() > self.budget.epsilon + tol:
            raise AssertionError(f"poison leaves the eps-ball: {self.max_abs()} > {self.budget.epsilon}")
        if self.class_mask is not None and labels is not None:
            outside = ~np.isin(labels, self.class_mask)
            if np.any(self.deltas[outside] != 0):
                raise AssertionError("rows outside the class mask are not zero")


@dataclass
class MiueConfig:
    tau: float = 0.1
    zeta: float = 0.1
    epochs: int = 30
    pgd_steps: int = 10
    pgd_step_size: float | None = None  # None means epsilon / 10
    lr: float = 0.5
    lr_min: float = 1e-6
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 128
    seed: int = 0

    def step_size(self, epsilon: float) -> float:
        return epsilon / 10.0 if self.pgd_step_size is None else self.pgd_step_size

    def validate(self, epsilon: float) -> None:
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.zeta < 0:
            raise ValueError("zeta must be non-negative")
        if self.pgd_steps * self.step_size(epsilon) < epsilon * (1 - 1e-12):
            raise ValueError("pgd_steps * pgd_step_size must reach the epsilon-ball boundary")
        if self.epochs < 0 or self.batch_size < 2:
            raise ValueError("epochs must be >= 0 and batch_size >= 2")


# ---------------------------------------------------------------------------
# losses and PGD

def miue_loss(Z, labels, tau: float = 0.1, zeta: float = 0.1) -> ad.Tensor:
    """Batch mean of the MI reduction loss on features ``Z``.

    term1 = log(1 + sum_{other class} e^{cos/tau} / sum_{same class, incl. self} e^{cos/tau})
    term2 = zeta * log(1 + sum_k ||z_j - z_k||)
    """
    Z = ad.as_tensor(Z)
    labels = np.asarray(labels)
    if Z.shape[0] < 2:
        raise ValueError("miue_loss needs a batch of at least 2")
    norms = ad.norm(Z, axis=1, keepdims=True)
    if np.any(norms.data == 0):
        log.debug("%d zero-norm feature rows guarded", int(np.sum(norms.data == 0)))
    Zn = Z / (norms + NORM_GUARD)
    sim = ad.matmul(Zn, ad.transpose(Zn)) * (1.0 / tau)
    # row-wise shift cancels in the ratio
    sim = sim - np.max(sim.data, axis=1, keepdims=True)
    e = ad.exp(sim)
    same = (labels[:, None] == labels[None, :]).astype(np.float64)
    other = ad.sum(e * (1.0 - same), axis=1)
    own = ad.sum(e * same, axis=1)
    term1 = ad.log(1.0 + other / own)
    dist = ad.norm(ad.expand_dims(Z, 1) - ad.expand_dims(Z, 0), axis=2)
    term2 = ad.log(1.0 + ad.sum(dist, axis=1)) * zeta
    return ad.mean(term1 + term2)


def pgd_minimize(loss_fn: Callable[[ad.Tensor], ad.Tensor], delta0, epsilon: float,
                 step: float, steps: int, mask=None) -> np.ndarray:
    """Sign-gradient descent on ``loss_fn(delta)`` projected onto [-eps, eps].

    ``mask`` (broadcastable to delta) freezes entries where it is 0.
    """
    delta = np.clip(np.array(delta0, dtype=np.float64), -epsilon, epsilon)
    for it in range(steps):
        leaf = ad.Tensor(delta)
        (g,) = ad.grad(loss_fn(leaf), [leaf])
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient at PGD iteration {it}")
        update = np.sign(g)
        if mask is not None:
            update = update * mask
        delta = np.clip(delta - step * update, -epsilon, epsilon)
    return delta


# ---------------------------------------------------------------------------
# generators

def _row_mask(labels: np.ndarray, class_mask) -> np.ndarray:
    if class_mask is None:
        return np.ones((labels.shape[0], 1))
    return np.isin(labels, list(class_mask)).astype(np.float64)[:, None]


def _batches(n: int, batch_size: int, rng: RngState):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_epoch(model: ModelState, opt: SGD, x: np.ndarray, labels: np.ndarray,
                batch_size: int, rng: RngState, perturb=None) -> float:
    """One shuffled pass of minibatch SGD on cross-entropy; returns mean batch loss.

    ``perturb(params, xb, yb)`` may replace the batch inputs (adversarial training).
    """
    losses = []
    params = model.params()
    for b, idx in enumerate(_batches(x.shape[0], batch_size, rng)):
        xb, yb = x[idx], labels[idx]
        if perturb is not None:
            xb = perturb(params, xb, yb)
        leaves = [ad.Tensor(p) for p in params]
        loss = ce_loss(mlp_logits(leaves, xb), yb)
        if not np.isfinite(loss.item()):
            raise FloatingPointError(f"non-finite training loss at epoch {model.epoch}, batch {b}")
        opt.step(ad.grad(loss, leaves))
        losses.append(loss.item())
    model.epoch += 1
    return float(np.mean(losses))


def _min_min(train: Dataset, spec: MlpSpec, cfg: MiueConfig, budget: PoisonBudget,
             class_mask, rng: RngState, poison_objective: str) -> PoisonSet:
    cfg.validate(budget.epsilon)
    x, y = train.inputs, train.labels
    eps = budget.epsilon
    alpha = cfg.step_size(eps)
    model = init_model(spec, rng.split("init"))
    opt = SGD(model.params(), cfg.lr, cfg.momentum, cfg.weight_decay)
    delta = np.zeros_like(x)
    rows = _row_mask(y, class_mask)
    train_rng = rng.split("train")
    poison_rng = rng.split("poison")

    def objective(params, yb):
        if poison_objective == "mi":
            return lambda xb_adv: miue_loss(mlp_features(params, xb_adv), yb, cfg.tau, cfg.zeta)
        return lambda xb_adv: ce_loss(mlp_logits(params, xb_adv), yb)

    for epoch in range(cfg.epochs):
        opt.lr = cosine_lr(epoch, cfg.epochs, cfg.lr, cfg.lr_min)
        try:
            train_epoch(model, opt, x + delta, y, cfg.batch_size, train_rng)
        except FloatingPointError as exc:
            raise FloatingPointError(f"epoch {epoch}, phase source-model: {exc}") from exc
        params = model.params()
        for b, idx in enumerate(_batches(x.shape[0], cfg.batch_size, poison_rng)):
            xb, yb = x[idx], y[idx]
            loss = objective(params, yb)
            try:
                delta[idx] = pgd_minimize(lambda d: loss(xb + d), delta[idx], eps, alpha,
                                          cfg.pgd_steps, mask=rows[idx])
            except FloatingPointError as exc:
                raise FloatingPointError(f"epoch {epoch}, phase poison, batch {b}: {exc}") from exc
    delta *= rows
    return PoisonSet(delta, budget, "miue" if poison_objective == "mi" else "em",
                     sorted(int(c) for c in class_mask) if class_mask is not None else None,
                     {"miue": asdict(cfg), "model": asdict(spec), "epsilon": eps}, model)


def gen_miue(train: Dataset, spec: MlpSpec, cfg: MiueConfig, budget: PoisonBudget,
             class_mask=None, rng: RngState | None = None) -> PoisonSet:
    """Mutual-information unlearnable examples via the min-min loop."""
    return _min_min(train, spec, cfg, budget, class_mask, rng or RngState(cfg.seed), "mi")


def gen_em(train: Dataset, spec: MlpSpec, cfg: MiueConfig, budget: PoisonBudget,
           class_mask=None, rng: RngState | None = None) -> PoisonSet:
    """Error-minimizing noise: the same loop with cross-entropy as poison loss."""
    return _min_min(train, spec, cfg, budget, class_mask, rng or RngState(cfg.seed), "ce")


def gen_ap(train: Dataset, clean_model: ModelState, budget: PoisonBudget, steps: int = 20,
           rng: RngState | None = None, step_size: float | None = None, class_mask=None,
           batch_size: int = 512) -> PoisonSet:
    """Targeted adversarial poisons: push each sample towards class (y + 1) mod C."""
    eps = budget.epsilon
    alpha = step_size if step_size is not None else 2.5 * eps / steps
    x, y = train.inputs, train.labels
    target = (y + 1) % train.num_classes
    params = clean_model.params()
    rows = _row_mask(y, class_mask)
    delta = np.zeros_like(x)
    for start in range(0, x.shape[0], batch_size):
        sl = slice(start, start + batch_size)
        xb, tb = x[sl], target[sl]
        delta[sl] = pgd_minimize(lambda d: ce_loss(mlp_logits(params, xb + d), tb),
                                 delta[sl], eps, alpha, steps, mask=rows[sl])
    delta *= rows
    return PoisonSet(delta, budget, "ap",
                     sorted(int(c) for c in class_mask) if class_mask is not None else None,
                     {"steps": steps, "step_size": alpha, "epsilon": eps})


def gen_random(train: Dataset, budget: PoisonBudget, rng: RngState, class_mask=None) -> PoisonSet:
    """Uniform noise on [-eps, eps] per coordinate."""
    eps = budget.epsilon
    delta = rng.uniform(-eps, eps, train.inputs.shape)
    delta = np.clip(delta, -eps, eps) * _row_mask(train.labels, class_mask)
    return PoisonSet(delta, budget, "random",
                     sorted(int(c) for c in class_mask) if class_mask is not None else None,
                     {"epsilon": eps})
