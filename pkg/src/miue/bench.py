"""Victim training and the measurements that relate accuracy loss to MI loss.

The paired-seed discipline matters here: a clean victim and a poisoned
victim share every random stream (init, shuffling, adversary), so any
difference between them comes from the training inputs alone.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .data import Dataset
from .estimators import GaussianJointSpec, MIConfig, classwise_mi, gaussian_mi_oracle
from .model import MlpSpec, ModelState, accuracy, ce_loss, forward_features, init_model, mlp_logits, predict
from .numerics import LOG_2PI_E, gaussian_entropy, logdet_spd
from .optim import SGD, cosine_lr
from .poison import PoisonBudget, PoisonSet, gen_random, pgd_minimize, train_epoch
from .rng import RngState

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-8


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    lr: float = 0.5
    lr_min: float = 1e-6
    momentum: float = 0.9
    weight_decay: float = 1e-4
    mode: str = "standard"
    at_budget: float = 0.0
    at_steps: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("standard", "adversarial"):
            raise ValueError(f"unknown training mode {self.mode!r}")
        if self.mode == "adversarial" and not self.at_budget > 0:
            raise ValueError("adversarial training needs at_budget > 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


def _adversary(cfg: TrainConfig, rng: RngState):
    radius = cfg.at_budget
    step = radius / 4.0

    def perturb(params, xb, yb):
        start = rng.uniform(-radius, radius, xb.shape)
        delta = pgd_minimize(lambda d: -ce_loss(mlp_logits(params, xb + d), yb),
                             start, radius, step, cfg.at_steps)
        return xb + delta

    return perturb


def train_victim(train: Dataset, poison: PoisonSet | None, spec: MlpSpec, cfg: TrainConfig,
                 rng: RngState, test: Dataset | None = None) -> tuple[ModelState, dict]:
    """Train an MLP on x + delta; returns the model and per-epoch accuracy curves.

    Train accuracy is measured on the (possibly poisoned) training inputs and
    test accuracy on the clean ``test`` set.
    """
    x = train.inputs if poison is None else train.inputs + poison.deltas
    y = train.labels
    model = init_model(spec, rng.split("init"))
    opt = SGD(model.params(), cfg.lr, cfg.momentum, cfg.weight_decay)
    shuffle = rng.split("train")
    perturb = _adversary(cfg, rng.split("adversary")) if cfg.mode == "adversarial" else None
    curves = {"train_acc": [], "test_acc": [], "train_loss": []}
    for epoch in range(cfg.epochs):
        opt.lr = cosine_lr(epoch, cfg.epochs, cfg.lr, cfg.lr_min)
        try:
            loss = train_epoch(model, opt, x, y, cfg.batch_size, shuffle, perturb)
        except FloatingPointError as exc:
            raise FloatingPointError(f"victim training diverged: {exc}") from exc
        curves["train_loss"].append(loss)
        curves["train_acc"].append(accuracy(model, x, y))
        if test is not None:
            curves["test_acc"].append(accuracy(model, test.inputs, test.labels))
    return model, curves


# ---------------------------------------------------------------------------
# measurements

def covariance_metric(Z, labels) -> float:
    """Class-weighted mean of the average log per-dimension variance of features."""
    Z = np.asarray(Z, dtype=np.float64)
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    total = 0.0
    for c, cnt in zip(classes, counts):
        if cnt < 2:
            raise ValueError(f"class {c} has a single sample; variance undefined")
        var = Z[labels == c].var(axis=0)
        total += cnt / labels.shape[0] * float(np.mean(np.log(var + VAR_FLOOR)))
    return total


def spearman(xs, ys) -> float:
    """Spearman rank correlation with average ranks for ties."""
    xs, ys = np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1 or xs.shape[0] < 2:
        raise ValueError("spearman needs two equal-length sequences of length >= 2")
    rx, ry = rankdata(xs), rankdata(ys)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt(np.sum(rx * rx) * np.sum(ry * ry))
    if denom == 0:
        raise ValueError("spearman correlation is undefined for constant input")
    return float(np.clip(np.sum(rx * ry) / denom, -1.0, 1.0))


@dataclass
class ExperimentReport:
    generator: str
    clean_test_acc: float
    poisoned_test_acc: float
    acc_gap: float
    mi_clean_baseline: float
    mi_poisoned: float
    mi_gap: float
    covariance_metric: float
    clean_train_acc: float | None = None
    poisoned_train_acc: float | None = None
    feature_source: str = "poisoned-victim"
    curves: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    seed: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_json_default)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _features(model: ModelState, x: np.ndarray) -> np.ndarray:
    return forward_features(model, x).data


def measure_gaps(victim: ModelState, clean_train: Dataset, poison: PoisonSet, mi_cfg: MIConfig,
                 rng: RngState, clean_test_acc: float = float("nan"),
                 poisoned_test_acc: float = float("nan")) -> ExperimentReport:
    """MI(Z, Z') on ``victim``'s extractor against a same-epsilon random-noise control.

    ``mi_gap`` = MI(Z, g(x + random)) - MI(Z, g(x + delta)); the accuracy
    figures come from the caller's paired clean/poisoned victims.
    """
    x, y = clean_train.inputs, clean_train.labels
    control = gen_random(clean_train, PoisonBudget(poison.budget.epsilon), rng.split("control"),
                         poison.class_mask)
    Z = _features(victim, x)
    Zp = _features(victim, x + poison.deltas)
    Zr = _features(victim, x + control.deltas)
    mi_rng = rng.split("mi")
    mi_poisoned = classwise_mi(Z, Zp, y, mi_cfg, mi_rng).value_nats
    mi_baseline = classwise_mi(Z, Zr, y, mi_cfg, mi_rng).value_nats
    return ExperimentReport(
        generator=poison.generator,
        clean_test_acc=clean_test_acc,
        poisoned_test_acc=poisoned_test_acc,
        acc_gap=clean_test_acc - poisoned_test_acc,
        mi_clean_baseline=mi_baseline,
        mi_poisoned=mi_poisoned,
        mi_gap=mi_baseline - mi_poisoned,
        covariance_metric=covariance_metric(Zp, y),
    )


def run_experiment(train: Dataset, test: Dataset, spec: MlpSpec, poison: PoisonSet,
                   train_cfg: TrainConfig, mi_cfg: MIConfig, rng: RngState,
                   feature_source: str = "poisoned-victim",
                   clean_run: tuple[ModelState, dict] | None = None) -> ExperimentReport:
    """Paired clean/poisoned victims plus MI and covariance measurements.

    ``clean_run`` lets several generators share one clean victim; it must
    come from ``train_victim`` with the same ``rng``, spec and config.
    Accuracies are reported in percentage points.
    """
    if feature_source not in ("poisoned-victim", "clean-victim"):
        raise ValueError(f"unknown feature source {feature_source!r}")
    victim_rng = rng.split("victim")
    if clean_run is None:
        clean_run = train_victim(train, None, spec, train_cfg, victim_rng, test)
    clean_model, clean_curves = clean_run
    model, curves = train_victim(train, poison, spec, train_cfg, victim_rng, test)
    clean_acc = 100.0 * accuracy(clean_model, test.inputs, test.labels)
    poisoned_acc = 100.0 * accuracy(model, test.inputs, test.labels)
    extractor = model if feature_source == "poisoned-victim" else clean_model
    report = measure_gaps(extractor, train, poison, mi_cfg, rng.split("measure"), clean_acc, poisoned_acc)
    report.feature_source = feature_source
    report.clean_train_acc = 100.0 * accuracy(clean_model, train.inputs, train.labels)
    report.poisoned_train_acc = 100.0 * accuracy(model, train.inputs + poison.deltas, train.labels)
    report.curves = {"clean": clean_curves, "poisoned": curves}
    report.config = {"poison": poison.config, "train": asdict(train_cfg), "mi": asdict(mi_cfg),
                     "model": asdict(spec), "epsilon": poison.budget.epsilon,
                     "class_mask": poison.class_mask}
    report.seed = rng.seed
    return report


def per_class_accuracy(model: ModelState, data: Dataset) -> np.ndarray:
    pred = predict(model, data.inputs)
    return np.array([np.mean(pred[data.labels == c] == c) for c in range(data.num_classes)])


# ---------------------------------------------------------------------------
# covariance bound verifier

@dataclass
class BoundTrial:
    d: int
    lhs: float
    rhs: float
    margin: float
    logdet_sigma1: float
    logdet_sigma2: float
    precondition: bool
    violation: bool
    sigma1: list | None = None
    sigma2: list | None = None


@dataclass
class BoundCheckReport:
    trials: list[BoundTrial]
    # density-extrema term of the bound; not estimable from samples, exactly 0 for Gaussians
    kl_slack_term: float = 0.0

    @property
    def violations(self) -> list[BoundTrial]:
        return [t for t in self.trials if t.violation]

    @property
    def flagged(self) -> list[BoundTrial]:
        return [t for t in self.trials if not t.precondition]

    def min_margin_by_dim(self) -> dict[int, float]:
        out: dict[int, float] = {}
        for t in self.trials:
            out[t.d] = min(out.get(t.d, np.inf), t.margin)
        return out

    def to_dict(self) -> dict:
        return {
            "n_trials": len(self.trials),
            "n_violations": len(self.violations),
            "n_precondition_failures": len(self.flagged),
            "min_margin_by_dim": {str(k): v for k, v in self.min_margin_by_dim().items()},
            "kl_slack_term": self.kl_slack_term,
            "trials": [asdict(t) for t in self.trials],
        }


def bound_terms(Sigma1, Sigma2) -> BoundTrial:
    """Exact MI of Z' = Z + noise against the covariance upper bound.

    rhs = d/2 log(2 pi e) + 1/2 log det(Sigma1 + Sigma2) + H(Z'|Z), with
    H(Z'|Z) the entropy of the additive noise.
    """
    Sigma1 = np.atleast_2d(np.asarray(Sigma1, dtype=np.float64))
    Sigma2 = np.atleast_2d(np.asarray(Sigma2, dtype=np.float64))
    d = Sigma1.shape[0]
    lhs = gaussian_mi_oracle(GaussianJointSpec(Sigma1, Sigma2))
    rhs = 0.5 * d * LOG_2PI_E + 0.5 * logdet_spd(Sigma1 + Sigma2) + gaussian_entropy(Sigma2)
    ld2 = logdet_spd(Sigma2)
    precondition = ld2 >= -d * LOG_2PI_E
    margin = rhs - lhs
    violation = bool(precondition and margin < 0)
    trial = BoundTrial(d, lhs, rhs, margin, logdet_spd(Sigma1), ld2, bool(precondition), violation)
    if violation:
        trial.sigma1, trial.sigma2 = Sigma1.tolist(), Sigma2.tolist()
    return trial


def random_spd(rng: RngState, d: int, low: float = 0.1, high: float = 4.0) -> np.ndarray:
    """Random rotation of a diagonal matrix with eigenvalues uniform on [low, high]."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q *= np.sign(np.diag(r))
    eig = rng.uniform(low, high, d)
    M = (q * eig) @ q.T
    return 0.5 * (M + M.T)


def verify_theorem1(d: int, trials: int, rng: RngState) -> BoundCheckReport:
    """Check the covariance MI bound on random exact-Gaussian pairs."""
    if not 1 <= d <= 16:
        raise ValueError("dimension must lie in [1, 16]")
    if trials < 1:
        raise ValueError("need at least one trial")
    out = []
    for t in range(trials):
        sub = rng.split(t)
        out.append(bound_terms(random_spd(sub.split("sigma1"), d), random_spd(sub.split("sigma2"), d)))
    return BoundCheckReport(out)
