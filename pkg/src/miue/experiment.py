"""Config-driven orchestration shared by the command line and the benchmarks.

An experiment config is a JSON object with the sections ``dataset``,
``model``, ``generator``, ``victim`` and ``mi`` plus ``seed``,
``feature_source`` and ``output_dir``. Unknown keys are rejected so a typo
cannot silently fall back to a default.
"""

from __future__ import annotations

import copy
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .bench import ExperimentReport, TrainConfig, run_experiment, train_victim
from .data import BlobSpec, Dataset, load_dataset, make_blobs, save_poison
from .estimators import MIConfig
from .model import MlpSpec, ModelState
from .poison import MiueConfig, PoisonBudget, PoisonSet, gen_ap, gen_em, gen_miue, gen_random
from .rng import RngState

GENERATORS = ("miue", "em", "ap", "random")
SEED_ENV = "MIUE_SEED"


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


def _names(cls) -> list[str]:
    return [f.name for f in fields(cls)]


DEFAULTS: dict = {
    "seed": 0,
    "output_dir": "miue-out",
    "feature_source": "poisoned-victim",
    "dataset": {"kind": "blobs", "num_classes": 3, "dim": 20, "per_class": 200, "separation": 4.0,
                "train_csv": None, "test_csv": None},
    "model": {"input_dim": None, "num_classes": None, "hidden_dims": [64, 64]},
    "generator": {"name": "miue", "budget": 0.5, "class_mask": None, "ap_steps": 20,
                  "ap_step_size": None,
                  **{k: v for k, v in asdict(MiueConfig()).items() if k != "seed"}},
    "victim": {k: v for k, v in asdict(TrainConfig()).items() if k != "seed"},
    "mi": {k: v for k, v in asdict(MIConfig()).items() if k != "seed"},
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def _merge(defaults: dict, given: dict, where: str) -> dict:
    if not isinstance(given, dict):
        raise ConfigError(f"{where or 'config'} must be a JSON object")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], value, f"{where}.{key}" if where else key)
        else:
            out[key] = value
    return out


@dataclass
class ExperimentConfig:
    raw: dict = field(default_factory=default_config)

    @classmethod
    def from_dict(cls, given: dict | None = None, seed_override: int | None = None) -> "ExperimentConfig":
        """Strictly merge ``given`` over the defaults.

        Seed precedence: ``seed_override`` (command-line flag), then the
        MIUE_SEED environment variable, then the config's own ``seed``.
        """
        raw = _merge(DEFAULTS, given or {}, "")
        if seed_override is None and os.environ.get(SEED_ENV, "").strip():
            try:
                seed_override = int(os.environ[SEED_ENV])
            except ValueError:
                raise ConfigError(f"{SEED_ENV} must be an integer, got {os.environ[SEED_ENV]!r}") from None
        if seed_override is not None:
            raw["seed"] = int(seed_override)
        cfg = cls(raw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, seed_override: int | None = None) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                given = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(given, seed_override)

    # typed views -------------------------------------------------------------
    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def miue_config(self) -> MiueConfig:
        g = self.raw["generator"]
        return MiueConfig(**{k: g[k] for k in _names(MiueConfig) if k != "seed"}, seed=self.seed)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.raw["victim"], seed=self.seed)

    def mi_config(self) -> MIConfig:
        return MIConfig(**self.raw["mi"], seed=self.seed)

    def budget(self) -> PoisonBudget:
        return PoisonBudget(float(self.raw["generator"]["budget"]))

    def validate(self) -> None:
        if not isinstance(self.raw["seed"], int) or isinstance(self.raw["seed"], bool) or self.raw["seed"] < 0:
            raise ConfigError("seed must be a non-negative integer")
        g = self.raw["generator"]
        if g["name"] not in GENERATORS:
            raise ConfigError(f"generator.name must be one of {GENERATORS}, got {g['name']!r}")
        if self.raw["dataset"]["kind"] not in ("blobs", "csv"):
            raise ConfigError("dataset.kind must be 'blobs' or 'csv'")
        if self.raw["dataset"]["kind"] == "csv" and not (self.raw["dataset"]["train_csv"]
                                                         and self.raw["dataset"]["test_csv"]):
            raise ConfigError("dataset.kind 'csv' needs train_csv and test_csv")
        if self.raw["feature_source"] not in ("poisoned-victim", "clean-victim"):
            raise ConfigError("feature_source must be 'poisoned-victim' or 'clean-victim'")
        try:
            budget = self.budget()
            if g["name"] in ("miue", "em"):
                self.miue_config().validate(budget.epsilon)
            self.train_config()
            self.mi_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# pipeline pieces

def build_data(cfg: ExperimentConfig, root: RngState) -> tuple[Dataset, Dataset]:
    d = cfg.raw["dataset"]
    if d["kind"] == "csv":
        train = load_dataset(d["train_csv"])
        test = load_dataset(d["test_csv"], num_classes=train.num_classes)
        return train, test
    spec = BlobSpec(num_classes=d["num_classes"], dim=d["dim"], per_class=d["per_class"],
                    separation=d["separation"])
    return make_blobs(spec, root.split("data"))


def build_model_spec(cfg: ExperimentConfig, train: Dataset) -> MlpSpec:
    m = cfg.raw["model"]
    spec = MlpSpec(m["input_dim"] or train.dim, m["num_classes"] or train.num_classes, m["hidden_dims"])
    if spec.input_dim != train.dim or spec.num_classes != train.num_classes:
        raise ConfigError(f"model expects {spec.input_dim} inputs / {spec.num_classes} classes, "
                          f"data has {train.dim} / {train.num_classes}")
    return spec


def clean_victim(cfg: ExperimentConfig, train: Dataset, test: Dataset, spec: MlpSpec,
                 root: RngState) -> tuple[ModelState, dict]:
    """The clean victim, on exactly the streams ``run_experiment`` uses."""
    return train_victim(train, None, spec, cfg.train_config(), root.split("victim"), test)


def generate(cfg: ExperimentConfig, train: Dataset, spec: MlpSpec, root: RngState,
             clean: tuple[ModelState, dict] | None = None, test: Dataset | None = None) -> PoisonSet:
    g = cfg.raw["generator"]
    budget = cfg.budget()
    mask = g["class_mask"]
    rng = root.split("poison")
    if g["name"] == "miue":
        return gen_miue(train, spec, cfg.miue_config(), budget, mask, rng)
    if g["name"] == "em":
        return gen_em(train, spec, cfg.miue_config(), budget, mask, rng)
    if g["name"] == "random":
        return gen_random(train, budget, rng, mask)
    if clean is None:
        clean = clean_victim(cfg, train, test, spec, root)
    return gen_ap(train, clean[0], budget, g["ap_steps"], rng, g["ap_step_size"], mask)


def run(cfg: ExperimentConfig) -> tuple[ExperimentReport, PoisonSet]:
    """Data, clean victim, poison, poisoned victim and the gap measurements."""
    root = RngState(cfg.seed)
    train, test = build_data(cfg, root)
    spec = build_model_spec(cfg, train)
    clean = clean_victim(cfg, train, test, spec, root)
    poison = generate(cfg, train, spec, root, clean, test)
    poison.check(train.labels)
    report = run_experiment(train, test, spec, poison, cfg.train_config(), cfg.mi_config(), root,
                            cfg.raw["feature_source"], clean_run=clean)
    report.config["experiment"] = cfg.raw
    return report, poison


# ---------------------------------------------------------------------------
# output helpers

def atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_json(obj) -> str:
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, np.generic):
            return o.item()
        raise TypeError(f"cannot serialize {type(o).__name__}")

    return json.dumps(obj, indent=2, sort_keys=True, default=default) + "\n"


def curves_csv(curves: dict) -> str:
    keys = sorted(curves)
    rows = ["epoch," + ",".join(keys)]
    n = max((len(v) for v in curves.values()), default=0)
    for i in range(n):
        rows.append(f"{i + 1}," + ",".join(repr(float(curves[k][i])) if i < len(curves[k]) else ""
                                           for k in keys))
    return "\n".join(rows) + "\n"


def write_experiment(out_dir, report: ExperimentReport, poison: PoisonSet) -> dict:
    """Poison CSV, report JSON and both learning-curve CSVs; returns the paths."""
    paths = {"poison": os.path.join(out_dir, "poison.csv"), "report": os.path.join(out_dir, "report.json")}
    save_poison(poison.deltas, paths["poison"])
    atomic_write_text(paths["report"], report.to_json() + "\n")
    for which in ("clean", "poisoned"):
        paths[f"curves_{which}"] = os.path.join(out_dir, f"curves_{which}.csv")
        atomic_write_text(paths[f"curves_{which}"], curves_csv(report.curves[which]))
    return paths
