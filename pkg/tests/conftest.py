import time

import numpy as np
import pytest

from miue.bench import train_victim
from miue.experiment import ExperimentConfig, build_data, build_model_spec, clean_victim, run, write_experiment
from miue.rng import RngState

# acceptance results in the order they were recorded: (criterion, passed, detail)
ACCEPTANCE: list[tuple[str, bool, str]] = []


def record(criterion: str, passed: bool, detail: str) -> None:
    ACCEPTANCE.append((criterion, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in sorted(ACCEPTANCE, key=lambda r: int(r[0].split()[0])):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {name}: {detail}")


@pytest.fixture
def rng():
    return RngState(12345)


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), floor))


class Benchmark:
    """Seeded default blob benchmark, computed lazily and shared by the end-to-end tests."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self._reports = {}
        self._timings = {}

    def config(self, name: str, **overrides) -> ExperimentConfig:
        given = {"generator": {"name": name, **overrides.pop("generator", {})}, **overrides}
        return ExperimentConfig.from_dict(given, seed_override=0)

    def report(self, key: str, name: str, **overrides):
        if key not in self._reports:
            cfg = self.config(name, output_dir=str(self.out_dir / key), **overrides)
            start = time.perf_counter()
            report, poison = run(cfg)
            self._timings[key] = time.perf_counter() - start
            write_experiment(cfg.raw["output_dir"], report, poison)
            self._reports[key] = (cfg, report, poison)
        return self._reports[key]

    def seconds(self, key: str) -> float:
        return self._timings[key]

    def models(self, key: str, name: str, **overrides):
        """Clean and standard-trained poisoned victims plus the data, for per-class checks."""
        cfg, report, poison = self.report(key, name, **overrides)
        root = RngState(cfg.seed)
        train, test = build_data(cfg, root)
        spec = build_model_spec(cfg, train)
        clean, _ = clean_victim(cfg, train, test, spec, root)
        poisoned, _ = train_victim(train, poison, spec, cfg.train_config(), root.split("victim"), test)
        return train, test, spec, clean, poisoned, poison


@pytest.fixture(scope="session")
def benchmark(tmp_path_factory):
    return Benchmark(tmp_path_factory.mktemp("bench"))


@pytest.fixture(scope="session")
def acceptance():
    return record
