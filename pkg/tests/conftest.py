"""Shared fixtures: the toy corpus and the trained toy models.

Trained models are built once per session. Set ``UVRC_MODEL_CACHE`` to a
directory to keep them on disk between runs while developing.
"""

import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import toydata  # noqa: E402
from uvrc.errors import CorruptStreamError  # noqa: E402
from uvrc.model import load_weights, save_weights, toy_config  # noqa: E402
from uvrc.training import PatchDataset, TrainingConfig, read_loss_log, train_model, write_loss_log  # noqa: E402

TOY_STEPS = 2000
TOY_LR = 1e-3

_results: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


@pytest.fixture(scope="session")
def toy_folder(tmp_path_factory):
    return toydata.write_train_folder(tmp_path_factory.mktemp("toy"))


@pytest.fixture(scope="session")
def toy_data(toy_folder):
    return PatchDataset(toy_folder, 32)


@pytest.fixture(scope="session")
def heldout():
    return toydata.heldout_images()


class ToyModels:
    """Lazily trained models keyed by (architecture, metric, lambda)."""

    def __init__(self, data, cache):
        self.data = data
        self.cache = Path(cache) if cache else None
        self._models = {}

    def get(self, arch="hyperprior", metric="mse", lmbda=0.003):
        """Returns ``(weights, history)``."""
        key = (arch, metric, lmbda)
        if key not in self._models:
            self._models[key] = self._build(*key)
        return self._models[key]

    def _build(self, arch, metric, lmbda):
        cfg = TrainingConfig(lmbda=lmbda, metric=metric, steps=TOY_STEPS, lr=TOY_LR, seed=0)
        tag = f"{arch}_{metric}_{lmbda:g}_{TOY_STEPS}"
        if self.cache is not None:
            wpath, lpath = self.cache / f"{tag}.uvw", self.cache / f"{tag}.loss.csv"
            if wpath.exists() and lpath.exists():
                try:
                    w = load_weights(wpath)
                    w.module  # noqa: B018 - fails if the layer layout changed
                except (CorruptStreamError, RuntimeError):
                    w = None
                if w is not None and w.config == toy_config(arch, metric, lmbda):
                    return w, read_loss_log(lpath)
        history = []
        w = train_model(cfg, self.data, toy_config(arch, metric, lmbda), history=history)
        if self.cache is not None:
            self.cache.mkdir(parents=True, exist_ok=True)
            save_weights(w, wpath)
            write_loss_log(history, lpath)
        return w, history


@pytest.fixture(scope="session")
def toy_models(toy_data):
    return ToyModels(toy_data, os.environ.get("UVRC_MODEL_CACHE"))


# -- acceptance reporting -------------------------------------------------------------


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    number, title = marker.args
    entry = _results.setdefault(number, {"title": title, "ok": True, "details": []})
    if rep.failed:
        entry["ok"] = False
    if rep.when == "call" or rep.failed:
        entry["details"] += [v for k, v in item.user_properties if k == "measured"]


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_results):
        e = _results[number]
        tr.write_line(f"criterion {number}: {'PASS' if e['ok'] else 'FAIL'}  {e['title']}")
        for d in e["details"]:
            tr.write_line(f"    {d}")
