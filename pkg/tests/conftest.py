import os
from pathlib import Path

import numpy as np
import pytest

from vibrec.data import Dataset

ROOT = Path(__file__).resolve().parents[1]

# Real datasets are looked up under $VIBREC_DATA_DIR (default: <repo>/data).
DATA_FILES = {
    "movielens": ("ml-100k/u.data",),
    "filmtrust": ("filmtrust/ratings.txt",),
    "epinions": ("epinions/ratings_data.txt",),
}


def data_dir() -> Path:
    return Path(os.environ.get("VIBREC_DATA_DIR", ROOT / "data"))


def find_dataset(name: str) -> Path | None:
    for rel in DATA_FILES[name]:
        p = data_dir() / rel
        if p.is_file():
            return p
    return None


def require_dataset(name: str) -> Path:
    p = find_dataset(name)
    if p is None:
        pytest.skip(f"{name} ratings not found under {data_dir()} (see README, 'Datasets')")
    return p


def tiny_dataset(n_users=4, n_items=5, seed=0, density=0.8, r_min=1.0, r_max=5.0) -> Dataset:
    rng = np.random.default_rng(seed)
    triples = [(f"u{u}", f"i{i}", float(rng.integers(int(r_min), int(r_max) + 1)))
               for u in range(n_users) for i in range(n_items) if rng.random() < density]
    return Dataset.from_triples(triples, r_min, r_max, name="tiny")


@pytest.fixture
def write(tmp_path):
    def _write(name, text):
        p = tmp_path / name
        p.write_text(text, encoding="utf-8")
        return p
    return _write


# -- acceptance summary: one PASS/FAIL/SKIP line per criterion ---------------

_ACCEPTANCE: dict[str, tuple] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.skipped or rep.failed):
        return
    detail = dict(item.user_properties).get("detail", "")
    if rep.skipped:
        status = "SKIP"
        if isinstance(rep.longrepr, tuple):
            detail = rep.longrepr[2].removeprefix("Skipped: ")
    else:
        status = "PASS" if rep.passed else "FAIL"
    _ACCEPTANCE[item.nodeid] = (mark.args[0], mark.args[1], item.name, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n, title, name, status, detail in sorted(_ACCEPTANCE.values(), key=lambda r: (r[0], r[2])):
        line = f"criterion {n} ({title}) [{name}]: {status}"
        terminalreporter.write_line(line + (f"  {detail}" if detail else ""))
