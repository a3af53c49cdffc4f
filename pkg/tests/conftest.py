import numpy as np
import pytest

from safereturn import data_path
from safereturn.automata import parse_template, template_dra
from safereturn.model import LabeledMdp
from safereturn.workspace import load_map, spec_to_mdp


def make_mdp(n, recs, labels=None, initial=0, ap=None):
    """Small helper: ``recs`` are ``(x, action, cost, [(y, p), ...])``."""
    labels = labels or [[] for _ in range(n)]
    ap = sorted({a for l in labels for a in l}) if ap is None else ap
    return LabeledMdp.from_transitions(n, ap, labels, initial, recs)


def random_mdp(rng, n, max_actions=3, max_succ=3, labels=None):
    recs = []
    for x in range(n):
        for a in range(int(rng.integers(1, max_actions + 1))):
            k = int(rng.integers(1, min(max_succ, n) + 1))
            ys = rng.choice(n, size=k, replace=False)
            ps = rng.dirichlet(np.ones(k))
            recs.append((x, f"a{a}", float(rng.uniform(0.5, 3.0)), list(zip(ys.tolist(), ps.tolist()))))
    return make_mdp(n, recs, labels)


def corpus_model(name):
    return spec_to_mdp(load_map(data_path(name)))


def dra(text):
    return template_dra(parse_template(text))


@pytest.fixture(scope="session")
def office():
    return corpus_model("office.map")


@pytest.fixture(scope="session")
def sweep():
    return corpus_model("sweep.map")


@pytest.fixture(scope="session")
def hardware():
    return corpus_model("hardware.map")


@pytest.fixture(scope="session")
def terrain():
    return corpus_model("terrain.map")


@pytest.fixture(scope="session")
def safe_return_bs():
    return dra("safe_return(bs)")


# acceptance verdicts, echoed at the end of the session
VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
