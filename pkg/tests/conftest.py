import numpy as np
import pytest

from dialog_expertise.corpus import Exchange, Label, Session
from dialog_expertise.features import extract_features
from dialog_expertise.prep import Dataset
from dialog_expertise.synth import GeneratorConfig, generate_corpus


def make_session(exchanges, session_id="s1", label=Label.NOVICE, prompt=None):
    """Build a session from dicts of Exchange fields; indices are filled in."""
    exs = tuple(Exchange(index=i, **fields) for i, fields in enumerate(exchanges, start=1))
    return Session(session_id, exs, label, prompt)


def utterance(start, duration, **extra):
    return dict(system_start=start, user_start=start + 0.5, user_end=start + 0.5 + duration, **extra)


def make_dataset(X, y, names=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    names = names or tuple(f"f{i}" for i in range(X.shape[1]))
    return Dataset(X, np.asarray(y), tuple(names))


@pytest.fixture(scope="session")
def balanced_corpus():
    return generate_corpus(GeneratorConfig(n_per_class=80, seed=11))


@pytest.fixture(scope="session")
def balanced_dataset(balanced_corpus):
    return Dataset.from_vectors([extract_features(s) for s in balanced_corpus.sessions])


# -- acceptance reporting --------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call" and not report.failed:
        return
    number, title = mark.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if report.failed and report.when == "call":
        msg = str(report.longrepr.reprcrash.message) if hasattr(report.longrepr, "reprcrash") else "failed"
        detail = (detail + "; " if detail else "") + msg.splitlines()[0]
    status = "PASS" if report.passed else "FAIL"
    if report.when == "call" or report.failed:
        _CRITERIA[number] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[number]
        terminalreporter.write_line(f"[{status}] criterion {number}: {title} :: {detail}")
