import pytest

from cfaudit import synth
from cfaudit.audit import AuditConfig
from cfaudit.learn import GBTHyper, LogisticHyper

from .helpers import ZERO_BIAS


@pytest.fixture(scope="session")
def small_cohort():
    return synth.generate_cohort(synth.SynthConfig(n_patients=400, seed=7))


@pytest.fixture(scope="session")
def zero_bias_cohort():
    cfg = synth.SynthConfig(n_patients=400, seed=11, bias_mean=ZERO_BIAS, bias_sd=0.0)
    return synth.generate_cohort(cfg)


@pytest.fixture
def fast_audit_config(tmp_path):
    """Small k and cheap learners so end-to-end tests stay quick."""
    return AuditConfig(
        k=3,
        seed=5,
        output_dir=str(tmp_path / "out"),
        logistic=LogisticHyper(max_iter=150),
        gbt=GBTHyper(n_rounds=10),
    )


# -- acceptance reporting -----------------------------------------------------

_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if rep.failed and not detail:
        detail = str(rep.longrepr).strip().splitlines()[-1][:160]
    _ACCEPTANCE[number] = ("PASS" if rep.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        status, title, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"[{status}] {number:2d}. {title}" + (f" -- {detail}" if detail else ""))
