import pytest
import torch

from bytexformer.model import ByteTransformer, ModelConfig


@pytest.fixture
def small_config():
    return ModelConfig(n_layers=2, context_n=16, d_model=8, d_ff=16, n_heads=2, dropout_p=0.1)


@pytest.fixture
def small_model(small_config):
    torch.manual_seed(0)
    return ByteTransformer(small_config).eval()


_acceptance = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if "test_acceptance" in item.nodeid and rep.when == "call":
        title = (item.function.__doc__ or item.name).strip().splitlines()[0]
        if hasattr(item, "callspec"):
            title += " [" + ", ".join(str(v) for v in item.callspec.params.values()) + "]"
        _acceptance.append((title, rep.outcome, rep.duration))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for title, outcome, duration in _acceptance:
        flag = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{flag}  {title}  ({duration:.1f}s)")
