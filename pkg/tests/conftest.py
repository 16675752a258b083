import pytest

from dtqncc.bench.config import from_dict


def two_link_config(**overrides):
    """2 x 10 Mbps, 10 ms one-way, 1 BDP buffer, Reno, 5 s."""
    data = {
        "cc": "reno",
        "duration_s": 5,
        "links": [{"rate_bps": 10_000_000, "prop_delay_us": 10_000, "buffer_bdp": 1.0}] * 2,
    }
    data.update(overrides)
    return from_dict(data)


@pytest.fixture
def two_link():
    return two_link_config


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion, reported in the summary")
    config._criterion_lines = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    number, title = mark.args
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    item.config._criterion_lines[number] = f"criterion {number:>2} {status}  {title}" + (f"  [{detail}]" if detail else "")


def pytest_terminal_summary(terminalreporter, config):
    lines = config._criterion_lines
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
