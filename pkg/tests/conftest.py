import pytest

from provtrace.model import EntityId, EntityKind, Event, Op

_ACCEPTANCE: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, label): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, label = mark.args
    key = str(num)
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        prev = _ACCEPTANCE.get(key, (label, "PASS"))[1]
        status = "PASS" if report.outcome == "passed" and prev == "PASS" else "FAIL"
        if report.outcome == "skipped":
            status = "SKIP"
        _ACCEPTANCE[key] = (label, status)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=int):
        label, status = _ACCEPTANCE[key]
        terminalreporter.write_line(f"[{status}] criterion {key}: {label}")


# -- shared builders -------------------------------------------------------------


def proc(name, pid=1):
    return EntityId(EntityKind.PROCESS, f"{name}#{pid}")


def file(path):
    return EntityId(EntityKind.FILE, path)


def sock(sip="10.0.0.2", sport=4000, dip="192.168.2.3", dport=80):
    return EntityId(EntityKind.SOCKET, f"{sip}:{sport}>{dip}:{dport}")


A = proc("A")
B = file("/B")
C = file("/C")
D = proc("D", 2)
NET = sock()


def five_event_stream():
    """Remote socket feeds A; A also reads B, writes C; D and A later read C."""
    return [
        Event(NET, A, Op.RECVFROM, 1, 100, 1),
        Event(B, A, Op.READ, 2, 50, 2),
        Event(A, C, Op.WRITE, 3, 70, 3),
        Event(C, D, Op.READ, 4, 70, 4),
        Event(C, A, Op.READ, 5, 20, 5),
    ]


@pytest.fixture
def stream5():
    return five_event_stream()
