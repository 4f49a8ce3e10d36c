import threading

import pytest

from atfg.dynamics import AircraftConfig
from atfg.link import LockstepServer

# Acceptance verdicts, printed once at the end of the session.
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def record(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (title, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{verdict}] {number}. {title}: {detail}")


class RunningServer:
    def __init__(self, aircraft=None, dt=1e-3):
        self.server = LockstepServer(aircraft or AircraftConfig(), ("127.0.0.1", 0), dt)
        self.thread = threading.Thread(target=self.server.serve_forever, kwargs={"poll": 0.05}, daemon=True)
        self.thread.start()

    @property
    def address(self):
        return self.server.address

    def stop(self):
        self.server.shutdown()
        self.thread.join(timeout=2)
        self.server.sock.close()


@pytest.fixture
def server():
    running = RunningServer()
    yield running
    running.stop()
