import numpy as np
import pytest

from stabfield.geometry import TorusGeometry, sample_poisson


@pytest.fixture
def uniform_1000():
    return sample_poisson(TorusGeometry(2, 20.0), 2.5, 1234)


def brute_sequential(positions, times, radii, speed=0.0, cutoff=None, strict=False, box=0.0):
    """Plain-Python sequential acceptance: keeps the full accepted list."""
    order = sorted(range(len(times)), key=lambda i: (times[i], *positions[i]))
    accepted = []
    status = [0] * len(times)
    for i in order:
        ok = True
        for j in accepted:
            delta = np.asarray(positions[i], float) - np.asarray(positions[j], float)
            if box:
                delta = delta - box * np.round(delta / box)
            dist = float(np.sqrt(np.sum(delta * delta)))
            reach = radii[j] + speed * (times[i] - times[j])
            if cutoff is not None:
                reach = min(reach, cutoff)
            thr = radii[i] + reach
            if (dist <= thr) if strict else (dist < thr):
                ok = False
                break
        if ok:
            accepted.append(i)
            status[i] = 1
    return status


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LOG: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record_criterion():
    def record(number: int, passed: bool, detail: str) -> None:
        ACCEPTANCE_LOG[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LOG:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(ACCEPTANCE_LOG):
        passed, detail = ACCEPTANCE_LOG[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
