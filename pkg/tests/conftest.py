# Pin BLAS to one thread before numpy loads: faster for these small shapes
# and keeps reductions in a fixed order.
import os
import sys

os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")


def pytest_runtest_logreport(report):
    """Print one PASS/FAIL line per acceptance criterion, capture or not."""
    if "test_acceptance.py::" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    name = name[5:].replace("_", "-") if name.startswith("test_") else name
    if report.when == "call":
        status = "PASS" if report.passed else "FAIL"
        print(f"ACCEPTANCE {name}: {status}", file=sys.__stdout__, flush=True)
    elif report.when == "setup" and report.failed:
        print(f"ACCEPTANCE {name}: FAIL (fixture)", file=sys.__stdout__,
              flush=True)
