"""End-to-end acceptance runs, one per criterion.

Each run prints ``criterion N (<experiment>): PASS|FAIL`` followed by its
checks.  Run directly (``python tests/test_acceptance.py``) for the plain
twelve-line summary, or through pytest with ``-m acceptance``.
"""

import sys

import pytest

from loopsoup.config import RunConfig
from loopsoup.experiments import REGISTRY, run_experiment

CRITERIA = sorted(REGISTRY.values(), key=lambda e: e.criterion)


def run_one(exp, out=None):
    rep = run_experiment(RunConfig(experiment=exp.name, out=out))
    line = f"criterion {exp.criterion} ({exp.name}): {'PASS' if rep.passed else 'FAIL'} [{rep.runtime:.1f}s]"
    return rep, line


@pytest.mark.acceptance
@pytest.mark.parametrize("exp", CRITERIA, ids=[f"criterion_{e.criterion:02d}_{e.name}" for e in CRITERIA])
def test_criterion(exp, capsys):
    rep, line = run_one(exp)
    with capsys.disabled():
        print()
        print(line)
        for s in rep.summary_lines():
            print(s)
    failed = [c.name for c in rep.checks if not c.passed]
    assert rep.passed, f"failed checks: {failed}"


if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else None
    lines = []
    for exp in CRITERIA:
        rep, line = run_one(exp, out)
        print(line, flush=True)
        lines.append(rep.passed)
    sys.exit(0 if all(lines) else 1)
