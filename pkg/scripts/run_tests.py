#!/usr/bin/env python3
"""
Test runner for kkl-tune.

Runs every test module on its own and prints a per-module summary.
"""

import re
import subprocess
import sys
from pathlib import Path

TEST_SUITES = [
    ("test_dynamics.py", "Systems and RK4 integration"),
    ("test_linfilter.py", "Bessel design and system norms"),
    ("test_sampling.py", "Backward-forward sampling"),
    ("test_neural.py", "MLP and differentiation"),
    ("test_learning.py", "Supervised and autoencoder training"),
    ("test_tuning.py", "Tuning criterion"),
    ("test_observer.py", "Online estimation"),
    ("test_config.py", "Configuration"),
    ("test_core.py", "Pipeline"),
    ("test_cli.py", "Command line interface"),
    ("test_main.py", "Entry point"),
]


def run_test_suite(test_file: str, description: str) -> dict:
    """Run a specific test suite and return results."""
    print(f"\n{'='*60}")
    print(f"Running {description}")
    print(f"{'='*60}")

    try:
        result = subprocess.run(
            [sys.executable, "-m", "pytest", f"tests/{test_file}", "-q", "--tb=short"],
            capture_output=True, text=True, cwd=Path.cwd(),
        )
    except OSError as e:
        print(f"Error running {test_file}: {e}")
        return {"passed": 0, "failed": 0, "exit_code": -1}

    counts = {kind: 0 for kind in ("passed", "failed", "error")}
    for count, kind in re.findall(r"(\d+) (passed|failed|error)", result.stdout):
        counts[kind] = int(count)

    print(result.stdout)
    if result.stderr:
        print("STDERR:", result.stderr)

    return {
        "passed": counts["passed"],
        "failed": counts["failed"] + counts["error"],
        "exit_code": result.returncode,
    }


def main():
    """Run all test suites and provide summary."""
    print("kkl-tune - Test Runner")
    print("=" * 60)

    results = {test_file: run_test_suite(test_file, description) for test_file, description in TEST_SUITES}
    total_passed = sum(r["passed"] for r in results.values())
    total_failed = sum(r["failed"] for r in results.values())

    print(f"\n{'='*80}")
    print("TEST SUMMARY")
    print(f"{'='*80}")

    for test_file, description in TEST_SUITES:
        result = results[test_file]
        status = "✅ PASSED" if result["exit_code"] == 0 else "❌ FAILED"
        print(f"{description:.<50} {result['passed']:>3} passed, {result['failed']:>3} failed {status}")

    print(f"{'='*80}")
    print(f"TOTAL RESULTS: {total_passed} passed, {total_failed} failed")

    if total_failed == 0 and all(r["exit_code"] == 0 for r in results.values()):
        print("\n🎉 All tests passed!")
        sys.exit(0)
    print(f"\n⚠️  {total_failed} tests failed - see details above")
    sys.exit(1)


if __name__ == "__main__":
    main()
