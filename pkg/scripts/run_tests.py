#!/usr/bin/env python3
"""
Test runner script that executes each test file through pytest and returns status.

    python scripts/run_tests.py            # fast suites in tests/
    python scripts/run_tests.py --slow     # also integration_tests/
"""

import argparse
import os
import subprocess
import sys
import time
from datetime import datetime
from pathlib import Path

ROOT = Path(__file__).parent.parent


def run_single_test(test_file_path, timeout):
    """Run a single test file under pytest and return results."""
    test_name = os.path.basename(test_file_path)
    start = time.perf_counter()
    try:
        result = subprocess.run(
            [sys.executable, '-m', 'pytest', '-q', str(test_file_path)],
            capture_output=True, text=True, timeout=timeout, cwd=ROOT,
        )
        return {
            'name': test_name,
            'passed': result.returncode == 0,
            'output': result.stdout,
            'error': result.stderr,
            'duration': time.perf_counter() - start,
        }
    except subprocess.TimeoutExpired:
        return {
            'name': test_name,
            'passed': False,
            'output': '',
            'error': f'Test timed out after {timeout} seconds',
            'duration': timeout,
        }


def run_all_tests(include_slow=False):
    """Run all test files; integration suites only when asked."""
    suites = [(ROOT / 'tests', 300)]
    if include_slow:
        suites.append((ROOT / 'integration_tests', 3600))

    results = []
    for directory, timeout in suites:
        for test_file in sorted(directory.glob('test_*.py')):
            print(f"Running {directory.name}/{test_file.name}...")
            result = run_single_test(test_file, timeout)
            results.append(result)
            status = "✅ PASSED" if result['passed'] else "❌ FAILED"
            print(f"  {status} ({result['duration']:.1f}s)")
            if not result['passed']:
                print(result['output'][-2000:])

    passed = sum(1 for r in results if r['passed'])
    return {
        'total_tests': len(results),
        'passed': passed,
        'failed': len(results) - passed,
        'timestamp': datetime.now().isoformat(),
        'results': results,
        'overall_status': 'no_tests' if not results else ('passed' if passed == len(results) else 'failed'),
    }


def main():
    parser = argparse.ArgumentParser(description='Run the test suites')
    parser.add_argument('--slow', action='store_true', help='Include integration_tests/')
    args = parser.parse_args()

    print("=" * 50)
    print("Running tests...")
    print("=" * 50)
    test_results = run_all_tests(include_slow=args.slow)

    print("\n" + "=" * 50)
    print("TEST SUMMARY")
    print("=" * 50)
    print(f"Test files: {test_results['total_tests']}")
    print(f"Passed: {test_results['passed']}")
    print(f"Failed: {test_results['failed']}")
    print(f"Timestamp: {test_results['timestamp']}")

    if test_results['overall_status'] == 'passed':
        print("\n✅ ALL TESTS PASSED!")
        return 0
    if test_results['overall_status'] == 'failed':
        print("\n❌ SOME TESTS FAILED!")
        return 1
    print("\n⚠️  NO TESTS FOUND!")
    return 1


if __name__ == "__main__":
    sys.exit(main())
