"""Runs the invariant suite under tests/ through pytest."""
import os

import pytest

from args import VerifyArgParser


TEST_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'tests')


def verify(fast=False, extra=None):
    """Returns the pytest exit code; `fast` deselects the slow trend checks."""
    argv = [TEST_DIR, '-q']
    if fast:
        argv += ['-m', 'not slow']
    argv += list(extra or [])
    return int(pytest.main(argv))


def main(args):
    code = verify(fast=args.fast)
    print('Invariant suite finished with exit code {}.'.format(code), flush=True)
    return code


if __name__ == '__main__':
    parser = VerifyArgParser()
    args = parser.parse_args()
    raise SystemExit(main(args))
