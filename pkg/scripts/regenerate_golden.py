#!/usr/bin/env python3
"""
Rebuild the landscape golden fixture in tests/golden/.

Run this only after an intended change to landscape sampling or CSV
formatting, and commit the new file with that change.

Usage:
    python scripts/regenerate_golden.py [--dry-run]
"""
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT))

from tests.golden.test_landscape_golden import GOLDEN_PATH, build_golden_grid  # noqa: E402


def main():
    dry_run = '--dry-run' in sys.argv
    with tempfile.TemporaryDirectory() as workdir:
        produced = build_golden_grid(Path(workdir)).to_csv(Path(workdir) / "landscape.csv").read_bytes()

    if GOLDEN_PATH.exists() and GOLDEN_PATH.read_bytes() == produced:
        print(f"✓ {GOLDEN_PATH.relative_to(ROOT)} is up to date")
        return
    if dry_run:
        print(f"Would rewrite {GOLDEN_PATH.relative_to(ROOT)} ({len(produced)} bytes)")
        return
    GOLDEN_PATH.write_bytes(produced)
    print(f"✓ Wrote {GOLDEN_PATH.relative_to(ROOT)} ({len(produced)} bytes)")


if __name__ == '__main__':
    main()
