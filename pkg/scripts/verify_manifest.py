"""
Verify that a recorded run is reproducible from its manifest.

Usage:
    python scripts/verify_manifest.py PATH_TO_MANIFEST [--scratch DIR]

The script:
 - re-executes the manifest's command with its resolved config into a scratch directory
 - compares every recorded output with the fresh one
   (CSV and JSON numerically within a tolerance, everything else byte for byte)
 - prints per-file results and a PASS/FAIL verdict
 - saves the verdict next to the manifest as manifest_check.json
"""

import argparse
import json
import math
import os
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from src.cli import run  # noqa: E402
from src.persistence import read_csv, sha256_file, write_json  # noqa: E402

TOLERANCE = 1.0e-12


def _close(a, b, tol):
    if isinstance(a, bool) or isinstance(b, bool) or a is None or b is None:
        return a == b
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        if math.isnan(a) and math.isnan(b):
            return True
        return abs(a - b) <= tol * max(1.0, abs(a), abs(b))
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(_close(a[k], b[k], tol) for k in a)
    if isinstance(a, list) and isinstance(b, list):
        return len(a) == len(b) and all(_close(x, y, tol) for x, y in zip(a, b))
    return a == b


def _cell(text):
    try:
        return float(text)
    except ValueError:
        return text


def compare_csv(old, new, tol=TOLERANCE):
    old_header, old_rows = read_csv(old)
    new_header, new_rows = read_csv(new)
    if old_header != new_header:
        return False
    return _close([[_cell(c) for c in row] for row in old_rows],
                  [[_cell(c) for c in row] for row in new_rows], tol)


def compare_json(old, new, tol=TOLERANCE):
    return _close(json.loads(Path(old).read_text(encoding="utf-8")),
                  json.loads(Path(new).read_text(encoding="utf-8")), tol)


def compare_output(old, new, tol=TOLERANCE):
    if not Path(new).exists():
        return False
    suffix = Path(old).suffix
    if suffix == ".csv":
        return compare_csv(old, new, tol)
    if suffix == ".json":
        return compare_json(old, new, tol)
    return sha256_file(old) == sha256_file(new)


def evaluate(manifest_path, scratch, verbose=True):
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    status = run(["--from-manifest", str(manifest_path), "--out", str(scratch), "--quiet"])

    results = {}
    for entry in manifest.get("outputs", []):
        name = entry["path"]
        old = manifest_path.parent / name
        if not old.exists() or sha256_file(old) != entry["sha256"]:
            results[name] = "recorded output missing or modified"
            continue
        results[name] = "ok" if compare_output(old, Path(scratch) / name) else "differs"

    verdict = status == 0 and bool(results) and all(v == "ok" for v in results.values())
    if verbose:
        print(f"Replay of {manifest_path}: exit status {status}")
        for name, outcome in sorted(results.items()):
            print(f"  {name}: {outcome}")
        print("\nVerdict: {}".format("PASS (run reproduced)" if verdict else "FAIL (run not reproduced)"))
    return verdict, {"exit_status": status, "outputs": results, "tolerance": TOLERANCE}


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("path", help="Path to manifest.json")
    parser.add_argument("--scratch", help="Directory for the replay (default: a temporary directory)")
    args = parser.parse_args()

    if not os.path.exists(args.path):
        print(f"No manifest at {args.path}")
        return 2

    scratch = args.scratch or tempfile.mkdtemp(prefix="gravicav-replay-")
    verdict, metrics = evaluate(args.path, scratch)

    out_path = Path(args.path).with_name("manifest_check.json")
    try:
        write_json(out_path, {"verdict": bool(verdict), "metrics": metrics})
        print(f"Saved results to {out_path}")
    except OSError as e:
        print(f"Could not save results: {e}")

    return 0 if verdict else 1


if __name__ == "__main__":
    sys.exit(main())
