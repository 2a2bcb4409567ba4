"""
Compare two results directories and show a unified diff of what changed.

Usage:
  python tools/compare_runs.py results_before results_after

CSV tables must match byte for byte. manifest.json files are compared with
their timings removed, since wall-clock times differ between reruns.
Exit status is 0 when the runs are identical and 2 otherwise.
"""

import difflib
import json
import sys
from pathlib import Path
from typing import Dict, List

VOLATILE_KEYS = ("timings",)


def normalize_manifest(path: Path) -> str:
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    for key in VOLATILE_KEYS:
        data.pop(key, None)
    return json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def comparable_text(path: Path) -> str:
    if path.name == "manifest.json":
        return normalize_manifest(path)
    return path.read_text(encoding="utf-8")


def collect(root: Path) -> Dict[str, Path]:
    files = {}
    for pattern in ("*.csv", "*.json"):
        for path in root.rglob(pattern):
            files[path.relative_to(root).as_posix()] = path
    return files


def compare_dirs(a_root: Path, b_root: Path) -> List[str]:
    """Relative paths that are missing on one side or differ"""
    a_files, b_files = collect(Path(a_root)), collect(Path(b_root))
    differing = []
    for name in sorted(set(a_files) | set(b_files)):
        if name not in a_files or name not in b_files:
            differing.append(name)
        elif comparable_text(a_files[name]) != comparable_text(b_files[name]):
            differing.append(name)
    return differing


def main():
    if len(sys.argv) < 3:
        print("Usage: python tools/compare_runs.py results_before results_after")
        sys.exit(1)

    a_root, b_root = Path(sys.argv[1]), Path(sys.argv[2])
    differing = compare_dirs(a_root, b_root)
    if not differing:
        print("Runs are IDENTICAL.")
        sys.exit(0)

    print(f"Runs DIFFER in {len(differing)} file(s). Showing unified diffs:\n")
    for name in differing:
        a_path, b_path = a_root / name, b_root / name
        a_lines = comparable_text(a_path).splitlines(keepends=True) if a_path.exists() else []
        b_lines = comparable_text(b_path).splitlines(keepends=True) if b_path.exists() else []
        sys.stdout.writelines(difflib.unified_diff(a_lines, b_lines, fromfile=str(a_path), tofile=str(b_path)))
    sys.exit(2)


if __name__ == "__main__":
    main()
