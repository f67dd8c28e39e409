"""Regenerate the frozen golden files in this directory.

Run from this directory: ``python3 make_golden.py``. Only rerun after an
intentional change in numerical behaviour.
"""

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from ldme.cli import run_command
from ldme.io import dumps, read_instance
from ldme.sift import SiftConfig, run_sift

HERE = Path(__file__).resolve().parent


def estimate_list_json(est) -> str:
    return dumps({
        "means": est.means().tolist(),
        "sources": [c.decomposition.index for c in est.candidates],
    })


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def main() -> None:
    os.chdir(HERE)
    assert run_command(["gen", "--d", "10", "--n", "200", "--alpha", "0.25", "--seed", "3",
                        "--out", "inst200x10"]) == 0
    inst = read_instance("inst200x10")
    est, _ = run_sift(inst.dataset.points, SiftConfig(alpha=0.25), np.random.default_rng(0))
    Path("sift200x10.json").write_text(estimate_list_json(est))
    assert run_command(["estimate", "--in", "inst200x10", "--mode", "fast", "--seed", "0",
                        "--out", "fast200x10.json"]) == 0

    tmp = HERE / "_gen50"
    assert run_command(["gen", "--d", "50", "--n", "5000", "--alpha", "0.1",
                        "--outliers", "far-clusters:9", "--seed", "7", "--out", str(tmp)]) == 0
    digests = {name: sha256(tmp / name) for name in ("points.bin", "manifest.json")}
    Path("gen_d50_seed7.json").write_text(json.dumps(digests, indent=2, sort_keys=True) + "\n")
    for f in tmp.iterdir():
        f.unlink()
    tmp.rmdir()


if __name__ == "__main__":
    main()
