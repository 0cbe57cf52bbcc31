"""Compute golden outputs with the mpmath oracle and freeze them to tests/data."""

import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

import oracle  # noqa: E402
from mitorbr.synthetic import REFERENCE_STAINS, two_stain_image  # noqa: E402

REINHARD_TARGET = {"mean": [3.9, -0.12, 0.03], "std": [0.25, 0.06, 0.012]}


def reinhard_fixture():
    return np.random.default_rng(8).integers(0, 256, size=(8, 8, 3), dtype=np.uint8)


def macenko_fixtures():
    rot = np.array([[0.95, 0.05, 0.0], [0.0, 0.97, 0.03], [0.05, 0.0, 0.95]])
    src_stains = rot @ REFERENCE_STAINS
    src_stains /= np.linalg.norm(src_stains, axis=0)
    src = two_stain_image(src_stains, size=20, seed=11)
    tgt = two_stain_image(REFERENCE_STAINS, size=20, seed=12)
    return src, tgt


def _pixels(img):
    return [tuple(int(v) for v in p) for p in img.reshape(-1, 3)]


def main():
    img = reinhard_fixture()
    out = oracle.reinhard(_pixels(img), REINHARD_TARGET["mean"], REINHARD_TARGET["std"])
    golden = {"target": REINHARD_TARGET, "output": np.array(out).reshape(8, 8, 3).tolist()}
    (ROOT / "tests" / "data" / "reinhard_golden.json").write_text(json.dumps(golden))

    src, tgt = macenko_fixtures()
    cols, maxc = oracle.macenko_fit(_pixels(tgt))
    out = oracle.macenko_normalize(_pixels(src), cols, maxc)
    golden = {
        "target_stain_matrix": [[float(cols[k][i]) for k in range(2)] for i in range(3)],
        "target_max_concentrations": [float(m) for m in maxc],
        "output": np.array(out).reshape(src.shape).tolist(),
    }
    (ROOT / "tests" / "data" / "macenko_golden.json").write_text(json.dumps(golden))
    print("goldens written")


if __name__ == "__main__":
    main()
