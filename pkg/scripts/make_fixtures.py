"""Regenerate the bundled target tile, target statistics and mini dataset."""

import argparse
from pathlib import Path

from mitorbr.image import write_png
from mitorbr.stain_norm import compute_lab_stats, macenko_fit, save_json
from mitorbr.synthetic import build_mini_dataset, target_tile

DATA = Path(__file__).resolve().parents[1] / "src" / "mitorbr" / "data"


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=DATA)
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    tile = target_tile()
    write_png(args.out / "target_tile.png", tile)
    save_json(args.out / "target_lab.json", compute_lab_stats(tile))
    save_json(args.out / "target_stain.json", macenko_fit(tile))
    build_mini_dataset(args.out / "mini")
    print(f"fixtures written to {args.out}")


if __name__ == "__main__":
    main()
