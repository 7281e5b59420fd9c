"""Write a JSON file of random Gaussian spec families for ``openrect verify-theorems``.

    python scripts/make_theorem_families.py configs/theorem_family.json --count 100 --seed 0
"""

import argparse
import json

import numpy as np

from openrect.theory import random_family

DIMS = (1, 2, 5, 16)


def families(count: int, seed: int) -> list[dict]:
    rng = np.random.default_rng(seed)
    return [random_family(rng, DIMS[i % len(DIMS)], name=f"f{i:03d}").to_dict() for i in range(count)]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("output")
    ap.add_argument("--count", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    with open(args.output, "w", encoding="utf-8") as fh:
        json.dump({"seed": args.seed, "families": families(args.count, args.seed)}, fh, indent=1)
        fh.write("\n")


if __name__ == "__main__":
    main()
