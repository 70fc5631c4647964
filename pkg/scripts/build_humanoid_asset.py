"""Export the bundled humanoid body template to a standalone asset file.

Writes the single-JSON body asset (vertices, faces, skinning data and
blend-shape bases), reloads it, and verifies the round trip preserves
the posed mesh. Run from the repo root:

    python3 scripts/build_humanoid_asset.py [--out humanoid_asset.json]
"""

import argparse
import os
import sys

import numpy as np

from contrast_forge.body_model import (
    BodyParams,
    builtin_template,
    load_body_asset,
    pose_mesh,
    save_body_asset,
)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="humanoid_asset.json",
                        help="output asset path")
    parser.add_argument("--decimals", type=int, default=7,
                        help="rounding applied to float fields")
    args = parser.parse_args(argv)

    template = builtin_template()
    save_body_asset(template, args.out, decimals=args.decimals)
    reloaded = load_body_asset(args.out)

    rest = BodyParams.rest(template)
    original = pose_mesh(template, rest).vertices
    restored = pose_mesh(reloaded, BodyParams.rest(reloaded)).vertices
    drift = float(np.abs(original - restored).max())

    print(f"asset           : {args.out} "
          f"({os.path.getsize(args.out)} bytes)")
    print(f"vertices        : {len(template.vertices)}")
    print(f"faces           : {len(template.faces)}")
    print(f"joints          : {len(template.parents)}")
    print(f"round-trip drift: {drift:.2e} m")
    if drift > 10.0 ** (-args.decimals) * 10:
        print("round-trip drift exceeds the rounding budget",
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
