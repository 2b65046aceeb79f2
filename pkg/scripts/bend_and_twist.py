"""Bend and twist the study template and export spoke tips of each variant as CSV point clouds.

    python scripts/bend_and_twist.py --angle 0.6 --out deformed/
"""
import argparse
from pathlib import Path

import numpy as np

from skelstat.reparam import lp_to_gp
from skelstat.simulation import DeformSpec, FrameAxis, rotate_frames, study_template


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--angle", type=float, default=0.5, help="radians per rotated spinal frame")
    p.add_argument("--out", type=Path, default=Path("deformed"))
    args = p.parse_args()

    template = study_template()
    g = template.grid
    m, c0 = g.spine_row, (g.cols - 1) // 2
    lower_spine = tuple(g.index(m, c) for c in range(c0 - 1, 0, -1))   # root outward

    variants = {"template": template}
    for axis in FrameAxis:
        spec = DeformSpec(lower_spine, axis, args.angle / len(lower_spine))
        variants[f"rotate_{axis.value}"] = rotate_frames(template, spec)

    args.out.mkdir(parents=True, exist_ok=True)
    for name, lp in variants.items():
        tips = lp_to_gp(lp).tips()
        np.savetxt(args.out / f"{name}_tips.csv", tips, delimiter=",", header="x,y,z",
                   comments="", fmt="%.10g")
        print(f"{name}: {len(tips)} tips -> {args.out / (name + '_tips.csv')}")


if __name__ == "__main__":
    main()
