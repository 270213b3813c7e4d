#!/usr/bin/env python3
"""Generate the deep-street fixture as pipeline inputs.

Writes scene.ply, cameras.json and a straight fly-through trajectory.csv
into --out, ready for `splatlod build-lod` and `splatlod bench`.
"""

import argparse
from pathlib import Path

import numpy as np

from splatlod.assets import write_cameras_json, write_splat_ply
from splatlod.synthetic import deep_street


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--fine", type=int, default=18000)
    ap.add_argument("--views", type=int, default=50)
    ap.add_argument("--length", type=float, default=200.0)
    ap.add_argument("--trajectory-steps", type=int, default=120)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene, cameras = deep_street(seed=args.seed, n_fine=args.fine,
                                 n_views=args.views, length=args.length)
    write_splat_ply(out / "scene.ply", scene)
    write_cameras_json(out / "cameras.json", cameras)

    zs = np.linspace(4.0, 0.65 * args.length, args.trajectory_steps)
    rows = ["time,px,py,pz,qw,qx,qy,qz"]
    rows += [f"{i},0.0,0.5,{z:.6f},1,0,0,0" for i, z in enumerate(zs)]
    (out / "trajectory.csv").write_text("\n".join(rows) + "\n")
    print(f"{len(scene)} gaussians, {len(cameras)} cameras -> {out}")


if __name__ == "__main__":
    main()
