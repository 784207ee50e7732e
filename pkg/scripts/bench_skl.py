"""Accuracy and speed of SKL on separated synthetic fish.

    python scripts/bench_skl.py --scenes 60 --fish 4 --k1 -0.05
"""

import argparse
import time

import numpy as np

from fishlen.length_skl import measure_mask
from fishlen.synth import SynthCamera, SynthSceneSpec, generate_scene


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenes", type=int, default=60)
    ap.add_argument("--fish", type=int, default=4, help="fish per scene")
    ap.add_argument("--cameras", type=int, default=6, help="distinct cameras, reused round-robin")
    ap.add_argument("--k1", type=float, default=-0.05)
    ap.add_argument("--tilt", type=float, default=1.0, help="camera tilt in degrees")
    ap.add_argument("--rule", default="hull_crossing", choices=["hull_crossing", "hull_extent"])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cams = [SynthCamera.default(k1=args.k1, tilt_deg=args.tilt, seed=args.seed + c) for c in range(args.cameras)]
    err, rel, ms = [], [], []
    warm = True
    for s in range(args.scenes):
        cam = cams[s % len(cams)]
        scene = generate_scene(SynthSceneSpec(cam, n_fish=args.fish, seed=args.seed * 1000 + s))
        model = cam.camera_model()
        for r in scene.truth:
            mask = scene.masks[r.fish_id]
            if warm:
                measure_mask(mask, model, endpoint_rule=args.rule)
                warm = False
            t0 = time.perf_counter()
            est = measure_mask(mask, model, endpoint_rule=args.rule).length_mm
            ms.append(1000 * (time.perf_counter() - t0))
            err.append(est - r.length_mm_true)
            rel.append(abs(est - r.length_mm_true) / r.length_mm_true)
    err = np.array(err)
    print(f"fish          {len(err)}")
    print(f"MAE           {np.abs(err).mean() / 10:.4f} cm")
    print(f"MAPE          {100 * np.mean(rel):.4f} %")
    print(f"mean error    {err.mean() / 10:+.4f} cm")
    print(f"time          {np.mean(ms):.1f} ms mean, {np.percentile(ms, 95):.1f} ms p95")


if __name__ == "__main__":
    main()
