#!/usr/bin/env python3
"""Run the detector robustness sweep on a synthetic marker dataset.

Generates images with a bright square marker visible in all three
modalities, then evaluates the detector under every modality-failure
combination and the lighting / fog conditions, emitting the five-column
report table per condition.

Without trained detector weights the absolute scores are meaningless; the
script exists to exercise the full evaluation harness (dataset plumbing,
perturbation sweep, report layout) and accepts a trained checkpoint when
one is available.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from gridlander import metrics, perturb, vital
from gridlander.losses import BBox
from gridlander.metrics import EvalSample
from gridlander.persistence import load_vital_checkpoint, write_metrics_json
from gridlander.rng import Rng
from gridlander.vital import MultimodalImage, VitalConfig

MODALITY_SETS = [
    ("lidar only", ("visual", "thermal")),
    ("thermal only", ("visual", "lidar")),
    ("visual only", ("thermal", "lidar")),
    ("lidar+thermal", ("visual",)),
    ("thermal+visual", ("lidar",)),
    ("lidar+visual", ("thermal",)),
    ("all", ()),
]

WEATHER = [
    ("bright +10%", perturb.Perturbation("brightness", delta=0.1)),
    ("bright +50%", perturb.Perturbation("brightness", delta=0.5)),
    ("bright +90%", perturb.Perturbation("brightness", delta=0.9)),
    ("dark -10%", perturb.Perturbation("brightness", delta=-0.1)),
    ("dark -50%", perturb.Perturbation("brightness", delta=-0.5)),
    ("dark -90%", perturb.Perturbation("brightness", delta=-0.9)),
    ("fog 10-50%", perturb.Perturbation("fog", low=0.1, high=0.5, seed=101)),
    ("fog 50-90%", perturb.Perturbation("fog", low=0.5, high=0.9, seed=102)),
    ("fog 90-100%", perturb.Perturbation("fog", low=0.9, high=1.0, seed=103)),
]


def synthetic_sample(rng: Rng):
    """A dim noisy scene with one bright square marker in every modality."""
    planes = (rng.uniform(size=(3, 160, 160)) * 0.25).astype(np.float32)
    side = int(rng.integers(24)) + 16
    x0 = int(rng.integers(160 - side))
    y0 = int(rng.integers(160 - side))
    intensity = np.array([0.9, 0.8, 1.0], dtype=np.float32)  # per modality
    for c in range(3):
        planes[c, y0 : y0 + side, x0 : x0 + side] = intensity[c]
    box = BBox(x0 / 160.0, y0 / 160.0, (x0 + side) / 160.0, (y0 + side) / 160.0)
    return MultimodalImage(np.clip(planes, 0.0, 1.0)), box


def build_dataset(rng: Rng, n: int, negative_fraction: float = 0.15):
    samples = []
    for _ in range(n):
        if rng.uniform() < negative_fraction:
            planes = (rng.uniform(size=(3, 160, 160)) * 0.25).astype(np.float32)
            samples.append((MultimodalImage(planes), None))
        else:
            samples.append(synthetic_sample(rng))
    return samples


def evaluate_condition(weights, dataset, perturbations):
    evals = []
    for img, truth in dataset:
        img_p, truth_p = perturb.apply_all(perturbations, img, truth)
        det = vital.detect(img_p, weights)
        evals.append(EvalSample(det.objectness, det.bbox, truth_p))
    return metrics.metrics_report(evals)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--checkpoint", help="trained detector checkpoint (random otherwise)")
    ap.add_argument("--samples", type=int, default=24)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/detector_robustness")
    args = ap.parse_args()

    if args.checkpoint:
        weights = load_vital_checkpoint(args.checkpoint)
    else:
        weights = vital.init_weights(VitalConfig(), args.seed)
        print("note: random (untrained) weights; scores describe the harness, not accuracy")

    dataset = build_dataset(Rng(args.seed).derive(1), args.samples)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    failure_reports = {}
    for label, disabled in MODALITY_SETS:
        perts = [perturb.Perturbation("disable", modalities=disabled)] if disabled else []
        failure_reports[label] = evaluate_condition(weights, dataset, perts)
    print("modality failure sweep")
    print(metrics.format_metrics_table(failure_reports))

    weather_reports = {}
    for label, pert in WEATHER:
        weather_reports[label] = evaluate_condition(weights, dataset, [pert])
    weather_reports["no restrictions"] = evaluate_condition(weights, dataset, [])
    print("weather restriction sweep")
    print(metrics.format_metrics_table(weather_reports))

    write_metrics_json(out / "modality_failure.json", failure_reports)
    write_metrics_json(out / "weather.json", weather_reports)
    print(f"reports in {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
