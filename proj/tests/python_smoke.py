#!/usr/bin/env python3
"""Smoke checks of the python bindings; run after `pip install -e .`."""
import math
import tempfile

import numpy as np

import partseg

failures = []


def check(cond, label):
    if not cond:
        failures.append(label)


# priors
logits = np.random.default_rng(0).normal(size=(4, 8, 8)).astype(np.float32)
probs = partseg.normalize_segmentation(logits)
check(np.allclose(probs.sum(axis=0), 1.0, atol=1e-5), "normalize_segmentation sums to one")
check(partseg.gmrf_kl(np.zeros((2, 3, 3), np.float32)) == 0.0, "constant map has zero energy")
uniform = np.full((4, 8, 8), 0.25, np.float32)
check(abs(partseg.entropy_reg(uniform) - 64 * math.log(4)) < 1e-3, "uniform entropy endpoint")
check(abs(partseg.gaussian_kl(np.zeros(8, np.float32), np.zeros(8, np.float32))) < 1e-9,
      "standard-normal KL is zero")

# mi helpers
alphas = np.arange(12, dtype=np.float32).reshape(6, 2)
shuffled = partseg.shuffle_marginals(alphas, 7)
check(sorted(map(tuple, shuffled.tolist())) == sorted(map(tuple, alphas.tolist())),
      "shuffle preserves rows")
check(not np.array_equal(shuffled, alphas), "shuffle is never the identity")
z = np.zeros(16, np.float32)
check(abs(partseg.adversary_objective(z, z) - 2 * math.log(0.5)) < 1e-6,
      "adversary objective at zero logits")

# sprites + eval
image, classes = partseg.render_sprite(3, 32, hue_seed=1, pose_seed=2)
check(image.shape == (3, 32, 32) and classes.shape == (32, 32), "sprite shapes")
check(0.0 <= image.min() and image.max() <= 1.0, "sprite range")
check(set(np.unique(classes)) <= {0, 1, 2, 3}, "class ids")
mapping = partseg.calibrate([classes], [classes], num_parts=4, num_classes=3)
check(mapping[1:4] == [1, 2, 3], "calibration recovers the identity relabeling")
per_class, overall = partseg.evaluate_iou([classes], [classes], mapping, num_classes=3)
check(abs(overall - 1.0) < 1e-9, "self-evaluation is perfect")

# training + model round trip
cfg = "\n".join([
    "net.image_size = 16", "net.num_parts = 3", "net.dim_alpha = 8", "net.dim_pi = 8",
    "net.width_multiplier = 0.25", "train.batch_size = 2", "train.total_steps = 4",
    "train.entropy_ramp_start = 1", "train.entropy_ramp_end = 2", "train.seed = 3",
])
trainer = partseg.Trainer(cfg, num_pairs=4)
losses = [trainer.step() for _ in range(3)]
check(trainer.step_count == 3, "trainer counts steps")
check(all(math.isfinite(l["total"]) for l in losses), "losses stay finite")
with tempfile.NamedTemporaryFile(suffix=".ckpt") as f:
    trainer.save(f.name)
    model = partseg.Model(f.name)
    check(model.num_parts == 3 and model.image_size == 16, "model metadata")
    img = np.random.default_rng(1).random((3, 16, 16)).astype(np.float32)
    p = model.infer(img)
    check(p.shape == (3, 16, 16) and np.allclose(p.sum(axis=0), 1.0, atol=1e-5),
          "inference yields a per-pixel simplex")
    check(np.array_equal(p, model.infer(img)), "inference is deterministic")
    out = model.transfer(img, img, [1, 2])
    check(out.shape == (3, 16, 16), "transfer output shape")
    try:
        model.transfer(img, img, [9])
        check(False, "invalid part id must raise")
    except partseg.ConfigError:
        pass

if failures:
    print("python smoke failures:")
    for f in failures:
        print(" -", f)
    raise SystemExit(1)
print("python smoke: all checks passed")
