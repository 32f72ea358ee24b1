#!/usr/bin/env python3
"""Memorise 64 synthetic images with the micro backbone; prints accuracy per checkpoint."""
import argparse
import time

import numpy as np

from mambaout_rs.config import TrainConfig
from mambaout_rs.data import SynthSpec, synth_arrays
from mambaout_rs.model import ModelConfig, build_model
from mambaout_rs.training import fit, predict

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--seeds", default="0,1,2")
ap.add_argument("--steps", type=int, default=300)
args = ap.parse_args()

X, y, splits, sigs = synth_arrays(SynthSpec(train_per_class=16, val_per_class=4, test_per_class=0,
                                            image_size=32))
splits = np.asarray(splits)
train, val = (X[splits == "train"], y[splits == "train"]), (X[splits == "val"], y[splits == "val"])
print("class frequencies:", sigs)
for seed in map(int, args.seeds.split(",")):
    model = build_model(ModelConfig(variant="micro", depths=[1, 1, 1, 1], dims=[16, 16, 32, 32],
                                    input_size=32, num_classes=4, seed=seed))
    t0 = time.perf_counter()
    res = fit(model, train, val, TrainConfig(epochs=10_000, batch_size=16, max_steps=args.steps,
                                             eval_every=25, seed=seed))
    acc = (predict(model, train[0]).argmax(axis=1) == train[1]).mean()
    print(f"seed {seed}: train accuracy {acc:.3f}, final loss {res.history[-1]['train_loss']:.4f}, "
          f"{res.steps} steps, {time.perf_counter() - t0:.1f}s")
