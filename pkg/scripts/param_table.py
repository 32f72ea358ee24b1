#!/usr/bin/env python3
"""Per-stage parameter breakdown of every variant, next to the published totals."""
from mambaout_rs import VARIANTS, ModelConfig, build_model, describe

PUBLISHED_M = {"femto": 6.1, "kobe": 8.0, "tiny": 24.0}

rows = []
for name in VARIANTS:
    d = describe(build_model(ModelConfig(variant=name)))
    parts = {r["name"]: r["params"] for r in d["stages"]}
    rows.append((name, parts, d["total_params"]))

cols = ["stem", "stage1", "stage2", "stage3", "stage4", "head"]
print(f"{'variant':8}" + "".join(f"{c:>11}" for c in cols) + f"{'total':>12}{'published':>11}{'diff':>8}")
for name, parts, total in rows:
    pub = PUBLISHED_M[name]
    print(f"{name:8}" + "".join(f"{parts[c]:>11,}" for c in cols)
          + f"{total:>12,}{pub:>10.1f}M{total / 1e6 / pub - 1:>+8.1%}")
