"""Acceptance criteria 1-10; each prints one PASS/FAIL line."""
import json
import time

import numpy as np
import pytest

from mambaout_rs import VARIANTS, ModelConfig, build_model, count_params, describe
from mambaout_rs.blocks import FgbCfg, FourierGateBlock, GatedCNNBlock, GatedCnnBlockCfg
from mambaout_rs.config import RunConfig, TrainConfig
from mambaout_rs.data import DatasetManifest, Sample, SynthSpec, synth_arrays
from mambaout_rs.spectral import FourierFilterGate, irfft2, rfft2
from mambaout_rs.tensor import Tensor
from mambaout_rs.training import ablation_run, evaluate, fit, load_checkpoint, predict, save_checkpoint

SIZES = (7, 8, 14, 28, 56)


@pytest.fixture
def report(capsys):
    def _report(n, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n[acceptance {n:2d}] {'PASS' if ok else 'FAIL'}  {title}  {detail}")
        assert ok, f"criterion {n} failed: {detail}"
    return _report


def dft_matrix(n):
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n)


def test_01_fft_oracle(report):
    rng = np.random.default_rng(0)
    worst_fwd = worst_rt = 0.0
    for H in SIZES:
        for W in SIZES:
            x = rng.standard_normal((1, H, W, 2))
            want = np.einsum("uh,bhwc,wk->bcuk", dft_matrix(H), x, dft_matrix(W)[:, :W // 2 + 1]) / np.sqrt(H * W)
            X = rfft2(x)
            worst_fwd = max(worst_fwd, np.abs(X.data - want).max())
            worst_rt = max(worst_rt, np.abs(irfft2(X, H, W) - x).max())
    report(1, "FFT oracle equivalence", worst_fwd <= 1e-10 and worst_rt <= 1e-10,
           f"max |rfft2 - DFT| = {worst_fwd:.2e}, max round-trip = {worst_rt:.2e} over 25 (H,W)")


def test_02_ffg_exactness(report):
    rng = np.random.default_rng(1)
    C, H, W = 4, 8, 7
    g = FourierFilterGate(C, (H, W), rng, np.float64)
    x = Tensor(rng.standard_normal((2, H, W, C)))
    shape = (1, C, H, W // 2 + 1)
    g.mask_override = np.ones(shape)
    e_one = np.abs(g(x).data - x.data).max()
    g.mask_override = np.zeros(shape)
    e_zero = np.abs(g(x).data).max()
    dc = np.zeros(shape)
    dc[..., 0, 0] = 1
    g.mask_override = dc
    e_dc = np.abs(g(x).data - x.data.mean(axis=(1, 2), keepdims=True)).max()
    g.mask_override = None
    g.gate.data[:] = 0
    e_half = np.abs(g(x).data - x.data / 2).max()
    ok = e_one <= 1e-10 and e_zero == 0 and e_dc <= 1e-10 and e_half <= 1e-10
    report(2, "FFG exactness", ok,
           f"ones {e_one:.1e}, zeros {e_zero:.1e}, DC-mean {e_dc:.1e}, w=0 half {e_half:.1e}")


def test_03_gradient_suite(report):
    from mambaout_rs.gradcheck import block_results, primitive_results
    t0 = time.perf_counter()
    res = primitive_results(0) + block_results(0)
    secs = time.perf_counter() - t0
    shapes = {}
    for r in res:
        shapes.setdefault(r.case, set()).add(r.shape)
    bad = [f"{r.case}{r.shape}={r.max_rel_error:.1e}" for r in res if r.max_rel_error > 1e-6]
    required = {"linear", "dwconv2d", "conv2d_s1", "conv2d_s2", "gelu", "sigmoid", "layernorm",
                "global_avg_pool", "add", "mul", "split_concat", "ffg", "softmax_cross_entropy",
                "gated_cnn_block", "ffg_module", "fgb_eval", "fgb_train_droppath", "stem", "downsample", "head"}
    ok = not bad and required <= shapes.keys() and all(len(s) >= 3 for s in shapes.values()) and secs < 120
    worst = max(r.max_rel_error for r in res)
    report(3, "gradient suite", ok, f"{len(res)} checks, {len(shapes)} cases, worst {worst:.1e}, "
                                    f"{secs:.0f}s {'; '.join(bad)}")


def test_04_architecture(report):
    problems = []
    for name, spec in VARIANTS.items():
        d = describe(build_model(ModelConfig(variant=name)))
        if (d["depths"], d["dims"]) != (list(spec.depths), list(spec.dims)):
            problems.append(f"{name} depths/dims")
        if d["stage_kinds"] != ["GatedCNN", "FGB", "FGB", "GatedCNN"]:
            problems.append(f"{name} kinds")
        if d["resolutions"] != [56, 28, 14, 7]:
            problems.append(f"{name} ladder")
    want = {"femto": ((3, 3, 9, 3), (48, 96, 192, 288)), "kobe": ((3, 3, 15, 3), (48, 96, 192, 288)),
            "tiny": ((3, 3, 9, 3), (96, 192, 384, 576))}
    if {k: (v.depths, v.dims) for k, v in VARIANTS.items()} != want:
        problems.append("variant table")
    report(4, "architecture conformance", not problems, ", ".join(problems) or "femto/kobe/tiny exact")


def test_05_param_counts(report, capsys):
    published = {"femto": 6.1, "kobe": 8.0, "tiny": 24.0}
    parts, ok = [], True
    for name, target in published.items():
        m = build_model(ModelConfig(variant=name))
        n = count_params(m)
        rel = n / 1e6 / target - 1
        ok &= abs(rel) <= 0.15
        parts.append(f"{name} {n / 1e6:.3f}M ({rel:+.1%})")
        d = describe(m)
        with capsys.disabled():
            print("\n    " + name + ": " + ", ".join(f"{r['name']}={r['params']}" for r in d["stages"]))
    report(5, "parameter counts within 15%", ok, "; ".join(parts))


def test_06_residual_identity(report):
    rng = np.random.default_rng(2)
    errs = []
    for C, H, W in ((8, 6, 6), (16, 7, 7), (12, 5, 8)):
        x = Tensor(rng.standard_normal((2, H, W, C)))
        blk = GatedCNNBlock(GatedCnnBlockCfg(C), rng, np.float64)
        blk.fc2.weight.data[:] = 0
        blk.fc2.bias.data[:] = 0
        y = blk(x)
        errs.append(np.abs(y.data - x.data).max() if y.shape == x.shape else np.inf)
        fgb = FourierGateBlock(FgbCfg(C, (H, W)), rng, np.float64)
        # the spectral branch has no projection; zeroing its input norm silences it exactly
        fgb.norm1.weight.data[:] = 0
        fgb.norm1.bias.data[:] = 0
        fgb.mlp.fc2.weight.data[:] = 0
        fgb.mlp.fc2.bias.data[:] = 0
        y = fgb(x)
        errs.append(np.abs(y.data - x.data).max() if y.shape == x.shape else np.inf)
    report(6, "residual identity", max(errs) <= 1e-12, f"max error {max(errs):.1e} over 6 blocks")


def test_07_overfit(report):
    spec = SynthSpec(num_classes=4, train_per_class=16, val_per_class=4, test_per_class=0, image_size=32)
    X, y, splits, _ = synth_arrays(spec)
    splits = np.asarray(splits)
    Xt, yt = X[splits == "train"], y[splits == "train"]
    m = build_model(ModelConfig(variant="micro", depths=[1, 1, 1, 1], dims=[16, 16, 32, 32],
                                input_size=32, num_classes=4))
    t0 = time.perf_counter()
    res = fit(m, (Xt, yt), (X[splits == "val"], y[splits == "val"]),
              TrainConfig(epochs=1000, batch_size=16, max_steps=300, eval_every=25))
    acc = float((predict(m, Xt).argmax(axis=1) == yt).mean())
    secs = time.perf_counter() - t0
    report(7, "overfit sanity", len(Xt) == 64 and res.steps <= 300 and acc == 1.0 and secs < 300,
           f"train accuracy {acc:.3f} after {res.steps} steps, {secs:.0f}s")


@pytest.mark.slow
def test_08_fgb_ablation(report, tmp_path):
    cfg = RunConfig(
        model=ModelConfig(variant="femto-micro", depths=[1, 1, 3, 1], dims=[16, 32, 64, 96]),
        train=TrainConfig(epochs=10, batch_size=32),
        synth=SynthSpec(num_classes=4, image_size=64, noise=0.1, train_per_class=128, val_per_class=16,
                        test_per_class=64, seed=0),
        seeds=[0, 1, 2, 3, 4])
    t0 = time.perf_counter()
    r = ablation_run(cfg)
    secs = time.perf_counter() - t0
    (tmp_path / "ablation.json").write_text(json.dumps(r, default=str))
    per = ", ".join(f"s{row['seed']}: {row['with_fgb']['test_macro_f1']:.3f}/{row['without_fgb']['test_macro_f1']:.3f}"
                    for row in r["per_seed"])
    ok = r["mean_with_fgb_f1"] >= r["mean_without_fgb_f1"] and secs < 1800
    report(8, "FGB ablation (with >= without)", ok,
           f"mean macro-F1 with {r['mean_with_fgb_f1']:.4f}, without {r['mean_without_fgb_f1']:.4f} "
           f"[{per}] {secs:.0f}s")


def test_09_determinism(report, tmp_path, capsys):
    from mambaout_rs.cli import main
    data = tmp_path / "data"
    assert main(["-q", "synth", "--out", str(data), "--set", "synth.image_size=32",
                 "--set", "synth.train_per_class=16", "--set", "synth.val_per_class=4",
                 "--set", "synth.test_per_class=4", "--set", "synth.min_freq=2"]) == 0
    args = ["--set", 'model.variant="micro"', "--set", "model.depths=[1,1,1,1]",
            "--set", "model.dims=[8,16,16,24]", "--set", "model.input_size=32",
            "--set", "model.droppath=0.1", "--set", "train.augment.mixup=0.4",
            "--set", f'data.manifest="{data}"', "--set", "train.epochs=3", "--set", "train.batch_size=16",
            "--seed", "11"]
    hist = []
    for run in ("a", "b"):
        assert main(["-q", "train", *args, "--out", str(tmp_path / run)]) == 0
        hist.append([{k: v for k, v in json.loads(line).items() if k != "seconds"}
                     for line in (tmp_path / run / "history.jsonl").read_text().splitlines()])
    capsys.readouterr()
    cfg = ModelConfig(variant="micro", depths=[1, 1, 1, 1], dims=[8, 16, 16, 24], input_size=32, num_classes=4)
    m = build_model(cfg)
    load_checkpoint(tmp_path / "a" / "best.ckpt", m)
    save_checkpoint(tmp_path / "resaved.ckpt", m)
    m2 = build_model(cfg)
    load_checkpoint(tmp_path / "resaved.ckpt", m2)
    a, b = m.state_dict(), m2.state_dict()
    params_equal = all(a[k].tobytes() == b[k].tobytes() for k in a)
    ckpt_equal = (tmp_path / "a" / "last.ckpt").read_bytes() == (tmp_path / "b" / "last.ckpt").read_bytes()
    ok = hist[0] == hist[1] and len(hist[0]) == 3 and params_equal and ckpt_equal
    report(9, "determinism", ok, f"histories equal {hist[0] == hist[1]}, checkpoint files equal {ckpt_equal}, "
                                 f"reload bitwise {params_equal}")


class _Scripted:
    """Stands in for a model: predicts the class encoded in pixel (0,0,0)."""

    def __init__(self):
        self.cfg = ModelConfig(num_classes=2, dtype="float64")

    def __call__(self, x, training=False, rng=None):
        pred = x.data[:, 0, 0, 0].astype(int)
        return Tensor(np.eye(2)[pred] * 4.0)


def test_10_metrics(report, tmp_path):
    from mambaout_rs import mors
    # confusion [[3, 1], [2, 4]]: rows true, columns predicted
    pairs = [(0, 0)] * 3 + [(0, 1)] + [(1, 0)] * 2 + [(1, 1)] * 4
    samples = []
    for i, (t, p) in enumerate(pairs):
        mors.save_tensor(tmp_path / f"{i}.mors", np.full((2, 2, 1), float(p), np.float32))
        samples.append(Sample(f"{i}.mors", t, "test"))
    m = evaluate(_Scripted(), DatasetManifest(str(tmp_path), ["a", "b"], samples), "test")
    ok = (m.confusion.tolist() == [[3, 1], [2, 4]]
          and np.allclose(m.precision, [0.6, 0.8], atol=1e-4)
          and np.allclose(m.recall, [0.75, 0.6667], atol=1e-4)
          and abs(m.macro_f1 - 0.697) < 1e-3 and abs(m.macro_f1 - (2 / 3 + 8 / 11) / 2) < 1e-4)
    report(10, "metrics correctness", ok,
           f"P={np.round(m.precision, 4).tolist()} R={np.round(m.recall, 4).tolist()} macro-F1={m.macro_f1:.4f}")
