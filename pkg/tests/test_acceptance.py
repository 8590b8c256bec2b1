"""Acceptance suite: one PASS/FAIL line per criterion.

Run directly (``python3 tests/test_acceptance.py``) or through pytest; the
lines are repeated in the pytest terminal summary. The training suites run
the real command-line pipeline (synth, train, eval, report) and take a few
minutes on one core.
"""

from __future__ import annotations

import hashlib
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from mvnad.camera import bundled_calibration, bundled_calibration_text, distort, parse_calibration, serialize_calibration, undistort
from mvnad.cli import main as cli
from mvnad.core.optim import grad_check
from mvnad.core.rng import Rng
from mvnad.cprn.model import cpga_forward, init_params, loss_entropy, loss_recon, model_forward, ucp_forward
from mvnad.metrics import aupro, auroc, f1_max, parse_report_csv
from mvnad.photometric import AlbedoMap, angular_error, render_stack, solve_normals, standard_rig
from mvnad.synth import DefectSpec, SurfaceSpec, apply_defect, gen_albedo, gen_heightfield, height_to_normals

sys.path.insert(0, str(Path(__file__).parent))
from test_camera import GRID  # noqa: E402
from test_cprn import raw, random_instance, t_cpga, t_loss_entropy, t_loss_recon, t_ucp  # noqa: E402
from test_metrics import brute_aupro, pairwise_auroc, sweep_f1  # noqa: E402

RESULTS: dict[int, tuple[bool, str]] = {}


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = (ok, detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}", flush=True)
    assert ok, detail


def summary_lines() -> list[str]:
    return [f"criterion {n}: {'PASS' if ok else 'FAIL'}  {d}" for n, (ok, d) in sorted(RESULTS.items())]


# --- 1: photometric stereo -------------------------------------------------------------


def test_c1_photometric_stereo():
    rig = standard_rig(6)
    clean, noisy, worst_t = [], [], 0.0
    for s in range(100):
        spec = SurfaceSpec(height=256, width=256, base_roughness=3.0, category_seed=s)
        rng = Rng(s, 0xC1)
        h, alb = gen_heightfield(spec, s), gen_albedo(spec, s)
        d = DefectSpec("dent", 0, center=(40 + 176 * rng.uniform(), 40 + 176 * rng.uniform()),
                       radius=8 + 8 * rng.uniform(), magnitude=2.0)
        h, alb, _ = apply_defect(h, alb, d)
        nm = height_to_normals(h, 1.0)
        stack = render_stack(nm, AlbedoMap(alb.mean(axis=-1)), rig)
        t0 = time.perf_counter()
        est, _, _ = solve_normals(rig, stack)
        worst_t = max(worst_t, time.perf_counter() - t0)
        clean.append(np.degrees(angular_error(est.normals, nm.normals)[est.valid]).mean())
        noise = 1.0 + 0.01 * rng.gaussian_array(stack.shape)
        est_n, _, _ = solve_normals(rig, np.maximum(stack * noise, 0.0))
        noisy.append(np.degrees(angular_error(est_n.normals, nm.normals)[est_n.valid]).mean())
    ok = max(clean) < 0.05 and max(noisy) < 2.0 and worst_t < 1.0
    record(1, ok, f"worst per-surface mean error: noise-free {max(clean):.2e} deg, 1% noise {max(noisy):.3f} deg; "
                  f"slowest solve {worst_t * 1e3:.1f} ms (256x256, 100 surfaces)")


# --- 2-4: numeric oracles -------------------------------------------------------------------


def test_c2_gradient_check():
    from dataclasses import replace

    t0 = time.perf_counter()
    worst = 0.0
    n = 24
    for seed in range(n):
        rng = Rng(seed, 99)
        mode = ["rgb_nv", "rgb_only", "nv_only", "naive_concat"][seed % 4]
        cfg, _, feats = random_instance(seed, tied=seed % 3 == 0, residual=["skip", "prototype"][seed % 2])
        cfg = replace(cfg, modality_mode=mode, lambda_p=0.1 + rng.uniform())
        ps = init_params(cfg, feats["rgb"][0].shape[1], len(feats["rgb"]))
        worst = max(worst, grad_check(lambda: model_forward(ps, cfg, feats).loss_total, list(ps.values()),
                                      max_coords=4, rng=rng))
    dt = time.perf_counter() - t0
    record(2, worst < 1e-4 and dt < 60, f"{n} micro-models, max relative error {worst:.2e}, {dt:.1f} s")


def test_c3_transcription():
    worst = {"ucp": 0.0, "cpga": 0.0, "loss_recon": 0.0, "loss_entropy": 0.0}
    for seed in range(100):
        cfg, ps, feats = random_instance(seed, tied=seed % 2 == 1)
        got, _ = ucp_forward(ps.scoped("bank"), feats["rgb"][-1], feats["nv"][-1], cfg.heads, cfg.tied_branches)
        worst["ucp"] = max(worst["ucp"], np.abs(got.data - t_ucp(ps, feats["rgb"][-1], feats["nv"][-1], cfg.heads,
                                                                   cfg.tied_branches)).max())
        p = Rng(seed, 77).gaussian_array((cfg.prototypes, feats["rgb"][0].shape[1]))
        for residual in ("prototype", "skip"):
            got = cpga_forward(feats["rgb"][0], p, ps.scoped("dec.rgb.0"), cfg.heads, residual)
            want, _ = t_cpga(feats["rgb"][0], p, raw(ps, "dec.rgb.0.attn"), raw(ps, "dec.rgb.0.ffn"), cfg.heads, residual)
            worst["cpga"] = max(worst["cpga"], np.abs(got.data - want).max())
        rng = Rng(seed, 55)
        tg = [rng.gaussian_array(feats["rgb"][0].shape) for _ in feats["rgb"]]
        rc = [rng.gaussian_array(feats["rgb"][0].shape) for _ in feats["rgb"]]
        worst["loss_recon"] = max(worst["loss_recon"], abs(loss_recon(tg, rc).item() - t_loss_recon(tg, rc)))
        q = rng.uniform_array(cfg.prototypes)
        q /= q.sum()
        worst["loss_entropy"] = max(worst["loss_entropy"], abs(loss_entropy(q, 1e-8).item() - t_loss_entropy(q, 1e-8)))
    ok = max(worst.values()) <= 1e-10
    record(3, ok, "max abs deviation over 100 instances: " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


def test_c4_metric_oracles():
    rng = Rng(4040)
    e_auc = 0.0
    for _ in range(1000):
        n = 2 + rng.randint(60)
        s = [float(rng.randint(10)) for _ in range(n)]
        y = [rng.randint(2) for _ in range(n)]
        y[0], y[1] = 0, 1
        e_auc = max(e_auc, abs(auroc(s, y) - pairwise_auroc(s, y)))
    e_pro = 0.0
    for i in range(100):
        maps, masks = [], []
        for _ in range(1 + i % 3):
            masks.append(rng.uniform_array((16, 16)) > 0.75)
            maps.append(np.round(rng.uniform_array((16, 16)) * 20) / 20 + 0.3 * masks[-1])
        if not any(m.any() for m in masks):
            masks[0][3, 3] = True
        e_pro = max(e_pro, abs(aupro(maps, masks, 0.3) - brute_aupro(maps, masks, 0.3)))
    f1_exact = True
    for _ in range(300):
        n = 2 + rng.randint(40)
        s = [float(rng.randint(8)) for _ in range(n)]
        y = [rng.randint(2) for _ in range(n)]
        y[0], y[1] = 0, 1
        f1_exact &= f1_max(s, y) == sweep_f1(s, y)
    ok = e_auc <= 1e-12 and e_pro <= 1e-9 and f1_exact
    record(4, ok, f"auroc dev {e_auc:.1e} (1000 tied instances), aupro dev {e_pro:.1e} (100 16x16), "
                  f"f1_max exact: {f1_exact}")


# --- 5-7: trend experiments through the CLI -----------------------------------------------------


def run_suite(root: Path, seed: int, dataset: str, ablations: list[str]) -> dict[str, object]:
    """synth once, then train + eval one run directory per ablation."""
    base = (f"run.seed = {seed}\ndataset.root = {root / 'data'}\n"
            "dataset.train_normal = 200\ndataset.test_normal = 50\ndataset.test_anomalous = 50\n" + dataset)
    cfg0 = root / "synth.cfg"
    cfg0.write_text(base)
    assert cli(["--config", str(cfg0), "synth"]) == 0
    reports = {}
    for ab in ablations:
        cfg = root / f"{ab}.cfg"
        cfg.write_text(base + f"run.ablation = {ab}\n")
        out = root / ab
        assert cli(["--config", str(cfg), "train", "--out", str(out)]) == 0
        assert cli(["--config", str(cfg), "eval", "--out", str(out)]) == 0
        reports[ab] = parse_report_csv((out / "report.csv").read_text())
    return reports


@pytest.mark.slow
def test_c5_modality_gap(tmp_path):
    t0 = time.perf_counter()
    r = run_suite(tmp_path, 5, "dataset.defect_mix = dent:1.0\n", ["full", "rgb_only", "nv_only"])
    dt = time.perf_counter() - t0
    a = {k: v.get("mean", "all").i_auroc for k, v in r.items()}
    ok = a["full"] >= 0.90 and a["full"] >= a["rgb_only"] + 0.15 and a["nv_only"] > a["rgb_only"] and dt < 600
    record(5, ok, f"dent-only I-AUROC full {a['full']:.3f}, rgb_only {a['rgb_only']:.3f}, "
                  f"nv_only {a['nv_only']:.3f}; total {dt:.0f} s")


@pytest.mark.slow
def test_c6_fusion_ordering(tmp_path, capsys):
    order = ["rgb_only", "nv_only", "naive_concat", "ucp_no_lp", "full"]
    r = run_suite(tmp_path, 6, "dataset.defect_mix = dent:0.5,stain:0.5\n", order)
    a = {k: v.get("mean", "all").i_auroc for k, v in r.items()}
    capsys.readouterr()
    assert cli(["--out", str(tmp_path / "table"), "report", *[str(tmp_path / k) for k in reversed(order)]]) == 0
    table = capsys.readouterr().out
    with capsys.disabled():
        print("\n" + table)
    rows = table.splitlines()[2:]
    ok = (a["full"] >= a["naive_concat"] - 0.01 and a["full"] >= a["rgb_only"] and a["full"] >= a["nv_only"]
          and len(rows) == 5)
    record(6, ok, "dent+stain I-AUROC " + ", ".join(f"{k} {a[k]:.3f}" for k in order) + "; 5-row report written")


@pytest.mark.slow
def test_c7_side_wall(tmp_path):
    r = run_suite(tmp_path, 6, "dataset.defect_mix = dent:0.5,scratch:0.5\ndataset.defect_views = 2\n", ["full"])
    rep = r["full"]
    mx, top, pro2 = rep.get("mean", "max").i_auroc, rep.get("mean", "0").i_auroc, rep.get("mean", "2").p_aupro
    ok = mx >= top + 0.2 and pro2 >= 0.6
    record(7, ok, f"side-wall suite: max-over-views I-AUROC {mx:.3f}, top-view-only {top:.3f}, "
                  f"view-2 P-AUPRO {pro2:.3f}")


# --- 8: calibration -----------------------------------------------------------------------------


def test_c8_calibration():
    fx = bundled_calibration(1).intrinsics[0, 0]
    rt, worst = True, 0.0
    for cam in (1, 2, 3, 4):
        c = parse_calibration(bundled_calibration_text(cam))
        s1 = serialize_calibration(c)
        back = parse_calibration(s1)
        rt &= back.field_equal(c) and serialize_calibration(back) == s1
        for x in GRID:
            for y in GRID:
                u = undistort(distort((x, y), c.distortion), c.distortion)
                worst = max(worst, abs(u[0] - x), abs(u[1] - y))
    ok = fx == 1.9426147574516781e4 and rt and worst < 1e-10
    record(8, ok, f"4 files parse; camera 1 fx = {float(fx)!r}; round trip {rt}; undistort(distort) max dev {worst:.1e}")


# --- 9: determinism ---------------------------------------------------------------------------------


def _tree(root: Path) -> dict[str, str]:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_c9_determinism(tmp_path):
    same = {}
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        cfg = d / "c.cfg"
        cfg.write_text(f"run.seed = 9\ndataset.root = {d / 'data'}\ndataset.train_normal = 4\n"
                       "dataset.test_normal = 2\ndataset.test_anomalous = 2\ntrain.steps = 10\n")
        assert cli(["--config", str(cfg), "synth"]) == 0
        assert cli(["--config", str(cfg), "train", "--out", str(d / "run")]) == 0
        assert cli(["--config", str(cfg), "eval", "--out", str(d / "eval"), "--checkpoints", str(d / "run"),
                    "--save-maps"]) == 0
        same[run] = {k: _tree(d / k) for k in ("data", "run", "eval")}
    checks = {k: same["a"][k] == same["b"][k] for k in ("data", "run", "eval")}
    names = {"data": "synth", "run": "train", "eval": "eval"}
    record(9, all(checks.values()), "byte-identical across two runs: "
           + ", ".join(f"{names[k]} {v}" for k, v in checks.items()))


if __name__ == "__main__":
    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    print("\n".join(summary_lines()))
    sys.exit(code)
