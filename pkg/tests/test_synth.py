import hashlib
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvnad import mvnt
from mvnad.photometric import angular_error, solve_normals, standard_rig
from mvnad.synth import (
    DatasetManifest,
    DefectSpec,
    SurfaceSpec,
    apply_defect,
    gen_heightfield,
    generate_dataset,
    height_to_normals,
    load_view,
    read_manifest_index,
    render_sample,
)

SPEC = SurfaceSpec(category_seed=7)


def test_flat_and_deterministic_heightfield():
    assert np.all(gen_heightfield(SurfaceSpec(base_roughness=0.0), 3) == 0)
    a = gen_heightfield(SPEC, 11)
    b = gen_heightfield(SPEC, 11)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, gen_heightfield(SPEC, 12))


def test_heightfield_amplitude_bound():
    spec = SurfaceSpec(base_roughness=0.3)
    worst = max(np.abs(gen_heightfield(spec, s)).max() for s in range(100))
    assert worst <= 8 * 0.3


def test_invalid_surface_spec():
    with pytest.raises(ValueError):
        SurfaceSpec(height=16)
    with pytest.raises(ValueError):
        SurfaceSpec(base_roughness=-1.0)


def test_normals_flat_and_plane():
    flat = height_to_normals(np.zeros((8, 8)), 1.0)
    assert np.all(flat.normals == [0, 0, 1]) and flat.valid.all()
    a, pitch = 0.3, 0.5
    cols = np.arange(10) * pitch
    h = np.tile(a * cols, (6, 1))
    n = height_to_normals(h, pitch).normals
    np.testing.assert_allclose(n, np.broadcast_to([-a, 0, 1] / np.sqrt(1 + a * a), n.shape), atol=1e-14)


def test_normals_sine_ridge_matches_analytic():
    size = 256
    x = np.arange(size, dtype=float)
    amp, wl = 3.0, 64.0
    h = np.tile(amp * np.sin(2 * np.pi * x / wl), (size, 1))
    dx = amp * 2 * np.pi / wl * np.cos(2 * np.pi * x / wl)
    exact = np.stack([-dx, np.zeros_like(dx), np.ones_like(dx)], -1)
    exact /= np.linalg.norm(exact, axis=-1, keepdims=True)
    n = height_to_normals(h, 1.0).normals
    # borders use one-sided differences and are excluded
    err = angular_error(n[:, 1:-1], np.broadcast_to(exact, (size, size, 3))[:, 1:-1])
    assert err.max() < 1e-3


def test_defect_none_and_dent_albedo():
    h = gen_heightfield(SPEC, 1)
    albedo = np.full((64, 64, 3), 0.5)
    h2, a2, m = apply_defect(h, albedo, DefectSpec("none"))
    assert np.array_equal(h2, h) and np.array_equal(a2, albedo) and not m.any()
    h2, a2, m = apply_defect(h, albedo, DefectSpec("dent", radius=8, magnitude=1.0))
    assert np.array_equal(a2, albedo) and m.any()


def test_dent_mask_matches_level_set():
    r, mag = 8.0, 5.0
    h = np.zeros((64, 64))
    _, _, mask = apply_defect(h, np.ones((64, 64, 3)), DefectSpec("dent", center=(30, 33), radius=r, magnitude=mag))
    sigma = r / 2
    brute = np.zeros_like(mask)
    for i in range(64):
        for j in range(64):
            depth = mag * math.exp(-((i - 30) ** 2 + (j - 33) ** 2) / (2 * sigma * sigma))
            brute[i, j] = depth > 0.1 * mag
    assert np.array_equal(mask, brute)
    assert math.pi * r * r / 4 <= mask.sum() <= 4 * math.pi * r * r


def test_stain_is_appearance_only():
    h = gen_heightfield(SPEC, 2)
    albedo = np.full((64, 64, 3), 0.6)
    h2, a2, m = apply_defect(h, albedo, DefectSpec("stain", radius=6, magnitude=0.7))
    assert np.array_equal(h2, h)
    assert m.any() and np.all(a2[m] < albedo[m])


def test_scratch_and_combined():
    h = np.zeros((64, 64))
    albedo = np.full((64, 64, 3), 0.6)
    h2, a2, m = apply_defect(h, albedo, DefectSpec("scratch", length=20, width=2, angle=0.3, magnitude=1.0))
    assert np.array_equal(a2, albedo) and m.any()
    rows, cols = np.nonzero(m)
    # elongated along its axis
    assert np.ptp(cols) > 2 * np.ptp(rows)
    h2, a2, m = apply_defect(h, albedo, DefectSpec("combined", radius=6, magnitude=1.0, albedo_factor=0.7))
    assert not np.array_equal(h2, h) and not np.array_equal(a2, albedo)


def test_footprint_out_of_bounds():
    with pytest.raises(ValueError, match="footprint"):
        apply_defect(np.zeros((64, 64)), np.ones((64, 64, 3)), DefectSpec("dent", center=(3, 3), radius=8))


def test_render_no_defects_is_normal():
    sample, stacks = render_sample(SPEC, [], seed=5)
    assert sample.label == "normal"
    assert all(not v.mask.any() for v in sample.views)
    assert len(stacks) == 5 and stacks[0].shape == (6, 64, 64)


def test_side_view_locality():
    sample, _ = render_sample(SPEC, [DefectSpec("dent", view_index=2, radius=8, magnitude=1.2)], seed=5)
    assert sample.label == "anomalous"
    assert [v.mask.any() for v in sample.views] == [False, False, True, False, False]


def test_conflicting_defects():
    d = DefectSpec("dent", view_index=1)
    with pytest.raises(ValueError, match="conflicting"):
        render_sample(SPEC, [d, DefectSpec("stain", view_index=1, magnitude=0.7)], seed=1)


@pytest.mark.parametrize("seed", range(12))
def test_dent_invisible_in_rgb(seed):
    f = 0.75 + 0.5 * (seed / 11)
    d = DefectSpec("dent", view_index=0, center=(24 + seed, 40 - seed), radius=8 * f, magnitude=1.2 * f)
    dented, _ = render_sample(SPEC, [d], seed, with_stacks=False)
    clean, _ = render_sample(SPEC, [], seed, with_stacks=False)
    a, b = dented.views[0], clean.views[0]
    assert np.abs(a.rgb - b.rgb).max() < 0.02
    ang = np.degrees(angular_error(a.nv.normals, b.nv.normals))
    assert ang.max() > 5 and ang[a.mask].mean() > 5


@pytest.mark.parametrize("seed", range(5))
def test_stain_invisible_in_normals(seed):
    d = DefectSpec("stain", view_index=3, radius=7, magnitude=0.7)
    stained, _ = render_sample(SPEC, [d], seed, with_stacks=False)
    clean, _ = render_sample(SPEC, [], seed, with_stacks=False)
    assert stained.views[3].nv.normals.tobytes() == clean.views[3].nv.normals.tobytes()
    assert np.abs(stained.views[3].rgb - clean.views[3].rgb).max() > 0.05


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ps_round_trip_on_rendered_stack(seed):
    sample, stacks = render_sample(SPEC, [DefectSpec("dent", view_index=1, radius=8, magnitude=1.2)], seed)
    rig = standard_rig()
    for view, stack in zip(sample.views, stacks):
        nm, _, _ = solve_normals(rig, stack)
        assert np.degrees(angular_error(nm.normals, view.nv.normals)).mean() < 0.05


def _small_manifest(**kw):
    base = dict(master_seed=3, categories=("cat",), train_normal=10, test_normal=5, test_anomalous=5,
                height=32, width=32, dent_radius=5.0, stain_radius=4.0)
    base.update(kw)
    return DatasetManifest(**base)


def _tree_hashes(root: Path):
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_generate_dataset_layout_and_determinism(tmp_path):
    m = _small_manifest()
    records = generate_dataset(m, tmp_path / "a")
    generate_dataset(m, tmp_path / "b")
    root = tmp_path / "a"
    assert _tree_hashes(root) == _tree_hashes(tmp_path / "b")
    assert len(list(root.rglob("rgb.mvnt"))) == 100
    assert len(list(root.rglob("nv.mvnt"))) == 100
    masks = list(root.rglob("mask.mvnt"))
    assert len(masks) == 5 and all("test" in p.parts for p in masks)
    m2, recs, _ = read_manifest_index(root)
    assert m2 == m and recs == records
    anomalous = [r for r in recs if r.label == "anomalous"]
    v = load_view(root, anomalous[0], anomalous[0].defect_view)
    assert v.mask.any() and v.rgb.shape == (32, 32, 3) and v.valid.all()
    assert mvnt.load(root / "cat" / "train" / "cat-train-0000" / "view_0" / "nv.mvnt").dtype == np.float32


def test_generate_dataset_refuses_nonempty_dir(tmp_path):
    (tmp_path / "junk").write_text("x")
    with pytest.raises(FileExistsError):
        generate_dataset(_small_manifest(), tmp_path)


def test_dataset_stacks_written(tmp_path):
    generate_dataset(_small_manifest(train_normal=1, test_normal=0, test_anomalous=0, write_stacks=True), tmp_path / "d")
    vd = tmp_path / "d" / "cat" / "train" / "cat-train-0000" / "view_0"
    assert (vd / "lights.txt").exists() and mvnt.load(vd / "stack.mvnt").shape == (6, 32, 32)


def test_defect_mix_statistics():
    from mvnad.synth import plan_samples

    m = _small_manifest(train_normal=0, test_normal=0, test_anomalous=100,
                        defect_mix={"dent": 0.5, "stain": 0.5})
    kinds = [rec.defect_kind for rec, _, _ in plan_samples(m)]
    dents = kinds.count("dent")
    assert abs(dents - 50) <= 3 * math.sqrt(100 * 0.25)


def test_manifest_text_round_trip_and_errors():
    m = _small_manifest(defect_mix={"dent": 0.25, "scratch": 0.75}, defect_views=(2,))
    assert DatasetManifest.from_text(m.to_text()) == m
    with pytest.raises(ValueError):
        _small_manifest(defect_mix={"dent": 0.3}).validate()
    with pytest.raises(ValueError, match="unknown"):
        DatasetManifest.from_mapping({"bogus": "1"})
