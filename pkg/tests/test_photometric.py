import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvnad import mvnt
from mvnad.core import Rng
from mvnad.photometric import (
    LightRig,
    NormalMap,
    RigError,
    SolveOptions,
    angular_error,
    decode_normal_map,
    encode_normal_map,
    format_light_rig,
    parse_light_rig,
    render_lambertian,
    render_stack,
    solve_normals,
    standard_rig,
)

S2 = math.sqrt(2.0)
SYM_RIG = LightRig(np.array([[1, 0, 1], [-1, 0, 1], [0, 1, 1]]) / S2)


def pixel_stack(values):
    return np.asarray(values, dtype=float).reshape(-1, 1, 1)


def random_unit_normals(rng, n, min_z=0.3):
    out = []
    while len(out) < n:
        v = rng.gaussian_array(3)
        v /= np.linalg.norm(v)
        if v[2] > min_z:
            out.append(v)
    return np.array(out)


def random_rig(rng, k, min_z=0.4):
    while True:
        d = random_unit_normals(rng, k, min_z)
        if np.linalg.cond(d.T @ d) < 50:
            return LightRig(d)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.gaussian_array((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def test_symmetric_rig_flat_normal():
    nm, alb, res = solve_normals(SYM_RIG, pixel_stack([1 / S2] * 3))
    np.testing.assert_allclose(nm.normals[0, 0], [0, 0, 1], atol=1e-12)
    assert alb.albedo[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert res[0, 0] < 1e-12


def test_doubled_intensity_scales_albedo():
    nm, alb, _ = solve_normals(SYM_RIG, pixel_stack([S2] * 3))
    np.testing.assert_allclose(nm.normals[0, 0], [0, 0, 1], atol=1e-12)
    assert alb.albedo[0, 0] == pytest.approx(2.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_forward_model_round_trip(seed):
    rng = Rng(seed, 3)
    rig = random_rig(rng, 6)
    n = random_unit_normals(rng, 40, 0.3)
    # keep only normals lit by every light (no clamped observations)
    n = n[np.all(n @ rig.directions.T > 0.05, axis=1)]
    rho = 0.2 + 1.8 * rng.uniform_array(len(n))
    stack = (rho[:, None] * (n @ rig.directions.T)).T.reshape(6, 1, -1)
    nm, alb, _ = solve_normals(rig, stack)
    err = angular_error(nm.normals[0], n)
    assert err.max() < 1e-9
    assert np.abs(alb.albedo[0] - rho).max() < 1e-10


def test_rank_deficient_rig_named_in_error():
    coplanar = np.array([[1, 0, 0], [0, 1, 0], [S2 / 2, S2 / 2, 0]])
    rig = LightRig(coplanar, name="flatrig")
    with pytest.raises(RigError, match="flatrig"):
        solve_normals(rig, np.ones((3, 2, 2)))


def test_shape_and_input_errors():
    with pytest.raises(ValueError):
        solve_normals(SYM_RIG, np.ones((4, 2, 2)))
    with pytest.raises(ValueError):
        solve_normals(SYM_RIG, np.ones((3, 2, 2)), SolveOptions(shadow_trim=1))
    with pytest.raises(ValueError):
        solve_normals(SYM_RIG, -np.ones((3, 2, 2)))
    with pytest.raises(RigError):
        LightRig(np.array([[1.0, 0, 0], [0, 1.0, 0]]))
    with pytest.raises(RigError):
        LightRig(np.array([[1.0, 0, 0.1], [0, 1.0, 0], [0, 0, 1.0]]))


def test_dark_pixels_are_invalid():
    nm, alb, _ = solve_normals(SYM_RIG, np.zeros((3, 2, 2)))
    assert not nm.valid.any()
    assert np.all(nm.normals == 0) and np.all(alb.albedo == 0)


def test_shadow_trim_removes_clamped_observation():
    rig = standard_rig(6)
    n = np.array([0.75, 0.0, 0.66])
    n /= np.linalg.norm(n)
    raw = rig.directions @ n
    assert (raw < 0).sum() == 1  # exactly one light is behind the surface
    stack = np.maximum(raw, 0.0).reshape(6, 1, 1)
    plain, _, _ = solve_normals(rig, stack)
    trimmed, _, _ = solve_normals(rig, stack, SolveOptions(shadow_trim=1))
    assert angular_error(plain.normals[0, 0], n) > 1e-3
    assert angular_error(trimmed.normals[0, 0], n) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
def test_scale_equivariance(seed, c):
    rng = Rng(seed)
    rig = random_rig(rng, 5)
    stack = rng.uniform_array((5, 3, 3)) + 0.1
    n1, a1, _ = solve_normals(rig, stack)
    n2, a2, _ = solve_normals(rig, c * stack)
    np.testing.assert_allclose(n2.normals, n1.normals, atol=1e-12)
    np.testing.assert_allclose(a2.albedo, c * a1.albedo, rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_least_squares_optimality(seed):
    rng = Rng(seed)
    rig = random_rig(rng, 6)
    obs = rng.uniform_array(6) + 0.05
    nm, alb, res = solve_normals(rig, obs.reshape(6, 1, 1))
    g = nm.normals[0, 0] * alb.albedo[0, 0]
    L = rig.directions
    normal_eq = L.T @ (L @ g - obs)
    assert np.linalg.norm(normal_eq) < 1e-9 * np.linalg.norm(L.T @ obs)
    assert res[0, 0] == pytest.approx(np.linalg.norm(L @ g - obs), abs=1e-12)
    for _ in range(10):
        delta = rng.gaussian_array(3)
        delta *= 1e-3 / np.linalg.norm(delta)
        assert np.linalg.norm(L @ (g + delta) - obs) > res[0, 0]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rotation_consistency(seed):
    rng = Rng(seed)
    rig = random_rig(rng, 6)
    n = random_unit_normals(rng, 30, 0.5)
    n = n[np.all(n @ rig.directions.T > 0.01, axis=1)]
    m = len(n)
    rho = 0.5 + rng.uniform_array(m)
    R = random_rotation(rng)
    stack = (rho[:, None] * (n @ rig.directions.T)).T.reshape(6, 1, m)
    base_n, base_a, _ = solve_normals(rig, stack)
    rot_rig = LightRig(rig.directions @ R.T)
    # intensities are unchanged when both lights and normals rotate together
    rot_n, rot_a, _ = solve_normals(rot_rig, stack)
    np.testing.assert_allclose(rot_a.albedo, base_a.albedo, atol=1e-10)
    np.testing.assert_allclose(rot_n.normals[0], base_n.normals[0] @ R.T, atol=1e-9)


def test_render_examples():
    up = NormalMap.all_valid(np.array([[[0.0, 0.0, 1.0]]]))
    assert render_lambertian(up, np.ones((1, 1)), [0, 0, 1])[0, 0] == 1.0
    assert render_lambertian(up, np.ones((1, 1)), [1, 0, 0])[0, 0] == 0.0
    assert render_lambertian(up, np.full((1, 1), 0.5), [0, 0.6, 0.8])[0, 0] == pytest.approx(0.4, abs=1e-15)
    with pytest.raises(ValueError):
        render_lambertian(up, np.ones((1, 1)), [0, 0, 2])
    masked = NormalMap(up.normals, np.zeros((1, 1), bool))
    assert render_lambertian(masked, np.ones((1, 1)), [0, 0, 1])[0, 0] == 0.0


def test_render_then_solve_recovers_map():
    rng = Rng(21)
    rig = standard_rig(6)
    n = random_unit_normals(rng, 64, 0.8).reshape(8, 8, 3)
    nm = NormalMap.all_valid(n)
    rho = 0.3 + rng.uniform_array((8, 8))
    stack = render_stack(nm, rho, rig)
    assert np.all(stack > 0)
    rec, alb, _ = solve_normals(rig, stack)
    assert angular_error(rec.normals, n).max() < 1e-9
    assert np.abs(alb.albedo - rho).max() < 1e-10


def test_light_rig_file_round_trip():
    rig = standard_rig(6)
    back = parse_light_rig(format_light_rig(rig))
    np.testing.assert_allclose(back.directions, rig.directions, atol=1e-15)
    text = "# rig\n0 0 1.0000005  # nearly unit, renormalized\n1 0 0\n0 1 0\n"
    assert np.allclose(parse_light_rig(text).directions[0], [0, 0, 1])
    with pytest.raises(RigError, match=":2:"):
        parse_light_rig("# x\n0 0 1.1\n1 0 0\n0 1 0\n")
    with pytest.raises(RigError):
        parse_light_rig("0 0\n")


def test_normal_codec_round_trip():
    rng = Rng(8)
    n = random_unit_normals(rng, 30, 0.1).reshape(5, 6, 3)
    valid = rng.uniform_array((5, 6)) > 0.3
    n[~valid] = 0
    nm = NormalMap(n, valid)
    back = decode_normal_map(*encode_normal_map(nm))
    assert np.abs(back.normals - nm.normals).max() < 1e-6
    assert np.array_equal(back.valid, valid)


def test_normal_codec_all_invalid_and_truncation():
    nm = NormalMap(np.zeros((3, 4, 3)), np.zeros((3, 4), bool))
    nv, val = encode_normal_map(nm)
    back = decode_normal_map(nv, val)
    assert np.array_equal(back.normals, nm.normals) and np.array_equal(back.valid, nm.valid)
    with pytest.raises(mvnt.MVNTError):
        decode_normal_map(nv[:-3], val)
