"""Calibrated Lambertian photometric stereo.

Per pixel, the scaled normal ``g = rho * n`` solves the normal equations
``(L^T L) g = L^T I`` for the K x 3 light matrix ``L`` and the K observed
intensities ``I``; the normal is ``g / |g|`` and the albedo ``|g|``.
Normals follow the +z-toward-camera convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from mvnad import kernels, mvnt


class RigError(ValueError):
    pass


@dataclass(frozen=True)
class LightRig:
    directions: np.ndarray  # K x 3, unit rows
    name: str = "rig"

    def __post_init__(self):
        d = np.asarray(self.directions, dtype=np.float64)
        if d.ndim != 2 or d.shape[1] != 3 or d.shape[0] < 3:
            raise RigError(f"{self.name}: need K >= 3 light rows of 3 components, got {d.shape}")
        norms = np.linalg.norm(d, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise RigError(f"{self.name}: light directions must be unit vectors (norms {norms})")
        object.__setattr__(self, "directions", d)

    @property
    def k(self) -> int:
        return self.directions.shape[0]


@dataclass
class NormalMap:
    normals: np.ndarray  # H x W x 3
    valid: np.ndarray  # H x W bool

    def __post_init__(self):
        self.normals = np.asarray(self.normals, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.normals.ndim != 3 or self.normals.shape[2] != 3 or self.valid.shape != self.normals.shape[:2]:
            raise ValueError(f"normal map shapes {self.normals.shape} / {self.valid.shape}")

    @classmethod
    def all_valid(cls, normals: np.ndarray) -> "NormalMap":
        normals = np.asarray(normals, dtype=np.float64)
        return cls(normals, np.ones(normals.shape[:2], dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape


@dataclass
class AlbedoMap:
    albedo: np.ndarray  # H x W


@dataclass
class SolveOptions:
    shadow_trim: int = 0
    min_albedo: float = 1e-8
    max_cond: float = 1e8


def standard_rig(k: int = 6, elevation_deg: float = 45.0) -> LightRig:
    """``k`` lights at a common elevation, azimuths evenly spaced from 0."""
    el = math.radians(elevation_deg)
    rows = []
    for i in range(k):
        az = 2.0 * math.pi * i / k
        rows.append((math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)))
    d = np.array(rows)
    return LightRig(d / np.linalg.norm(d, axis=1, keepdims=True), name=f"standard-{k}")


def _check_conditioning(rig: LightRig, opts: SolveOptions) -> None:
    subsets = [np.arange(rig.k)]
    if opts.shadow_trim:
        subsets = [np.delete(np.arange(rig.k), j) for j in range(rig.k)]
    for keep in subsets:
        lt = rig.directions[keep]
        cond = np.linalg.cond(lt.T @ lt)
        if not np.isfinite(cond) or cond > opts.max_cond:
            raise RigError(
                f"light rig {rig.name!r} is rank-deficient: cond(L^T L) = {cond:.3g} > {opts.max_cond:g}"
            )


def solve_normals(
    rig: LightRig, stack: np.ndarray, opts: SolveOptions | None = None
) -> tuple[NormalMap, AlbedoMap, np.ndarray]:
    """Recover normals, albedo and the per-pixel least-squares residual norm.

    ``stack`` is K x H x W. Pixels whose ``|g|`` falls below ``opts.min_albedo``
    are marked invalid with zero normal.
    """
    opts = opts or SolveOptions()
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim != 3 or stack.shape[0] != rig.k:
        raise ValueError(f"intensity stack shape {stack.shape} does not match rig with K={rig.k}")
    if opts.shadow_trim not in (0, 1):
        raise ValueError("shadow_trim must be 0 or 1")
    if opts.shadow_trim and rig.k - 1 < 3:
        raise ValueError("shadow_trim=1 needs K >= 4")
    if not np.all(np.isfinite(stack)) or np.any(stack < 0):
        raise ValueError("intensities must be finite and nonnegative")
    _check_conditioning(rig, opts)

    k, h, w = stack.shape
    g, resid = kernels.ps_solve(rig.directions, stack.reshape(k, h * w), int(opts.shadow_trim))
    rho = np.linalg.norm(g, axis=1)
    valid = rho >= opts.min_albedo
    normals = np.zeros_like(g)
    normals[valid] = g[valid] / rho[valid, None]
    rho = np.where(valid, rho, 0.0)
    return (
        NormalMap(normals.reshape(h, w, 3), valid.reshape(h, w)),
        AlbedoMap(rho.reshape(h, w)),
        resid.reshape(h, w),
    )


def render_lambertian(normals: NormalMap, albedo: AlbedoMap | np.ndarray, light) -> np.ndarray:
    """``rho * max(0, L . n)`` per pixel; invalid pixels render 0."""
    light = np.asarray(light, dtype=np.float64)
    if light.shape != (3,) or abs(np.linalg.norm(light) - 1.0) > 1e-9:
        raise ValueError(f"light must be a unit 3-vector, got {light}")
    rho = albedo.albedo if isinstance(albedo, AlbedoMap) else np.asarray(albedo, dtype=np.float64)
    shade = np.maximum(0.0, normals.normals @ light)
    return np.where(normals.valid, rho * shade, 0.0)


def render_stack(normals: NormalMap, albedo, rig: LightRig) -> np.ndarray:
    return np.stack([render_lambertian(normals, albedo, l) for l in rig.directions])


def angular_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Angle in radians between unit-vector fields (last axis 3)."""
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = np.sum(a * b, axis=-1)
    return np.arctan2(cross, dot)


# --- files ------------------------------------------------------------------


def parse_light_rig(text: str, name: str = "rig") -> LightRig:
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise RigError(f"{name}:{lineno}: expected 3 floats, got {len(parts)}")
        try:
            v = np.array([float(p) for p in parts])
        except ValueError:
            raise RigError(f"{name}:{lineno}: malformed number in {line!r}") from None
        n = np.linalg.norm(v)
        if abs(n - 1.0) > 1e-6:
            raise RigError(f"{name}:{lineno}: light norm {n:.9g} is not within 1e-6 of unit")
        rows.append(v / n)
    return LightRig(np.array(rows).reshape(-1, 3), name=name)


def load_light_rig(path: str | Path) -> LightRig:
    path = Path(path)
    return parse_light_rig(path.read_text(), name=str(path))


def format_light_rig(rig: LightRig) -> str:
    lines = ["# light directions, one unit vector per line"]
    lines += [" ".join(f"{c:.17g}" for c in row) for row in rig.directions]
    return "\n".join(lines) + "\n"


def encode_normal_map(nm: NormalMap) -> tuple[bytes, bytes]:
    """(float32 H x W x 3 normals, uint8 H x W validity) MVNT payloads."""
    normals = np.where(nm.valid[..., None], nm.normals, 0.0).astype(np.float32)
    return mvnt.encode(normals), mvnt.encode(nm.valid.astype(np.uint8))


def decode_normal_map(nv: bytes, valid: bytes) -> NormalMap:
    normals = mvnt.decode(nv)
    flags = mvnt.decode(valid)
    if normals.ndim != 3 or normals.shape[2] != 3 or flags.shape != normals.shape[:2]:
        raise mvnt.MVNTError(f"normal map shape {normals.shape} vs validity {flags.shape}")
    return NormalMap(normals.astype(np.float64), flags.astype(bool))


def save_normal_map(nm: NormalMap, nv_path: str | Path, valid_path: str | Path) -> None:
    nv, valid = encode_normal_map(nm)
    Path(nv_path).write_bytes(nv)
    Path(valid_path).write_bytes(valid)


def load_normal_map(nv_path: str | Path, valid_path: str | Path) -> NormalMap:
    try:
        return decode_normal_map(Path(nv_path).read_bytes(), Path(valid_path).read_bytes())
    except mvnt.MVNTError as exc:
        raise mvnt.MVNTError(f"{nv_path}: {exc}") from None
