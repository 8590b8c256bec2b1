"""Seeded synthetic multi-view samples: 5 views x {RGB, normal map, mask}.

Each view is an independent heightfield with its own albedo texture. Defects
come in four archetypes: ``dent`` and ``scratch`` change height only, ``stain``
changes albedo only, ``combined`` is a dent plus a stain. RGB uses a
uniform-diffuse shading ``albedo * (0.5 + 0.5 * n_z)``, so shallow dents are
nearly invisible in RGB while clearly present in the normal map.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from mvnad import mvnt
from mvnad.core.rng import Rng, mix64
from mvnad.photometric import (
    AlbedoMap,
    LightRig,
    NormalMap,
    format_light_rig,
    render_stack,
    standard_rig,
)

N_VIEWS = 5
DEFECT_KINDS = ("dent", "scratch", "stain", "combined", "none")
N_WAVES = 8


@dataclass(frozen=True)
class SurfaceSpec:
    height: int = 64
    width: int = 64
    base_roughness: float = 0.05  # amplitude of each of the 8 waves, height units
    albedo_palette: tuple[tuple[float, float, float], ...] = (
        (0.72, 0.60, 0.45),
        (0.55, 0.62, 0.70),
        (0.66, 0.66, 0.62),
    )
    pixel_pitch: float = 1.0  # height units per pixel
    category_seed: int = 0
    albedo_variation: float = 0.08  # relative amplitude of the albedo texture

    def __post_init__(self):
        if self.height < 32 or self.width < 32:
            raise ValueError("surface resolution must be at least 32x32")
        if not (math.isfinite(self.base_roughness) and self.base_roughness >= 0):
            raise ValueError("base_roughness must be finite and nonnegative")
        if self.pixel_pitch <= 0:
            raise ValueError("pixel_pitch must be positive")
        if len(self.albedo_palette) != 3:
            raise ValueError("albedo_palette needs 3 RGB colors")


@dataclass(frozen=True)
class DefectSpec:
    kind: str = "none"
    view_index: int = 0
    center: tuple[float, float] = (32.0, 32.0)  # (row, col)
    radius: float = 8.0  # dent / stain radius, pixels
    length: float = 24.0  # scratch length, pixels
    width: float = 2.0  # scratch width, pixels
    angle: float = 0.0  # scratch orientation, radians from the column axis
    magnitude: float = 1.0  # depth in height units; albedo factor for stain
    albedo_factor: float = 0.7  # stain factor used by ``combined``

    def __post_init__(self):
        if self.kind not in DEFECT_KINDS:
            raise ValueError(f"unknown defect kind {self.kind!r}")
        if not 0 <= self.view_index < N_VIEWS:
            raise ValueError(f"view_index {self.view_index} outside 0..{N_VIEWS - 1}")

    def extent(self) -> float:
        """Radius of a disc containing every modified pixel (up to float underflow)."""
        if self.kind == "none":
            return 0.0
        if self.kind == "scratch":
            return 0.75 * self.length + 2.0 * self.width
        if self.kind == "stain":
            return self.radius + 1.0
        return 1.5 * self.radius + 1.0


@dataclass
class ViewData:
    rgb: np.ndarray  # H x W x 3 in [0, 1]
    nv: NormalMap
    mask: np.ndarray  # H x W bool
    height: np.ndarray  # H x W
    albedo: np.ndarray  # H x W x 3
    stack: np.ndarray | None = None  # K x H x W


@dataclass
class MVSample:
    sample_id: str
    views: list[ViewData]
    label: str  # "normal" | "anomalous"
    defect_kind: str = "none"
    defect_view: int = -1

    def __post_init__(self):
        anomalous = any(v.mask.any() for v in self.views)
        if (self.label == "anomalous") != anomalous:
            raise ValueError(f"{self.sample_id}: label {self.label!r} disagrees with masks")


# --- surface synthesis --------------------------------------------------------


def _waves(rng: Rng, h: int, w: int, count: int, min_wl: float, max_wl: float) -> np.ndarray:
    """``count`` unit-amplitude plane waves with wavelength in [min_wl, max_wl] px."""
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    out = np.zeros((count, h, w))
    for i in range(count):
        wl = min_wl + (max_wl - min_wl) * rng.uniform()
        theta = 2.0 * math.pi * rng.uniform()
        phase = 2.0 * math.pi * rng.uniform()
        amp = 0.5 + 0.5 * rng.uniform()
        out[i] = amp * np.sin(2.0 * math.pi * (cols * math.cos(theta) + rows * math.sin(theta)) / wl + phase)
    return out


def gen_heightfield(spec: SurfaceSpec, view_seed: int) -> np.ndarray:
    """Sum of 8 low-frequency waves (wavelength >= W/4), each of amplitude <= base_roughness."""
    if spec.base_roughness == 0:
        return np.zeros((spec.height, spec.width))
    rng = Rng(mix64(spec.category_seed, view_seed), 0x4E1)
    waves = _waves(rng, spec.height, spec.width, N_WAVES, spec.width / 4.0, float(spec.width))
    return spec.base_roughness * waves.sum(axis=0)


def gen_albedo(spec: SurfaceSpec, view_seed: int) -> np.ndarray:
    rng = Rng(mix64(spec.category_seed, view_seed), 0xA1B)
    color = np.array(spec.albedo_palette[rng.randint(3)], dtype=np.float64)
    texture = _waves(rng, spec.height, spec.width, 4, spec.width / 4.0, float(spec.width)).sum(axis=0) / 4.0
    return color[None, None, :] * (1.0 + spec.albedo_variation * texture)[..., None]


def height_to_normals(h: np.ndarray, pixel_pitch: float) -> NormalMap:
    """Normals of a heightfield: n ~ (-dh/dx, -dh/dy, 1), x along columns, y along rows.

    Central differences inside, one-sided at the borders; ``pixel_pitch`` converts
    pixel steps to height units.
    """
    if pixel_pitch <= 0:
        raise ValueError("pixel_pitch must be positive")
    h = np.asarray(h, dtype=np.float64)
    dy, dx = np.gradient(h, pixel_pitch, edge_order=1)
    n = np.stack([-dx, -dy, np.ones_like(h)], axis=-1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    return NormalMap.all_valid(n)


def _smoothstep_disc(dist: np.ndarray, radius: float) -> np.ndarray:
    t = np.clip((radius + 1.0 - dist) / 2.0, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def apply_defect(
    h: np.ndarray, albedo: np.ndarray, d: DefectSpec
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Apply one defect; returns (height', albedo', mask)."""
    hh, ww = h.shape
    if d.kind == "none":
        return h.copy(), albedo.copy(), np.zeros((hh, ww), dtype=bool)
    r0, c0 = d.center
    ext = d.extent()
    if r0 - ext < 0 or c0 - ext < 0 or r0 + ext > hh - 1 or c0 + ext > ww - 1:
        raise ValueError(f"{d.kind} footprint (center {d.center}, extent {ext:.1f}) leaves the {hh}x{ww} grid")
    rows, cols = np.mgrid[0:hh, 0:ww].astype(np.float64)
    dr, dc = rows - r0, cols - c0
    dist = np.hypot(dr, dc)
    h2 = h.copy()
    a2 = albedo.copy()
    geo = d.kind in ("dent", "scratch", "combined")
    if d.kind in ("dent", "combined"):
        sigma = d.radius / 2.0
        h2 = h - d.magnitude * np.exp(-(dist**2) / (2.0 * sigma**2))
    elif d.kind == "scratch":
        u = dc * math.cos(d.angle) + dr * math.sin(d.angle)
        v = -dc * math.sin(d.angle) + dr * math.cos(d.angle)
        su, sv = d.length / 4.0, d.width / 2.0
        h2 = h - d.magnitude * np.exp(-(u**2) / (2 * su**2) - (v**2) / (2 * sv**2))
    if d.kind in ("stain", "combined"):
        factor = d.magnitude if d.kind == "stain" else d.albedo_factor
        s = _smoothstep_disc(dist, d.radius)
        a2 = albedo * (1.0 - (1.0 - factor) * s)[..., None]
    mask = np.zeros((hh, ww), dtype=bool)
    if geo:
        mask |= np.abs(h2 - h) > 0.1 * abs(d.magnitude)
    if d.kind in ("stain", "combined"):
        rel = np.abs(a2 - albedo) / np.maximum(np.abs(albedo), 1e-12)
        mask |= np.any(rel > 0.01, axis=-1)
    return h2, a2, mask


def shade_rgb(albedo: np.ndarray, nv: NormalMap) -> np.ndarray:
    return np.clip(albedo * (0.5 + 0.5 * nv.normals[..., 2])[..., None], 0.0, 1.0)


def view_seed(seed: int, view: int) -> int:
    return mix64(seed, view)


def render_view(
    spec: SurfaceSpec, seed: int, view: int, defect: DefectSpec | None = None, rig: LightRig | None = None
) -> ViewData:
    vs = view_seed(seed, view)
    h = gen_heightfield(spec, vs)
    albedo = gen_albedo(spec, vs)
    d = defect if defect is not None else DefectSpec(kind="none", view_index=view)
    h2, a2, mask = apply_defect(h, albedo, d)
    nv = height_to_normals(h2, spec.pixel_pitch)
    rgb = shade_rgb(a2, nv)
    stack = None
    if rig is not None:
        stack = render_stack(nv, AlbedoMap(a2.mean(axis=-1)), rig)
    return ViewData(rgb=rgb, nv=nv, mask=mask, height=h2, albedo=a2, stack=stack)


def render_sample(
    spec: SurfaceSpec,
    defects: list[DefectSpec],
    seed: int,
    sample_id: str = "sample",
    with_stacks: bool = True,
) -> tuple[MVSample, list[np.ndarray | None]]:
    """Render all 5 views; at most one defect per view."""
    per_view: dict[int, DefectSpec] = {}
    for d in defects:
        if d.kind == "none":
            continue
        if d.view_index in per_view:
            raise ValueError(f"conflicting defects on view {d.view_index}")
        per_view[d.view_index] = d
    rig = standard_rig() if with_stacks else None
    views = [render_view(spec, seed, v, per_view.get(v), rig) for v in range(N_VIEWS)]
    anomalous = any(v.mask.any() for v in views)
    first = next(iter(per_view.values()), None)
    sample = MVSample(
        sample_id=sample_id,
        views=views,
        label="anomalous" if anomalous else "normal",
        defect_kind=first.kind if first else "none",
        defect_view=first.view_index if first else -1,
    )
    return sample, [v.stack for v in views]


# --- dataset manifest -----------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class DatasetManifest:
    name: str = "synthetic"
    master_seed: int = 0
    categories: tuple[str, ...] = ("part",)
    train_normal: int = 10
    test_normal: int = 5
    test_anomalous: int = 5
    defect_mix: dict[str, float] = field(default_factory=lambda: {"dent": 0.5, "stain": 0.5})
    defect_views: tuple[int, ...] = (0, 1, 2, 3, 4)
    height: int = 64
    width: int = 64
    base_roughness: float = 0.05
    pixel_pitch: float = 1.0
    albedo_variation: float = 0.08
    dent_radius: float = 8.0
    dent_magnitude: float = 1.2
    scratch_length: float = 20.0
    scratch_width: float = 2.0
    scratch_magnitude: float = 1.0
    stain_radius: float = 7.0
    stain_factor: float = 0.7
    size_jitter: float = 0.25
    write_stacks: bool = False

    def validate(self) -> None:
        total = sum(self.defect_mix.values())
        if any(k not in DEFECT_KINDS or k == "none" for k in self.defect_mix):
            raise ValueError(f"defect_mix has unknown kinds: {sorted(self.defect_mix)}")
        if any(p < 0 for p in self.defect_mix.values()) or abs(total - 1.0) > 1e-9:
            raise ValueError(f"defect_mix probabilities must be nonnegative and sum to 1 (got {total:g})")
        if not self.defect_views or any(not 0 <= v < N_VIEWS for v in self.defect_views):
            raise ValueError(f"defect_views must be a nonempty subset of 0..{N_VIEWS - 1}")
        if min(self.train_normal, self.test_normal, self.test_anomalous) < 0:
            raise ValueError("sample counts must be nonnegative")
        if not self.categories or any(not c or "-" in c or "/" in c for c in self.categories):
            raise ValueError("category names must be nonempty and contain no '-' or '/'")
        self.surface_spec(self.categories[0])

    def surface_spec(self, category: str) -> SurfaceSpec:
        return SurfaceSpec(
            height=self.height,
            width=self.width,
            base_roughness=self.base_roughness,
            pixel_pitch=self.pixel_pitch,
            category_seed=category_seed(self.master_seed, category),
            albedo_variation=self.albedo_variation,
        )

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, dict):
                v = ",".join(f"{k}:{_fmt(p)}" for k, p in v.items())
            elif isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name}={_fmt(v)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, kv: dict[str, str]) -> "DatasetManifest":
        out = cls()
        known = {f.name: f for f in fields(cls)}
        updates = {}
        for key, raw in kv.items():
            if key not in known:
                raise ValueError(f"unknown dataset key {key!r}")
            default = getattr(out, key)
            updates[key] = _coerce(raw, default, key)
        return replace(out, **updates)

    @classmethod
    def from_text(cls, text: str) -> "DatasetManifest":
        kv = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                break  # start of the record section
            k, v = line.split("=", 1)
            if k.strip() == "records":
                continue
            kv[k.strip()] = v.strip()
        return cls.from_mapping(kv)


def _coerce(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, dict):
            out = {}
            for item in filter(None, (s.strip() for s in raw.split(","))):
                k, p = item.split(":")
                out[k.strip()] = float(p)
            return out
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(s) for s in items)
            return tuple(items)
        return raw
    except ValueError:
        raise ValueError(f"bad value {raw!r} for {key}") from None


def category_seed(master_seed: int, category: str) -> int:
    return mix64(master_seed, zlib.crc32(category.encode()))


SPLIT_CODES = {"train": 1, "test": 2}


def sample_seed(master_seed: int, category: str, split: str, index: int) -> int:
    return mix64(category_seed(master_seed, category), SPLIT_CODES[split], index)


def draw_defect(m: DatasetManifest, rng: Rng) -> DefectSpec:
    """Pick kind, view, size and position for one anomalous sample."""
    u = rng.uniform()
    acc = 0.0
    kinds = list(m.defect_mix)
    kind = kinds[-1]
    for k in kinds:
        acc += m.defect_mix[k]
        if u < acc:
            kind = k
            break
    view = m.defect_views[rng.randint(len(m.defect_views))]

    def jitter(x):
        return x * (1.0 + m.size_jitter * (2.0 * rng.uniform() - 1.0))

    if kind == "stain":
        d = DefectSpec(kind, view, radius=jitter(m.stain_radius), magnitude=m.stain_factor)
    elif kind == "scratch":
        d = DefectSpec(kind, view, length=jitter(m.scratch_length), width=m.scratch_width,
                       angle=math.pi * rng.uniform(), magnitude=jitter(m.scratch_magnitude))
    else:
        # depth scales with radius so the dent slope (and its RGB footprint) stays fixed
        f = jitter(1.0)
        d = DefectSpec(kind, view, radius=m.dent_radius * f, magnitude=m.dent_magnitude * f,
                       albedo_factor=m.stain_factor)
    ext = d.extent()
    lo_r, hi_r = ext, m.height - 1 - ext
    lo_c, hi_c = ext, m.width - 1 - ext
    center = (lo_r + (hi_r - lo_r) * rng.uniform(), lo_c + (hi_c - lo_c) * rng.uniform())
    return replace(d, center=center)


@dataclass
class SampleRecord:
    sample_id: str
    split: str
    label: str
    defect_kind: str
    defect_view: int

    @property
    def category(self) -> str:
        return self.sample_id.rsplit("-", 2)[0]

    @property
    def index(self) -> int:
        return int(self.sample_id.rsplit("-", 1)[1])

    def line(self) -> str:
        return f"{self.sample_id},{self.split},{self.label},{self.defect_kind},{self.defect_view}"


def plan_samples(m: DatasetManifest) -> list[tuple[SampleRecord, list[DefectSpec], int]]:
    """Deterministic list of (record, defects, seed) for the whole dataset."""
    plan = []
    for cat in m.categories:
        layout = [("train", "normal")] * m.train_normal
        layout += [("test", "normal")] * m.test_normal + [("test", "anomalous")] * m.test_anomalous
        counters = {"train": 0, "test": 0}
        for split, label in layout:
            idx = counters[split]
            counters[split] += 1
            sid = f"{cat}-{split}-{idx:04d}"
            seed = sample_seed(m.master_seed, cat, split, idx)
            defects: list[DefectSpec] = []
            if label == "anomalous":
                defects = [draw_defect(m, Rng(seed, 0xDEF))]
            kind = defects[0].kind if defects else "none"
            view = defects[0].view_index if defects else -1
            plan.append((SampleRecord(sid, split, label, kind, view), defects, seed))
    return plan


RECORD_HEADER = "sample_id,split,label,defect_kind,defect_view"


def write_manifest_index(root: Path, m: DatasetManifest, records: list[SampleRecord], extra: dict[str, str] | None = None) -> None:
    lines = [m.to_text().rstrip("\n")]
    for k, v in (extra or {}).items():
        lines.append(f"{k}={v}")
    lines.append(f"records={RECORD_HEADER}")
    lines += [r.line() for r in records]
    (root / "manifest.txt").write_text("\n".join(lines) + "\n")


def read_manifest_index(root: str | Path) -> tuple[DatasetManifest, list[SampleRecord], dict[str, str]]:
    text = (Path(root) / "manifest.txt").read_text()
    header: dict[str, str] = {}
    records = []
    in_records = False
    for raw in text.splitlines():
        if not raw.strip():
            continue
        if not in_records:
            k, v = raw.split("=", 1)
            if k == "records":
                in_records = True
                continue
            header[k] = v
            continue
        sid, split, label, kind, view = raw.split(",")
        records.append(SampleRecord(sid, split, label, kind, int(view)))
    known = {f.name for f in fields(DatasetManifest)}
    manifest = DatasetManifest.from_mapping({k: v for k, v in header.items() if k in known})
    extra = {k: v for k, v in header.items() if k not in known}
    return manifest, records, extra


def sample_dir(root: str | Path, rec: SampleRecord) -> Path:
    return Path(root) / rec.category / rec.split / rec.sample_id


def write_sample(directory: Path, sample: MVSample, rig: LightRig | None) -> None:
    for v, view in enumerate(sample.views):
        vd = directory / f"view_{v}"
        vd.mkdir(parents=True, exist_ok=True)
        mvnt.save(vd / "rgb.mvnt", view.rgb.astype(np.float32))
        mvnt.save(vd / "nv.mvnt", view.nv.normals.astype(np.float32))
        mvnt.save(vd / "nv_valid.mvnt", view.nv.valid.astype(np.uint8))
        if view.mask.any():
            mvnt.save(vd / "mask.mvnt", view.mask.astype(np.uint8))
        if rig is not None and view.stack is not None:
            (vd / "lights.txt").write_text(format_light_rig(rig))
            mvnt.save(vd / "stack.mvnt", view.stack)


def generate_dataset(m: DatasetManifest, out_dir: str | Path, extra_header: dict[str, str] | None = None) -> list[SampleRecord]:
    """Write the whole dataset under ``out_dir``; byte-identical for equal manifests."""
    m.validate()
    root = Path(out_dir)
    if root.exists() and any(root.iterdir()):
        raise FileExistsError(f"output directory {root} exists and is not empty")
    root.mkdir(parents=True, exist_ok=True)
    rig = standard_rig() if m.write_stacks else None
    records = []
    for rec, defects, seed in plan_samples(m):
        spec = m.surface_spec(rec.category)
        sample, _ = render_sample(spec, defects, seed, rec.sample_id, with_stacks=m.write_stacks)
        if sample.label != rec.label:
            raise RuntimeError(f"{rec.sample_id}: defect produced an empty mask")
        write_sample(sample_dir(root, rec), sample, rig)
        records.append(rec)
    write_manifest_index(root, m, records, extra_header)
    return records


@dataclass
class LoadedView:
    rgb: np.ndarray
    nv: np.ndarray
    valid: np.ndarray
    mask: np.ndarray


def load_view(root: str | Path, rec: SampleRecord, view: int) -> LoadedView:
    vd = sample_dir(root, rec) / f"view_{view}"
    rgb = mvnt.load(vd / "rgb.mvnt").astype(np.float64)
    nv = mvnt.load(vd / "nv.mvnt").astype(np.float64)
    valid = mvnt.load(vd / "nv_valid.mvnt").astype(bool)
    mpath = vd / "mask.mvnt"
    mask = mvnt.load(mpath).astype(bool) if mpath.exists() else np.zeros(rgb.shape[:2], dtype=bool)
    return LoadedView(rgb, nv, valid, mask)
