"""Camera calibration files and the pinhole + Brown-Conrady geometry they imply.

The text schema is a flat ``key: value`` list; matrices are written as::

    name:
      rows: R
      cols: C
      data:
        - <number>
        ...

Distortion vectors hold 12 entries; the first five are read as
(k1, k2, p1, p2, k3) and the remaining seven must be zero.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np


class CalibrationError(ValueError):
    pass


class DistortionError(ValueError):
    pass


MATRIX_SHAPES = {
    "H_matrix": (3, 3),
    "distortion_matrix": (12, 1),
    "intrinsic_matrix": (3, 3),
    "extrinsic_matrix": (3, 4),
}
INT_KEYS = ("frame_num", "image_width", "image_height", "board_width", "board_height",
            "points_num", "distortion_model", "distortion_level")
FLOAT_KEYS = ("board_dx", "board_dy")
TEXT_KEYS = ("calibration_file_ver", "calibration_time", "calibration_type")
REQUIRED = TEXT_KEYS + ("image_width", "image_height", "board_dx", "board_dy",
                        "distortion_model", "distortion_level") + tuple(MATRIX_SHAPES)

_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
_INT = re.compile(r"^[+-]?\d+$")


def _parse_float(token: str, lineno: int, key: str) -> float:
    if not _NUMBER.match(token):
        raise CalibrationError(f"line {lineno}: malformed number {token!r} in {key}")
    return float(token)


def format_float(x: float) -> str:
    """``d.dddddddddddddddde+XXX``: 16 fraction digits, 3-digit exponent."""
    mant, exp = f"{x:.16e}".split("e")
    sign = exp[0]
    return f"{mant}e{sign}{int(exp[1:]):03d}"


@dataclass
class CameraCalibration:
    file_version: str
    calib_time: str
    calib_type: str
    image_width: int
    image_height: int
    board_dx: float
    board_dy: float
    h_matrix: np.ndarray
    distortion_model: int
    distortion_level: int
    distortion: np.ndarray
    intrinsics: np.ndarray
    extrinsics: np.ndarray
    # every key in file order with its raw scalar text (matrices map to None)
    entries: dict[str, str | None] = field(default_factory=dict)
    # "rows: " vs "rows : " spelling per matrix, kept for faithful re-emission
    matrix_style: dict[str, str] = field(default_factory=dict)

    @property
    def rotation(self) -> np.ndarray:
        return self.extrinsics[:, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.extrinsics[:, 3]

    def field_equal(self, other: "CameraCalibration") -> bool:
        scalars = ("file_version", "calib_time", "calib_type", "image_width", "image_height",
                   "board_dx", "board_dy", "distortion_model", "distortion_level")
        if any(getattr(self, s) != getattr(other, s) for s in scalars):
            return False
        arrays = ("h_matrix", "distortion", "intrinsics", "extrinsics")
        if any(not np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays):
            return False
        return list(self.entries) == list(other.entries)

    def validate(self) -> list[str]:
        """Schema invariants that do not hold; empty when the file is well-formed."""
        problems = []
        k = self.intrinsics
        if not np.array_equal(k[2], [0.0, 0.0, 1.0]):
            problems.append(f"intrinsic_matrix row 3 is {k[2].tolist()}, expected [0, 0, 1]")
        if k[1, 0] != 0.0:
            problems.append("intrinsic_matrix[1][0] must be 0")
        if self.h_matrix[2, 2] != 1.0:
            problems.append(f"H_matrix[2][2] = {self.h_matrix[2, 2]!r}, expected 1")
        if np.any(self.distortion[5:] != 0.0):
            problems.append("distortion_matrix entries 5-11 are nonzero (unsupported model)")
        r = self.rotation
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-6:
            problems.append("extrinsic rotation block is not orthonormal within 1e-6")
        if self.image_width <= 0 or self.image_height <= 0:
            problems.append("image size must be positive")
        return problems


def parse_calibration(text: str) -> CameraCalibration:
    lines = text.splitlines()
    entries: dict[str, str | None] = {}
    matrices: dict[str, np.ndarray] = {}
    style: dict[str, str] = {}
    i = 0
    while i < len(lines):
        lineno = i + 1
        raw = lines[i]
        if not raw.strip():
            i += 1
            continue
        if raw.startswith(" "):
            raise CalibrationError(f"line {lineno}: unexpected indented line {raw.strip()!r}")
        if ":" not in raw:
            raise CalibrationError(f"line {lineno}: expected 'key: value', got {raw!r}")
        key, value = raw.split(":", 1)
        key = key.strip()
        value = value.strip()
        if key in entries:
            raise CalibrationError(f"line {lineno}: duplicate key {key}")
        if value == "" and i + 1 < len(lines) and lines[i + 1].startswith(" "):
            mat, sep, i = _parse_matrix(lines, i + 1, key, lineno)
            matrices[key] = mat
            style[key] = sep
            entries[key] = None
            continue
        entries[key] = value
        i += 1

    for key in REQUIRED:
        if key not in entries:
            raise CalibrationError(f"missing required key {key}")
    for key, shape in MATRIX_SHAPES.items():
        if key not in matrices:
            raise CalibrationError(f"{key} must be a matrix block")
        if matrices[key].shape != shape:
            raise CalibrationError(f"{key}: expected {shape[0]}x{shape[1]}, got {matrices[key].shape}")

    def as_int(key):
        v = entries[key]
        if not _INT.match(v or ""):
            raise CalibrationError(f"line {_line_of(lines, key)}: malformed integer {v!r} for {key}")
        return int(v)

    def as_float(key):
        return _parse_float(entries[key] or "", _line_of(lines, key), key)

    return CameraCalibration(
        file_version=entries["calibration_file_ver"],
        calib_time=entries["calibration_time"],
        calib_type=entries["calibration_type"],
        image_width=as_int("image_width"),
        image_height=as_int("image_height"),
        board_dx=as_float("board_dx"),
        board_dy=as_float("board_dy"),
        h_matrix=matrices["H_matrix"],
        distortion_model=as_int("distortion_model"),
        distortion_level=as_int("distortion_level"),
        distortion=matrices["distortion_matrix"].reshape(12),
        intrinsics=matrices["intrinsic_matrix"],
        extrinsics=matrices["extrinsic_matrix"],
        entries=entries,
        matrix_style=style,
    )


def _line_of(lines: list[str], key: str) -> int:
    for n, raw in enumerate(lines, 1):
        if raw.split(":", 1)[0].strip() == key and not raw.startswith(" "):
            return n
    return 0


def _parse_matrix(lines: list[str], i: int, key: str, key_lineno: int) -> tuple[np.ndarray, str, int]:
    meta: dict[str, str] = {}
    sep = ": "
    while i < len(lines) and lines[i].startswith(" ") and not lines[i].strip().startswith("-"):
        name, _, val = lines[i].strip().partition(":")
        if name.strip() == "rows" and name.endswith(" "):
            sep = " : "
        meta[name.strip()] = val.strip()
        i += 1
        if name.strip() == "data":
            break
    for m in ("rows", "cols", "data"):
        if m not in meta:
            raise CalibrationError(f"line {key_lineno}: {key} is missing '{m}'")
    try:
        rows, ncols = int(meta["rows"]), int(meta["cols"])
    except ValueError:
        raise CalibrationError(f"line {key_lineno}: {key} has non-integer rows/cols") from None
    data = []
    while i < len(lines) and lines[i].strip().startswith("-"):
        token = lines[i].strip()[1:].strip()
        data.append(_parse_float(token, i + 1, key))
        i += 1
    if len(data) != rows * ncols:
        raise CalibrationError(
            f"line {key_lineno}: {key} declares {rows}x{ncols} = {rows * ncols} values but has {len(data)}"
        )
    return np.array(data, dtype=np.float64).reshape(rows, ncols), sep, i


def serialize_calibration(c: CameraCalibration) -> str:
    scalars = {
        "calibration_file_ver": c.file_version,
        "calibration_time": c.calib_time,
        "calibration_type": c.calib_type,
        "image_width": str(c.image_width),
        "image_height": str(c.image_height),
        "board_dx": format_float(c.board_dx),
        "board_dy": format_float(c.board_dy),
        "distortion_model": str(c.distortion_model),
        "distortion_level": str(c.distortion_level),
    }
    matrices = {
        "H_matrix": c.h_matrix,
        "distortion_matrix": c.distortion.reshape(12, 1),
        "intrinsic_matrix": c.intrinsics,
        "extrinsic_matrix": c.extrinsics,
    }
    order = list(c.entries) or []
    for key in list(scalars) + list(matrices):
        if key not in order:
            order.append(key)
    out = []
    for key in order:
        if key in matrices:
            m = np.asarray(matrices[key], dtype=np.float64)
            sep = c.matrix_style.get(key, ": ")
            out.append(f"{key}: ")
            out.append(f"  rows{sep}{m.shape[0]}")
            out.append(f"  cols{sep}{m.shape[1]}")
            out.append("  data: ")
            out.extend(f"    - {format_float(v)}" for v in m.reshape(-1))
        elif key in scalars:
            out.append(f"{key}: {scalars[key]}")
        else:
            out.append(f"{key}: {c.entries[key]}")
    return "\n".join(out) + "\n"


def load_calibration(path: str | Path) -> CameraCalibration:
    path = Path(path)
    try:
        return parse_calibration(path.read_text())
    except CalibrationError as exc:
        raise CalibrationError(f"{path}: {exc}") from None


def bundled_calibration(index: int) -> CameraCalibration:
    """One of the four published camera files (1-based)."""
    return parse_calibration(bundled_calibration_text(index))


def bundled_calibration_text(index: int) -> str:
    return resources.files("mvnad.data").joinpath(f"camera{index}.yml").read_text()


# --- geometry ---------------------------------------------------------------


def _coeffs(coeffs) -> tuple[float, float, float, float, float]:
    c = np.asarray(coeffs, dtype=np.float64).reshape(-1)
    if c.size != 12:
        raise DistortionError(f"expected 12 distortion coefficients, got {c.size}")
    if not np.all(np.isfinite(c)):
        raise DistortionError("distortion coefficients must be finite")
    if np.any(c[5:] != 0.0):
        raise DistortionError("unsupported distortion model: entries 5-11 must be zero")
    k1, k2, p1, p2, k3 = (float(v) for v in c[:5])
    return k1, k2, p1, p2, k3


def distort(pt, coeffs) -> tuple[float, float]:
    k1, k2, p1, p2, k3 = _coeffs(coeffs)
    x, y = float(pt[0]), float(pt[1])
    r2 = x * x + y * y
    radial = 1.0 + k1 * r2 + k2 * r2 * r2 + k3 * r2 * r2 * r2
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return xd, yd


def undistort(pt_d, coeffs, tol: float = 1e-12, max_iter: int = 100) -> tuple[float, float]:
    """Invert :func:`distort` by fixed-point iteration."""
    k1, k2, p1, p2, k3 = _coeffs(coeffs)
    xd, yd = float(pt_d[0]), float(pt_d[1])
    x, y = xd, yd
    for _ in range(max_iter):
        r2 = x * x + y * y
        radial = 1.0 + k1 * r2 + k2 * r2 * r2 + k3 * r2 * r2 * r2
        dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        nx, ny = (xd - dx) / radial, (yd - dy) / radial
        step = max(abs(nx - x), abs(ny - y))
        x, y = nx, ny
        if step < tol:
            return x, y
    fx, fy = distort((x, y), coeffs)
    resid = max(abs(fx - xd), abs(fy - yd))
    raise DistortionError(f"undistort did not converge in {max_iter} iterations (residual {resid:.3g})")


def project_point(c: CameraCalibration, x_world) -> tuple[float, float]:
    xw = np.asarray(x_world, dtype=np.float64).reshape(3)
    xc = c.rotation @ xw + c.translation
    if xc[2] <= 0:
        raise ValueError(f"point {xw.tolist()} is behind the camera (z_cam = {xc[2]:.6g})")
    xd, yd = distort((xc[0] / xc[2], xc[1] / xc[2]), c.distortion)
    pix = c.intrinsics @ np.array([xd, yd, 1.0])
    return float(pix[0] / pix[2]), float(pix[1] / pix[2])


def apply_homography(h, p) -> tuple[float, float]:
    h = np.asarray(h, dtype=np.float64).reshape(3, 3)
    v = np.array([float(p[0]), float(p[1]), 1.0])
    den = h[2] @ v
    if den == 0.0:
        raise ZeroDivisionError("homography maps the point to infinity")
    return float(h[0] @ v / den), float(h[1] @ v / den)


CANONICAL_ORDER = ("calibration_file_ver", "calibration_time", "calibration_type", "image_width",
                   "image_height", "board_dx", "board_dy", "H_matrix", "distortion_model",
                   "distortion_level", "distortion_matrix", "intrinsic_matrix", "extrinsic_matrix")


def make_calibration(
    intrinsics=None, extrinsics=None, distortion=None, h_matrix=None, width: int = 4096, height: int = 3000
) -> CameraCalibration:
    """Minimal calibration object for synthetic use and tests."""
    c = CameraCalibration(
        file_version="3.1",
        calib_time="1970-1-1 0:0:0",
        calib_type="MVP_CALIB_TYPE_NORMAL",
        image_width=width,
        image_height=height,
        board_dx=1.0,
        board_dy=1.0,
        h_matrix=np.eye(3) if h_matrix is None else np.asarray(h_matrix, dtype=np.float64),
        distortion_model=3,
        distortion_level=2,
        distortion=np.zeros(12) if distortion is None else np.asarray(distortion, dtype=np.float64).reshape(12),
        intrinsics=np.eye(3) if intrinsics is None else np.asarray(intrinsics, dtype=np.float64),
        extrinsics=np.hstack([np.eye(3), np.zeros((3, 1))]) if extrinsics is None
        else np.asarray(extrinsics, dtype=np.float64),
    )
    c.entries = dict.fromkeys(CANONICAL_ORDER)
    return c
