"""Single-file model checkpoints: a text manifest followed by MVNT tensors.

Layout::

    b"MVNC" | u32 version | u64 manifest byte length | UTF-8 manifest | MVNT tensors

The manifest is ``key=value`` lines; ``tensor=<name> <d0>x<d1>...`` lines list
the tensors in payload order. Encoder weights are not stored (they derive from
the seed); their hashes are, and are checked on load.
"""

from __future__ import annotations

import io
import struct
from dataclasses import fields
from pathlib import Path

import numpy as np

from mvnad import mvnt
from mvnad.cprn.encoder import EncoderConfig
from mvnad.cprn.model import TrainConfig
from mvnad.cprn.runtime import CprnModel

MAGIC = b"MVNC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(raw: str, default):
    if isinstance(default, bool):
        return raw == "true"
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def _config_lines(prefix: str, cfg) -> list[str]:
    return [f"{prefix}.{f.name}={_fmt(getattr(cfg, f.name))}" for f in fields(cfg)]


def _config_from(prefix: str, cls, kv: dict[str, str]):
    base = cls()
    vals = {}
    for f in fields(cls):
        key = f"{prefix}.{f.name}"
        if key in kv:
            vals[f.name] = _parse(kv[key], getattr(base, f.name))
    return cls(**vals)


def encode_checkpoint(model: CprnModel, extra: dict[str, str] | None = None) -> bytes:
    lines = ["format=mvnad-checkpoint"]
    lines += _config_lines("encoder", model.encoder_config)
    lines += _config_lines("train", model.config)
    lines += [
        f"image_h={model.image_hw[0]}",
        f"image_w={model.image_hw[1]}",
        f"steps_done={model.steps_done}",
        f"trained={_fmt(model.trained)}",
        f"optim.step={model.optim.step}",
    ]
    for m, h in model.encoder_hashes().items():
        lines.append(f"encoder_hash.{m}={h}")
    for k, v in (extra or {}).items():
        if "\n" in str(v) or "=" in k:
            raise CheckpointError(f"bad extra key/value {k!r}")
        lines.append(f"extra.{k}={v}")
    tensors = []
    for i, (name, p) in enumerate(model.params.items()):
        tensors.append((f"param.{name}", p.data))
        tensors.append((f"adam_m.{name}", model.optim.m[i]))
        tensors.append((f"adam_v.{name}", model.optim.v[i]))
    for name, arr in tensors:
        lines.append(f"tensor={name} {'x'.join(str(d) for d in arr.shape) or 'scalar'}")
    manifest = ("\n".join(lines) + "\n").encode("utf-8")
    out = io.BytesIO()
    out.write(MAGIC + struct.pack("<IQ", VERSION, len(manifest)))
    out.write(manifest)
    for _, arr in tensors:
        mvnt.write_to(out, np.asarray(arr, dtype=np.float64))
    return out.getvalue()


def decode_checkpoint(data: bytes) -> tuple[CprnModel, dict[str, str]]:
    if len(data) < 16 or data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, mlen = struct.unpack("<IQ", data[4:16])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if 16 + mlen > len(data):
        raise CheckpointError("truncated checkpoint manifest")
    kv: dict[str, str] = {}
    names: list[str] = []
    for line in data[16 : 16 + mlen].decode("utf-8").splitlines():
        key, _, value = line.partition("=")
        if key == "tensor":
            names.append(value.split(" ", 1)[0])
        else:
            kv[key] = value
    if kv.get("format") != "mvnad-checkpoint":
        raise CheckpointError("manifest is missing the format line")
    enc = _config_from("encoder", EncoderConfig, kv)
    cfg = _config_from("train", TrainConfig, kv)
    model = CprnModel(enc, cfg, (int(kv["image_h"]), int(kv["image_w"])))
    for m, h in model.encoder_hashes().items():
        if kv.get(f"encoder_hash.{m}") != h:
            raise CheckpointError(f"{m} encoder weights differ from the checkpoint's frozen encoder")
    stream = io.BytesIO(data[16 + mlen :])
    loaded = {}
    for name in names:
        try:
            loaded[name] = mvnt.read_from(stream)
        except mvnt.MVNTError as exc:
            raise CheckpointError(f"tensor {name}: {exc}") from None
    if stream.read(1):
        raise CheckpointError("trailing bytes after the last tensor")
    for i, (name, p) in enumerate(model.params.items()):
        for prefix, target in (("param", p.data), ("adam_m", model.optim.m[i]), ("adam_v", model.optim.v[i])):
            arr = loaded.get(f"{prefix}.{name}")
            if arr is None or arr.shape != target.shape:
                raise CheckpointError(f"missing or misshapen tensor {prefix}.{name}")
            target[...] = arr
    model.steps_done = int(kv["steps_done"])
    model.trained = kv["trained"] == "true"
    model.optim.step = int(kv["optim.step"])
    extra = {k[6:]: v for k, v in kv.items() if k.startswith("extra.")}
    return model, extra


def save_checkpoint(model: CprnModel, path: str | Path, extra: dict[str, str] | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(model, extra))


def load_checkpoint(path: str | Path) -> tuple[CprnModel, dict[str, str]]:
    try:
        return decode_checkpoint(Path(path).read_bytes())
    except CheckpointError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
