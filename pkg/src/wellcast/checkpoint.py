"""Binary checkpoint format for predictor weights and optimiser state.

Layout (little-endian)::

    b"WCKP" | u32 version | u32 header_len | header JSON (utf-8)
    u32 n | n x {u32 name_len | name | u8 dtype | u32 rank | u32 dims[rank] | f64 data}   parameters
    u32 n | n x {same}                                                            optimiser state

The header JSON carries the model config, iteration counter and the scalar
Adam hyper-parameters; it is written with sorted keys so identical models
produce identical bytes.
"""

from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadCheckpoint
from .numeric import AdamState, Tensor
from .predictor import ModelConfig, PredictorModel

MAGIC = b"WCKP"
VERSION = 1
DTYPE_F64 = 1


@dataclass
class Checkpoint:
    model: PredictorModel
    optimizer: AdamState
    iteration: int


def _write_table(buf: io.BytesIO, entries: list[tuple[str, np.ndarray]]) -> None:
    buf.write(struct.pack("<I", len(entries)))
    for name, arr in entries:
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BI", DTYPE_F64, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise BadCheckpoint("checkpoint truncated")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def table(self) -> dict[str, np.ndarray]:
        (count,) = self.unpack("<I")
        out = {}
        for _ in range(count):
            (name_len,) = self.unpack("<I")
            name = self.take(name_len).decode("utf-8")
            dtype, rank = self.unpack("<BI")
            if dtype != DTYPE_F64:
                raise BadCheckpoint(f"unsupported dtype code {dtype} for {name}")
            dims = self.unpack(f"<{rank}I") if rank else ()
            n = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64).reshape(dims)
            out[name] = data
        return out


def checkpoint_bytes(model: PredictorModel, optimizer: AdamState, iteration: int) -> bytes:
    header = {
        "config": model.config.to_dict(),
        "iteration": int(iteration),
        "optimizer": {
            "learning_rate": optimizer.learning_rate,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "epsilon": optimizer.epsilon,
            "step": int(optimizer.step),
        },
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(raw)))
    buf.write(raw)
    names = list(model.params)
    _write_table(buf, [(n, t.data) for n, t in model.params.items()])
    opt_entries = []
    if optimizer.first_moment:
        opt_entries += [(f"m.{n}", m) for n, m in zip(names, optimizer.first_moment)]
        opt_entries += [(f"v.{n}", v) for n, v in zip(names, optimizer.second_moment)]
    _write_table(buf, opt_entries)
    return buf.getvalue()


def save_checkpoint(path: str | os.PathLike, model: PredictorModel, optimizer: AdamState, iteration: int) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(model, optimizer, iteration))
    os.replace(tmp, path)


def parse_checkpoint(blob: bytes) -> Checkpoint:
    r = _Reader(blob)
    if r.take(4) != MAGIC:
        raise BadCheckpoint("not a checkpoint (bad magic)")
    version, header_len = r.unpack("<II")
    if version != VERSION:
        raise BadCheckpoint(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(r.take(header_len).decode("utf-8"))
        config = ModelConfig(**header["config"])
        opt = header["optimizer"]
        iteration = int(header["iteration"])
    except (ValueError, KeyError, TypeError) as exc:
        raise BadCheckpoint(f"malformed checkpoint header: {exc}") from exc

    params = r.table()
    moments = r.table()
    if r.pos != len(blob):
        raise BadCheckpoint("trailing bytes after optimiser table")

    model = PredictorModel(config, seed=0)
    if set(params) != set(model.params):
        raise BadCheckpoint("parameter names do not match the model config")
    for name, tensor in model.params.items():
        if params[name].shape != tensor.shape:
            raise BadCheckpoint(f"{name}: stored shape {params[name].shape}, expected {tensor.shape}")
        model.params[name] = Tensor(params[name], requires_grad=True)

    state = AdamState(opt["learning_rate"], opt["beta1"], opt["beta2"], opt["epsilon"], int(opt["step"]))
    if moments:
        try:
            state.first_moment = [moments[f"m.{n}"].copy() for n in model.params]
            state.second_moment = [moments[f"v.{n}"].copy() for n in model.params]
        except KeyError as exc:
            raise BadCheckpoint(f"optimiser state missing {exc}") from exc
    return Checkpoint(model, state, iteration)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    return parse_checkpoint(Path(path).read_bytes())
