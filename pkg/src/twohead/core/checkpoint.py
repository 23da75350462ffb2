"""Binary checkpoint codec.

Layout (all integers little-endian u32)::

    b"THAT" | version | descriptor length | descriptor (UTF-8 JSON)
    | record count | records...

Each record is ``name length | name | rank | dims... | float32 data``. The
descriptor holds the architecture, the memory-bank cursor and run metadata;
it carries no timestamps, so identical runs produce identical bytes.
"""
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from ..config.constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from ..config.settings import ArchitectureConfig
from ..utils.helpers import atomic_write_bytes
from .exceptions import CheckpointFormatError
from .membank import MemoryBank
from .model import EncoderParams

_U32 = struct.Struct("<I")
_BANK_RECORD = "bank/vectors"


@dataclass
class Checkpoint:
    params: EncoderParams
    bank: Optional[MemoryBank] = None


def _records(params: EncoderParams, bank: Optional[MemoryBank]) -> List[Tuple[str, np.ndarray]]:
    records = [(f"clean/{k}", v) for k, v in sorted(params.clean.items())]
    records += [(f"robust/{k}", v) for k, v in sorted(params.robust.items())]
    if bank is not None:
        records.append((_BANK_RECORD, bank.negatives()))
    return records


def encode_checkpoint(params: EncoderParams, bank: Optional[MemoryBank] = None) -> bytes:
    descriptor = {
        "arch": params.arch.model_dump(mode="json"),
        "bank": None if bank is None else {"cursor": bank.cursor, "fill": bank.fill},
        "metadata": params.metadata,
    }
    text = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, _U32.pack(CHECKPOINT_VERSION), _U32.pack(len(text)), text]
    records = _records(params, bank)
    parts.append(_U32.pack(len(records)))
    for name, array in records:
        raw = name.encode("utf-8")
        parts += [_U32.pack(len(raw)), raw, _U32.pack(array.ndim)]
        parts += [_U32.pack(d) for d in array.shape]
        parts.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.payload):
            raise CheckpointFormatError("checkpoint is truncated")
        chunk = self.payload[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def decode_checkpoint(payload: bytes) -> Checkpoint:
    reader = _Reader(payload)
    if reader.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("not a checkpoint (bad magic)")
    version = reader.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    try:
        descriptor = json.loads(reader.take(reader.u32()).decode("utf-8"))
        arch = ArchitectureConfig.model_validate(descriptor["arch"])
    except (ValueError, KeyError) as exc:
        raise CheckpointFormatError(f"bad checkpoint descriptor: {exc}") from exc

    tensors: Dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        dims = tuple(reader.u32() for _ in range(reader.u32()))
        count = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(reader.take(4 * count), dtype="<f4").astype(np.float32).reshape(dims)
        tensors[name] = data
    if reader.offset != len(payload):
        raise CheckpointFormatError("trailing bytes after the last record")

    params = EncoderParams(
        arch=arch,
        clean={k[len("clean/"):]: v for k, v in tensors.items() if k.startswith("clean/")},
        robust={k[len("robust/"):]: v for k, v in tensors.items() if k.startswith("robust/")},
        metadata=dict(descriptor.get("metadata") or {}),
    )
    bank = None
    if descriptor.get("bank") is not None:
        if _BANK_RECORD not in tensors:
            raise CheckpointFormatError("descriptor announces a bank but no bank record is present")
        bank = MemoryBank(tensors[_BANK_RECORD], descriptor["bank"]["cursor"], descriptor["bank"]["fill"])
    return Checkpoint(params=params, bank=bank)


def save_checkpoint(path: Union[str, Path], params: EncoderParams,
                    bank: Optional[MemoryBank] = None) -> Path:
    return atomic_write_bytes(path, encode_checkpoint(params, bank))


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())
