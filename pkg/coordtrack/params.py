"""Parameters
===================
Named parameter store with gradient slots, and the binary weights file.

Weights file layout (little-endian): magic ``NLMW``, format version u32,
entry count u32, then per entry: name length u16, UTF-8 name, rank u8,
extents as u64 each, raw float64 payload.
"""
# Copyright (c) 2024, coordtrack developers.
# All rights reserved. Distributed under the MIT License.
import logging
import struct
from pathlib import Path
from typing import BinaryIO
from typing import Dict
from typing import Iterator
from typing import List
from typing import Optional
from typing import Tuple
from typing import Union

import numpy as np

from coordtrack.errors import ContractViolation
from coordtrack.errors import SequenceFormatError
from coordtrack.tensor import Tensor
from coordtrack.tensor import backward

logger = logging.getLogger(__name__)

MAGIC = b"NLMW"
FORMAT_VERSION = 1


class ParamStore:
    """Ordered map of parameter name -> Tensor with one gradient slot each.

    Frozen entries (fixed positional tables) are stored and serialized but
    never receive gradients.
    """

    def __init__(self) -> None:
        self._params: Dict[str, Tensor] = {}
        self._grads: Dict[str, np.ndarray] = {}
        self._frozen: Dict[str, bool] = {}

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise ContractViolation(f"parameter {name!r} already exists")
        tensor = Tensor(value, requires_grad=trainable, name=name)
        self._params[name] = tensor
        self._grads[name] = np.zeros_like(tensor.data)
        self._frozen[name] = not trainable
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise ContractViolation(f"unknown parameter {name!r}") from None

    def __contains__(self, name: object) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def names(self, prefix: str = "", trainable_only: bool = False) -> List[str]:
        return [
            n for n in self._params
            if n.startswith(prefix) and not (trainable_only and self._frozen[n])
        ]

    def is_trainable(self, name: str) -> bool:
        return not self._frozen[name]

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def zero_grad(self) -> None:
        for name, slot in self._grads.items():
            slot.fill(0.0)

    def backward(self, loss: Tensor, scale: float = 1.0) -> None:
        """Accumulate ``scale * d loss / d param`` into the gradient slots."""
        if loss.data.size != 1:
            raise ContractViolation(f"backward() needs a scalar loss, got shape {loss.shape}")
        leaves = backward(loss)
        for name, tensor in self._params.items():
            g = leaves.get(id(tensor))
            if g is not None and not self._frozen[name]:
                self._grads[name] += scale * g

    def assign(self, name: str, value: np.ndarray) -> None:
        tensor = self[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != tensor.data.shape:
            raise ContractViolation(
                f"cannot assign shape {value.shape} to parameter {name!r} of shape {tensor.data.shape}"
            )
        tensor.data = value.copy()

    def state(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state(self, arrays: Dict[str, np.ndarray]) -> None:
        missing = [n for n in self._params if n not in arrays]
        unexpected = [n for n in arrays if n not in self._params]
        if missing or unexpected:
            raise ContractViolation(
                f"weights do not match the model: missing {missing[:5]}, unexpected {unexpected[:5]}"
            )
        for name, value in arrays.items():
            self.assign(name, value)

    def copy(self) -> "ParamStore":
        other = ParamStore()
        for name, tensor in self._params.items():
            other.add(name, tensor.data.copy(), trainable=not self._frozen[name])
        return other

    def count(self) -> int:
        return int(np.sum([t.data.size for t in self._params.values()]))

    def save(self, path: Union[str, Path]) -> None:
        save_weights(path, self.state())


def _write_entry(fh: BinaryIO, name: str, value: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    if len(encoded) > 0xFFFF:
        raise ContractViolation(f"parameter name too long: {name[:40]}...")
    if value.ndim > 0xFF:
        raise ContractViolation(f"parameter {name!r} has too many axes")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<B", value.ndim))
    if value.ndim:
        fh.write(struct.pack(f"<{value.ndim}Q", *value.shape))
    fh.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def save_weights(path: Union[str, Path], arrays: Dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(arrays)))
        for name, value in arrays.items():
            _write_entry(fh, name, np.asarray(value, dtype=np.float64))
    logger.info("wrote %d tensors to %s", len(arrays), path)


def _read_exact(fh: BinaryIO, size: int, what: str) -> bytes:
    chunk = fh.read(size)
    if len(chunk) != size:
        raise SequenceFormatError(f"weights file truncated while reading {what}")
    return chunk


def load_weights(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    arrays: Dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise SequenceFormatError(f"{path} is not a weights file (bad magic)")
        version, count = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != FORMAT_VERSION:
            raise SequenceFormatError(f"unsupported weights format version {version}")
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, "rank"))
            shape: Tuple[int, ...] = ()
            if rank:
                shape = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank, "extents"))
            size = int(np.prod(shape, dtype=np.int64)) if rank else 1
            payload = _read_exact(fh, 8 * size, f"payload of {name!r}")
            arrays[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
        if fh.read(1):
            raise SequenceFormatError(f"trailing bytes after {count} entries in {path}")
    return arrays


def load_store(path: Union[str, Path], template: Optional[ParamStore] = None) -> ParamStore:
    """Read a weights file into ``template`` (checked) or a fresh trainable store."""
    arrays = load_weights(path)
    if template is not None:
        template.load_state(arrays)
        return template
    store = ParamStore()
    for name, value in arrays.items():
        store.add(name, value)
    return store
