"""Named parameter store with gradient buffers, Adadelta updates, and a
binary checkpoint container (little-endian, versioned)."""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np

from .autodiff import Tensor

MAGIC = b"TDCP"
VERSION = 1


def save_arrays(path: Union[str, Path], arrays: dict[str, np.ndarray]) -> None:
    """Versioned little-endian container of named float64 arrays."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(arrays)))
        for name, a in arrays.items():
            enc = name.encode("utf-8")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", a.ndim))
            for d in a.shape:
                f.write(struct.pack("<I", d))
            f.write(np.asarray(a, dtype="<f8").tobytes())


def load_arrays(path: Union[str, Path]) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError("not a checkpoint file")
        version, count = struct.unpack("<II", f.read(8))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(ndim))
            size = int(np.prod(shape)) if shape else 1
            out[name] = (
                np.frombuffer(f.read(size * 8), dtype="<f8")
                .reshape(shape)
                .astype(np.float64)
            )
    return out


class ParamStore:
    def __init__(self, seed: int = 0):
        self._params: dict[str, Tensor] = {}
        self.rng = np.random.default_rng(seed)

    def add(
        self,
        name: str,
        shape: tuple[int, ...],
        fan_in: Optional[int] = None,
        zero: bool = False,
    ) -> Tensor:
        """Create a trainable tensor, uniform in +-1/sqrt(fan_in)."""
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        if zero:
            data = np.zeros(shape)
        else:
            if fan_in is None:
                fan_in = shape[-1] if shape else 1
            bound = 1.0 / np.sqrt(max(fan_in, 1))
            data = self.rng.uniform(-bound, bound, size=shape)
        t = Tensor(data, requires_grad=True)
        t.zero_grad()
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def names(self) -> list[str]:
        return list(self._params)

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def clip_grad_norm(self, max_norm: float) -> float:
        """Rescale all gradients so their global L2 norm is at most
        ``max_norm``.  Returns the norm before clipping."""
        total = 0.0
        for t in self._params.values():
            if t.grad is not None:
                total += float(np.sum(t.grad * t.grad))
        norm = float(np.sqrt(total))
        if norm > max_norm:
            scale = max_norm / norm
            for t in self._params.values():
                if t.grad is not None:
                    t.grad *= scale
        return norm

    # checkpoint container ---------------------------------------------
    def save(self, path: Union[str, Path]) -> None:
        save_arrays(path, {n: t.data for n, t in self._params.items()})

    def load(self, path: Union[str, Path]) -> None:
        """Load values into existing parameters; shapes must match."""
        for name, data in load_arrays(path).items():
            if name not in self._params:
                raise KeyError(f"checkpoint has unknown parameter {name!r}")
            t = self._params[name]
            if t.data.shape != data.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: {t.data.shape} vs {data.shape}"
                )
            t.data = data.copy()


class Adadelta:
    """Adadelta with running averages of squared grads and updates."""

    def __init__(
        self, store: ParamStore, rho: float = 0.95, eps: float = 1e-8, lr: float = 1.0
    ):
        self.store = store
        self.rho = rho
        self.eps = eps
        self.lr = lr
        self._eg2 = {n: np.zeros_like(t.data) for n, t in store.items()}
        self._edx2 = {n: np.zeros_like(t.data) for n, t in store.items()}

    def step(self) -> None:
        for name, t in self.store.items():
            g = t.grad
            if g is None:
                continue
            eg2 = self._eg2[name]
            edx2 = self._edx2[name]
            eg2 *= self.rho
            eg2 += (1.0 - self.rho) * g * g
            dx = -np.sqrt(edx2 + self.eps) / np.sqrt(eg2 + self.eps) * g
            edx2 *= self.rho
            edx2 += (1.0 - self.rho) * dx * dx
            t.data = t.data + self.lr * dx

    def save(self, path: Union[str, Path]) -> None:
        arrays = {}
        for n in self.store.names():
            arrays[f"eg2.{n}"] = self._eg2[n]
            arrays[f"edx2.{n}"] = self._edx2[n]
        save_arrays(path, arrays)

    def load(self, path: Union[str, Path]) -> None:
        arrays = load_arrays(path)
        for n in self.store.names():
            self._eg2[n] = arrays[f"eg2.{n}"].copy()
            self._edx2[n] = arrays[f"edx2.{n}"].copy()
