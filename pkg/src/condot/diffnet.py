"""Dense ReLU networks over a flat float64 parameter vector, with hand-written
reverse-mode gradients.

Parameter layout (layer-major): for each layer ``l`` with fan-in ``a`` and
fan-out ``b``, the weight matrix ``W_l`` of shape ``(a, b)`` in C order,
followed by the bias ``b_l`` of length ``b``. A layer computes
``h @ W_l + b_l``; ReLU is applied after every layer but the last.

Checkpoint container (all integers little-endian)::

    offset  size  field
    0       8     magic b"CONDOTCK"
    8       4     uint32 format version (currently 1)
    12      4     uint32 header length H in bytes
    16      H     UTF-8 JSON header, keys sorted, no whitespace
    16+H    ...   concatenated float64 '<f8' arrays, in the order and with
                  the lengths listed under header["arrays"]

The header always carries ``"kind"`` and ``"arrays"`` (a list of
``[name, length]`` pairs). A bare network uses kind ``"mlp"`` with one
array ``"params"`` and the architecture under ``"arch"``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

MAGIC = b"CONDOTCK"
FORMAT_VERSION = 1

DEFAULT_HIDDEN = (64, 64, 64, 64, 64, 64)


@dataclass(frozen=True)
class MlpArch:
    input_dim: int
    hidden_widths: tuple[int, ...] = DEFAULT_HIDDEN
    output_dim: int = 1

    def __post_init__(self):
        widths = tuple(int(w) for w in self.hidden_widths)
        object.__setattr__(self, "hidden_widths", widths)
        if self.input_dim < 1 or self.output_dim < 1 or any(w < 1 for w in widths):
            raise ValueError(f"layer sizes must be positive: {self}")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden_widths, self.output_dim]

    @property
    def n_params(self) -> int:
        s = self.layer_sizes
        return sum((a + 1) * b for a, b in zip(s[:-1], s[1:]))

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_widths": list(self.hidden_widths),
            "output_dim": self.output_dim,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MlpArch":
        return cls(int(d["input_dim"]), tuple(d["hidden_widths"]), int(d.get("output_dim", 1)))


class MlpNet:
    """Architecture plus a flat parameter vector.

    ``layers`` returns views into ``params``, so in-place edits of the views
    change the network.
    """

    def __init__(self, arch: MlpArch, params: np.ndarray | None = None):
        self.arch = arch
        if params is None:
            params = np.zeros(arch.n_params)
        params = np.asarray(params, dtype=np.float64)
        if params.ndim != 1 or params.size != arch.n_params:
            raise ValueError(
                f"expected {arch.n_params} parameters for {arch}, got shape {params.shape}"
            )
        self.params = params
        self._slices = _layer_slices(arch)

    def layers(self, params: np.ndarray | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
        flat = self.params if params is None else params
        return [
            (flat[ws].reshape(a, b), flat[bs])
            for (ws, bs, a, b) in self._slices
        ]

    def with_params(self, params: np.ndarray) -> "MlpNet":
        return MlpNet(self.arch, params)

    def copy(self) -> "MlpNet":
        return MlpNet(self.arch, self.params.copy())

    def __repr__(self):
        return f"MlpNet({self.arch}, n_params={self.arch.n_params})"


def _layer_slices(arch: MlpArch):
    out = []
    s = arch.layer_sizes
    pos = 0
    for a, b in zip(s[:-1], s[1:]):
        ws = slice(pos, pos + a * b)
        pos += a * b
        bs = slice(pos, pos + b)
        pos += b
        out.append((ws, bs, a, b))
    return out


def init_params(arch: MlpArch, rng: np.random.Generator) -> np.ndarray:
    """He-uniform weights (bound sqrt(6 / fan_in)), zero biases."""
    parts = []
    s = arch.layer_sizes
    for a, b in zip(s[:-1], s[1:]):
        bound = np.sqrt(6.0 / a)
        parts.append(rng.uniform(-bound, bound, size=a * b))
        parts.append(np.zeros(b))
    return np.concatenate(parts)


def init_net(arch: MlpArch, rng: np.random.Generator) -> MlpNet:
    return MlpNet(arch, init_params(arch, rng))


# ---------------------------------------------------------------------------
# evaluation


class Tape:
    """Activations kept by :func:`forward_batch` for a later backward pass."""

    __slots__ = ("inputs", "pre")

    def __init__(self, inputs, pre):
        self.inputs = inputs  # input to each layer, (n, fan_in)
        self.pre = pre  # pre-activation of each hidden layer


def _check_batch(net: MlpNet, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.arch.input_dim:
        raise ValueError(
            f"input must have shape (n, {net.arch.input_dim}), got {X.shape}"
        )
    return X


def forward_batch(net: MlpNet, X, keep: bool = False):
    """Evaluate the first output unit on each row of ``X``.

    Returns an array of shape ``(n,)``, or ``(out, tape)`` when ``keep``.
    """
    X = _check_batch(net, X)
    layers = net.layers()
    h = X
    inputs, pre = [], []
    last = len(layers) - 1
    for k, (W, b) in enumerate(layers):
        if keep:
            inputs.append(h)
        z = h @ W
        z += b
        if k < last:
            if keep:
                pre.append(z)
            h = np.maximum(z, 0.0)
        else:
            h = z
    out = h[:, 0]
    if keep:
        return out, Tape(inputs, pre)
    return out


def backward_tape(
    net: MlpNet,
    tape: Tape,
    upstream,
    need_params: bool = True,
    need_input: bool = True,
):
    """Reverse pass for the sum over rows of ``upstream[n] * out[n]``.

    Returns ``(param_grad, input_grad)``; either is ``None`` when not
    requested. ``param_grad`` is summed over rows; ``input_grad`` is per row.
    The ReLU derivative at exactly zero is taken as zero.
    """
    layers = net.layers()
    n = tape.inputs[0].shape[0]
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (n,):
        raise ValueError(f"upstream must have shape ({n},), got {upstream.shape}")
    grad = np.zeros(net.arch.n_params) if need_params else None
    gviews = net.layers(grad) if need_params else None
    out_dim = net.arch.output_dim
    delta = np.zeros((n, out_dim))
    delta[:, 0] = upstream
    input_grad = None
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        if need_params:
            gW, gb = gviews[k]
            gW[...] = tape.inputs[k].T @ delta
            gb[...] = delta.sum(axis=0)
        if k == 0:
            if need_input:
                input_grad = delta @ W.T
            break
        delta = delta @ W.T
        delta *= tape.pre[k - 1] > 0.0
    return grad, input_grad


def backward_batch(net: MlpNet, X, upstream, need_params=True, need_input=True):
    _, tape = forward_batch(net, X, keep=True)
    return backward_tape(net, tape, upstream, need_params, need_input)


def forward(net: MlpNet, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"input must be a vector, got shape {x.shape}")
    return float(forward_batch(net, x[None, :])[0])


def backward(net: MlpNet, x, upstream: float = 1.0):
    """Gradient of ``upstream * forward(net, x)`` w.r.t. params and input."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"input must be a vector, got shape {x.shape}")
    pg, ig = backward_batch(net, x[None, :], np.array([float(upstream)]))
    return pg, ig[0]


# ---------------------------------------------------------------------------
# flat-vector arithmetic


def _same_length(*vs):
    arrs = [np.asarray(v, dtype=np.float64) for v in vs]
    n = arrs[0].shape
    for a in arrs:
        if a.ndim != 1 or a.shape != n:
            raise ValueError(f"vector length mismatch: {[x.shape for x in arrs]}")
    return arrs


def axpy(a: float, x, y) -> np.ndarray:
    """``a * x + y`` as a new vector."""
    x, y = _same_length(x, y)
    return a * x + y


def scale(a: float, x) -> np.ndarray:
    (x,) = _same_length(x)
    return a * x


def accumulate_grad(acc, g) -> np.ndarray:
    acc, g = _same_length(acc, g)
    return acc + g


# ---------------------------------------------------------------------------
# checkpoint container


def write_container(path, kind: str, arrays: Sequence[tuple[str, np.ndarray]], meta: Mapping | None = None):
    header = dict(meta or {})
    header["kind"] = kind
    header["arrays"] = [[name, int(np.asarray(a).size)] for name, a in arrays]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(
        np.ascontiguousarray(a, dtype="<f8").ravel().tobytes() for _, a in arrays
    )
    data = MAGIC + struct.pack("<II", FORMAT_VERSION, len(blob)) + blob + body
    Path(path).write_bytes(data)


class CheckpointError(ValueError):
    pass


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc.strerror})") from None
    if len(data) < 16 or data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
        names = [(str(name), int(n)) for name, n in header["arrays"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    pos = 16 + hlen
    arrays = {}
    for name, n in names:
        end = pos + 8 * n
        if end > len(data):
            raise CheckpointError(f"{path}: truncated array {name!r}")
        arrays[name] = np.frombuffer(data[pos:end], dtype="<f8").astype(np.float64)
        pos = end
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return header, arrays


def save_net(net: MlpNet, path):
    write_container(path, "mlp", [("params", net.params)], {"arch": net.arch.to_dict()})


def load_net(path) -> MlpNet:
    header, arrays = read_container(path)
    if header["kind"] != "mlp":
        raise CheckpointError(f"{path}: expected kind 'mlp', got {header['kind']!r}")
    return MlpNet(MlpArch.from_dict(header["arch"]), arrays["params"])
