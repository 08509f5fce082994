"""Network topology, parameters, forward/backward passes and output transforms."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..edf import INPUT_LENGTH, DecayParameters
from ..errors import ShapeMismatch, StateError
from . import layers

BRANCHES = ("t", "a", "n", "k")


@dataclass(frozen=True)
class NetworkTopology:
    input_length: int = INPUT_LENGTH
    conv_channels: tuple = (64, 64, 128)
    conv_kernels: tuple = (13, 7, 7)
    pool_sizes: tuple = (5, 2, 2)
    shared_units: tuple = (512, 256, 128)
    branch_units: int = 64
    max_order: int = 3

    def __post_init__(self):
        for name in ("conv_channels", "conv_kernels", "pool_sizes", "shared_units"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if not (len(self.conv_channels) == len(self.conv_kernels) == len(self.pool_sizes)):
            raise ValueError("conv_channels, conv_kernels and pool_sizes must have equal length")
        if any(k % 2 == 0 for k in self.conv_kernels):
            raise ValueError("convolution kernels must have odd width")

    @property
    def flat_features(self) -> int:
        length = self.input_length
        for size in self.pool_sizes:
            length //= size
        return length * self.conv_channels[-1]

    def branch_outputs(self) -> dict:
        return {"t": self.max_order, "a": self.max_order, "n": 1, "k": self.max_order}

    def layer_shapes(self) -> list:
        """(name, shape) of every parameter array in storage order."""
        shapes = []
        c_in = 1
        for i, (c, k) in enumerate(zip(self.conv_channels, self.conv_kernels), 1):
            shapes += [(f"conv{i}.weight", (c, c_in, k)), (f"conv{i}.bias", (c,))]
            c_in = c
        n_in = self.flat_features
        for i, n in enumerate(self.shared_units, 1):
            shapes += [(f"fc{i}.weight", (n_in, n)), (f"fc{i}.bias", (n,))]
            n_in = n
        for branch, n_out in self.branch_outputs().items():
            shapes += [(f"{branch}_hidden.weight", (n_in, self.branch_units)),
                       (f"{branch}_hidden.bias", (self.branch_units,)),
                       (f"{branch}_out.weight", (self.branch_units, n_out)),
                       (f"{branch}_out.bias", (n_out,))]
        return shapes

    def parameter_count(self) -> int:
        return int(sum(np.prod(shape) for _, shape in self.layer_shapes()))

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d) -> "NetworkTopology":
        return cls(**d)


@dataclass
class NetworkParameters:
    topology: NetworkTopology
    arrays: dict
    norm_factor: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = self.topology.layer_shapes()
        if list(self.arrays) != [name for name, _ in expected]:
            missing = {n for n, _ in expected} ^ set(self.arrays)
            if missing:
                raise ShapeMismatch(f"parameter names do not match topology: {sorted(missing)}")
            self.arrays = {name: self.arrays[name] for name, _ in expected}
        for name, shape in expected:
            arr = np.asarray(self.arrays[name], dtype=np.float64)
            if arr.shape != tuple(shape):
                raise ShapeMismatch(f"{name}: expected shape {shape}, got {arr.shape}")
            self.arrays[name] = arr

    def count(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays.values()])

    def copy(self) -> "NetworkParameters":
        return NetworkParameters(self.topology, {k: v.copy() for k, v in self.arrays.items()},
                                 self.norm_factor, dict(self.meta))


def init_parameters(topology: NetworkTopology, rng: np.random.Generator, norm_factor: float = 1.0,
                    output_bias=None) -> NetworkParameters:
    """Glorot-uniform weights, zero biases.

    ``output_bias`` optionally maps a branch name to the initial bias of its
    output layer (e.g. the centre of the target range).
    """
    arrays = {}
    for name, shape in topology.layer_shapes():
        if name.endswith(".bias"):
            arrays[name] = np.zeros(shape)
            continue
        if len(shape) == 3:  # conv: (Cout, Cin, k)
            fan_in, fan_out = shape[1] * shape[2], shape[0] * shape[2]
        else:
            fan_in, fan_out = shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        arrays[name] = rng.uniform(-limit, limit, size=shape)
    for branch, value in (output_bias or {}).items():
        arrays[f"{branch}_out.bias"][...] = value
    return NetworkParameters(topology, arrays, norm_factor)


@dataclass
class NetworkOutput:
    """Raw branch outputs, batched along axis 0.

    ``t``/``a``: (B, K_max); ``n``: (B,); ``logits``: (B, K_max).
    """

    t: np.ndarray
    a: np.ndarray
    n: np.ndarray
    logits: np.ndarray

    def __len__(self):
        return self.t.shape[0]

    def row(self, i) -> "NetworkOutput":
        return NetworkOutput(self.t[i:i + 1], self.a[i:i + 1], self.n[i:i + 1], self.logits[i:i + 1])


class DecayFitNet:
    """Forward/backward evaluation of a parameter set.

    ``forward(..., keep_cache=True)`` stores the activations needed by
    ``backward``; the cache is consumed by the next backward call.
    """

    def __init__(self, params: NetworkParameters):
        self.params = params
        self.topology = params.topology
        self._cache = None

    def forward(self, x, keep_cache: bool = False) -> NetworkOutput:
        p = self.params.arrays
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.topology.input_length:
            raise ShapeMismatch(f"expected input of length {self.topology.input_length}, got shape {x.shape}")
        caches = []
        h = x[:, :, None]
        for i, size in enumerate(self.topology.pool_sizes, 1):
            h, c_conv = layers.conv1d_forward(h, p[f"conv{i}.weight"], p[f"conv{i}.bias"])
            h, c_relu = layers.relu_forward(h)
            h, c_pool = layers.maxpool_forward(h, size)
            caches.append((c_conv, c_relu, c_pool))
        conv_shape = h.shape
        h = h.reshape(h.shape[0], -1)
        for i in range(1, len(self.topology.shared_units) + 1):
            h, c_fc = layers.dense_forward(h, p[f"fc{i}.weight"], p[f"fc{i}.bias"])
            h, c_relu = layers.relu_forward(h)
            caches.append((c_fc, c_relu))
        outputs = {}
        for branch in BRANCHES:
            z, c_hidden = layers.dense_forward(h, p[f"{branch}_hidden.weight"], p[f"{branch}_hidden.bias"])
            z, c_relu = layers.relu_forward(z)
            z, c_out = layers.dense_forward(z, p[f"{branch}_out.weight"], p[f"{branch}_out.bias"])
            outputs[branch] = z
            caches.append((c_hidden, c_relu, c_out))
        if keep_cache:
            self._cache = (caches, conv_shape)
        return NetworkOutput(outputs["t"], outputs["a"], outputs["n"][:, 0], outputs["k"])

    def backward(self, grad: NetworkOutput) -> dict:
        """Gradients of a scalar loss w.r.t. every parameter, given d(loss)/d(outputs)."""
        if self._cache is None:
            raise StateError("backward() called without a cached forward pass")
        caches, conv_shape = self._cache
        self._cache = None
        n_conv = len(self.topology.pool_sizes)
        n_fc = len(self.topology.shared_units)
        grads = {}
        upstream = {"t": grad.t, "a": grad.a, "n": np.asarray(grad.n)[:, None], "k": grad.logits}
        dh = 0.0
        for branch, (c_hidden, c_relu, c_out) in zip(BRANCHES, caches[n_conv + n_fc:]):
            dz, grads[f"{branch}_out.weight"], grads[f"{branch}_out.bias"] = layers.dense_backward(
                np.asarray(upstream[branch], dtype=np.float64), c_out)
            dz = layers.relu_backward(dz, c_relu)
            dx, grads[f"{branch}_hidden.weight"], grads[f"{branch}_hidden.bias"] = layers.dense_backward(dz, c_hidden)
            dh = dh + dx
        for i in range(n_fc, 0, -1):
            c_fc, c_relu = caches[n_conv + i - 1]
            dh = layers.relu_backward(dh, c_relu)
            dh, grads[f"fc{i}.weight"], grads[f"fc{i}.bias"] = layers.dense_backward(dh, c_fc)
        dh = dh.reshape(conv_shape)
        for i in range(n_conv, 0, -1):
            c_conv, c_relu, c_pool = caches[i - 1]
            dh = layers.maxpool_backward(dh, c_pool)
            dh = layers.relu_backward(dh, c_relu)
            dh, grads[f"conv{i}.weight"], grads[f"conv{i}.bias"] = layers.conv1d_backward(dh, c_conv)
        return {name: grads[name] for name, _ in self.topology.layer_shapes()}


def network_forward(x, params: NetworkParameters) -> NetworkOutput:
    return DecayFitNet(params).forward(x)


def network_backward(net: DecayFitNet, upstream: NetworkOutput) -> dict:
    return net.backward(upstream)


def predicted_order(logits) -> np.ndarray:
    return np.argmax(np.atleast_2d(logits), axis=1) + 1


def postprocess_outputs(out: NetworkOutput, length, sample_rate, M: int = INPUT_LENGTH) -> list:
    """Map raw outputs to decay parameters on the original time scale.

    Decay times become ((t^2 + 1) / M) * (L / fs) seconds, amplitudes a^2 for
    slopes up to the predicted order (zero above), and noise (M / L) * 10^-n.
    Slopes are returned sorted by decay time.
    """
    B = len(out)
    lengths = np.broadcast_to(np.asarray(length, dtype=np.float64), (B,))
    rates = np.broadcast_to(np.asarray(sample_rate, dtype=np.float64), (B,))
    orders = predicted_order(out.logits)
    K_max = out.t.shape[1]
    times = (out.t ** 2 + 1.0) / M * (lengths / rates)[:, None]
    active = np.arange(1, K_max + 1)[None, :] <= orders[:, None]
    amps = np.where(active, out.a ** 2, 0.0)
    noise = (M / lengths) * 10.0 ** (-out.n)
    result = []
    for i in range(B):
        order = np.argsort(times[i], kind="stable")
        result.append(DecayParameters(int(orders[i]), times[i, order], amps[i, order], noise[i]))
    return result
