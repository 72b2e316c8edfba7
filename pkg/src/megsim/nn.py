"""Dense-network substrate with hand-derived gradients.

Everything runs on plain numpy arrays, float32 by default; gradient
checking rebuilds layers in float64. There is no autodiff graph: each
layer knows its own backward pass, and the optimizer works on flat lists
of parameter arrays. Forward passes are pure functions of (parameters,
input); caching for backward is opt-out via ``cache=False`` so read-only
callers can share a network across threads.
"""

import json
import struct

import numpy as np

from .errors import DimensionError, StateError, TrainingError
from .util import as_rng

ACTIVATIONS = ("none", "relu", "tanh")

_MAGIC = b"MEGN"
_FORMAT_VERSION = 1


def _promote(x, dtype):
    """View input as a 2-d batch [B, n]; remember if it arrived 1-d."""
    x = np.asarray(x, dtype=dtype)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise DimensionError(f"expected 1-d or 2-d input, got shape {x.shape}")


class DenseLayer:
    """Fully connected layer: y = activation(x @ W.T + b).

    Weights are [out_features, in_features]; bias is [out_features].
    """

    kind = "dense"

    def __init__(self, in_features, out_features, activation="none",
                 rng=None, name=None, dtype=np.float32):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        self.activation = activation
        self.name = name or f"dense{in_features}x{out_features}"
        self.dtype = np.dtype(dtype)
        rng = as_rng(0 if rng is None else rng)
        bound = np.sqrt(1.0 / in_features)
        self.weights = rng.uniform(-bound, bound,
                                   (out_features, in_features)).astype(self.dtype)
        self.bias = np.zeros(out_features, dtype=self.dtype)
        self._cache = None

    @property
    def param_count(self):
        return self.in_features * self.out_features + self.out_features

    def descriptor(self):
        return {"kind": "dense", "in_features": self.in_features,
                "out_features": self.out_features,
                "activation": self.activation, "name": self.name}

    def params(self):
        return [self.weights, self.bias]

    def param_names(self):
        return [f"{self.name}.weights", f"{self.name}.bias"]

    def forward(self, x, cache=True):
        x2, squeeze = _promote(x, self.dtype)
        if x2.shape[1] != self.in_features:
            raise DimensionError(
                f"layer {self.name!r} expects trailing dimension "
                f"{self.in_features}, got {x2.shape[1]}")
        pre = x2 @ self.weights.T + self.bias
        if self.activation == "relu":
            out = np.maximum(pre, 0)
        elif self.activation == "tanh":
            out = np.tanh(pre)
        else:
            out = pre
        if cache:
            self._cache = (x2, pre, out, squeeze)
        return out[0] if squeeze else out

    def backward(self, upstream):
        """Return (input_grad, weight_grad, bias_grad) for the cached forward."""
        if self._cache is None:
            raise StateError(f"backward on {self.name!r} before forward")
        x2, pre, out, squeeze = self._cache
        g, _ = _promote(upstream, self.dtype)
        if g.shape != pre.shape:
            raise DimensionError(
                f"upstream gradient shape {g.shape} does not match "
                f"output shape {pre.shape} of layer {self.name!r}")
        if self.activation == "relu":
            g = g * (pre > 0)
        elif self.activation == "tanh":
            g = g * (1.0 - out * out)
        grad_w = g.T @ x2
        grad_b = g.sum(axis=0)
        grad_x = g @ self.weights
        if squeeze:
            grad_x = grad_x[0]
        return grad_x, grad_w, grad_b

    def clone_as(self, dtype):
        dup = DenseLayer.__new__(DenseLayer)
        dup.in_features = self.in_features
        dup.out_features = self.out_features
        dup.activation = self.activation
        dup.name = self.name
        dup.dtype = np.dtype(dtype)
        dup.weights = self.weights.astype(dtype)
        dup.bias = self.bias.astype(dtype)
        dup._cache = None
        return dup


class _NormBase:
    """Mean/variance normalization over the trailing dimension."""

    def __init__(self, normalized_size, epsilon=1e-6, name=None, dtype=np.float32):
        self.normalized_size = int(normalized_size)
        self.epsilon = float(epsilon)
        self.name = name or f"{self.kind}{normalized_size}"
        self.dtype = np.dtype(dtype)
        self._cache = None

    def _check(self, x2):
        if x2.shape[1] != self.normalized_size:
            raise DimensionError(
                f"layer {self.name!r} normalizes size {self.normalized_size}, "
                f"got trailing dimension {x2.shape[1]}")

    def _normalize(self, x2):
        mean = x2.mean(axis=1, keepdims=True)
        centered = x2 - mean
        var = (centered * centered).mean(axis=1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.epsilon)
        return centered * inv, inv

    @staticmethod
    def _input_grad(g_hat, x_hat, inv):
        n_mean = g_hat.mean(axis=1, keepdims=True)
        proj = (g_hat * x_hat).mean(axis=1, keepdims=True)
        return inv * (g_hat - n_mean - x_hat * proj)


class Normalize(_NormBase):
    """Parameter-free normalization layer."""

    kind = "normalize"
    param_count = 0

    def descriptor(self):
        return {"kind": "normalize", "size": self.normalized_size,
                "epsilon": self.epsilon, "name": self.name}

    def params(self):
        return []

    def param_names(self):
        return []

    def forward(self, x, cache=True):
        x2, squeeze = _promote(x, self.dtype)
        self._check(x2)
        x_hat, inv = self._normalize(x2)
        if cache:
            self._cache = (x_hat, inv, squeeze)
        return x_hat[0] if squeeze else x_hat

    def backward(self, upstream):
        if self._cache is None:
            raise StateError(f"backward on {self.name!r} before forward")
        x_hat, inv, squeeze = self._cache
        g, _ = _promote(upstream, self.dtype)
        grad_x = self._input_grad(g, x_hat, inv)
        return (grad_x[0] if squeeze else grad_x,)

    def clone_as(self, dtype):
        return Normalize(self.normalized_size, self.epsilon, self.name, dtype)


class LayerNorm(_NormBase):
    """Normalization followed by a learned elementwise affine map."""

    kind = "layernorm"

    def __init__(self, normalized_size, epsilon=1e-6, name=None, dtype=np.float32):
        super().__init__(normalized_size, epsilon, name, dtype)
        self.gain = np.ones(self.normalized_size, dtype=self.dtype)
        self.offset = np.zeros(self.normalized_size, dtype=self.dtype)

    @property
    def param_count(self):
        return 2 * self.normalized_size

    def descriptor(self):
        return {"kind": "layernorm", "size": self.normalized_size,
                "epsilon": self.epsilon, "name": self.name}

    def params(self):
        return [self.gain, self.offset]

    def param_names(self):
        return [f"{self.name}.gain", f"{self.name}.offset"]

    def forward(self, x, cache=True):
        x2, squeeze = _promote(x, self.dtype)
        self._check(x2)
        x_hat, inv = self._normalize(x2)
        out = self.gain * x_hat + self.offset
        if cache:
            self._cache = (x_hat, inv, squeeze)
        return out[0] if squeeze else out

    def backward(self, upstream):
        """Return (input_grad, gain_grad, offset_grad)."""
        if self._cache is None:
            raise StateError(f"backward on {self.name!r} before forward")
        x_hat, inv, squeeze = self._cache
        g, _ = _promote(upstream, self.dtype)
        grad_gain = (g * x_hat).sum(axis=0)
        grad_offset = g.sum(axis=0)
        grad_x = self._input_grad(g * self.gain, x_hat, inv)
        return (grad_x[0] if squeeze else grad_x), grad_gain, grad_offset

    def clone_as(self, dtype):
        dup = LayerNorm(self.normalized_size, self.epsilon, self.name, dtype)
        dup.gain = self.gain.astype(dtype)
        dup.offset = self.offset.astype(dtype)
        return dup


class Network:
    """A stack of layers applied in order, with a chained backward pass."""

    def __init__(self, layers, name="net"):
        self.layers = list(layers)
        self.name = name

    def forward(self, x, cache=True):
        for layer in self.layers:
            x = layer.forward(x, cache=cache)
        return x

    def backward(self, upstream):
        """Return (input_grad, [per-parameter grads in params() order])."""
        grads = []
        g = upstream
        for layer in reversed(self.layers):
            result = layer.backward(g)
            g = result[0]
            grads[:0] = result[1:]
        return g, grads

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def param_names(self):
        return [f"{self.name}.{n}" for layer in self.layers
                for n in layer.param_names()]

    def descriptors(self):
        return [layer.descriptor() for layer in self.layers]

    @property
    def param_count(self):
        return sum(layer.param_count for layer in self.layers)

    def clone_as(self, dtype):
        return Network([layer.clone_as(dtype) for layer in self.layers], self.name)


class Adam:
    """Adam optimizer with bias correction; moments are zero-initialized."""

    def __init__(self, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.step_count = 0
        self._moments = None

    def step(self, params, grads, names=None):
        """Update params in place from grads; returns the params list."""
        if self._moments is None:
            self._moments = [(np.zeros_like(p, dtype=np.float64),
                              np.zeros_like(p, dtype=np.float64)) for p in params]
        if len(params) != len(self._moments):
            raise ValueError("parameter list changed size between steps")
        for i, g in enumerate(grads):
            if not np.all(np.isfinite(g)):
                label = names[i] if names else f"param[{i}]"
                raise TrainingError(f"non-finite gradient for {label}")
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for p, g, (m, v) in zip(params, grads, self._moments):
            g64 = np.asarray(g, dtype=np.float64)
            m *= self.beta1
            m += (1.0 - self.beta1) * g64
            v *= self.beta2
            v += (1.0 - self.beta2) * g64 * g64
            update = (self.learning_rate * (m / c1)
                      / (np.sqrt(v / c2) + self.epsilon))
            p -= update.astype(p.dtype)
        return params


def adam_step(state: Adam, params, grads, names=None):
    """Functional alias for one optimizer update."""
    return state.step(params, grads, names)


def parameter_count(description) -> int:
    """Total parameter count from layer metadata alone.

    Accepts layer instances, descriptor dicts (as produced by
    ``descriptor()``), or short tuples like ``("dense", n_in, n_out)``.
    Additive over concatenation; never allocates weights.
    """
    total = 0
    for item in description:
        if hasattr(item, "param_count"):
            total += item.param_count
            continue
        if isinstance(item, dict):
            kind = item["kind"]
            if kind == "dense":
                total += (item["in_features"] * item["out_features"]
                          + item["out_features"])
            elif kind == "layernorm":
                total += 2 * item["size"]
            elif kind in ("normalize", "flatten", "unflatten", "residual"):
                pass
            else:
                raise ValueError(f"unknown layer kind {kind!r}")
            continue
        kind = item[0]
        if kind == "dense":
            total += item[1] * item[2] + item[2]
        elif kind == "layernorm":
            total += 2 * item[1]
        elif kind in ("normalize", "flatten", "unflatten", "residual"):
            pass
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    return total


def _layer_from_descriptor(desc):
    kind = desc["kind"]
    if kind == "dense":
        layer = DenseLayer(desc["in_features"], desc["out_features"],
                           desc["activation"], name=desc["name"])
    elif kind == "normalize":
        layer = Normalize(desc["size"], desc["epsilon"], name=desc["name"])
    elif kind == "layernorm":
        layer = LayerNorm(desc["size"], desc["epsilon"], name=desc["name"])
    else:
        raise ValueError(f"cannot rebuild layer kind {kind!r}")
    return layer


def save_network(path, network: Network, extra=None):
    """Serialize a float32 network to a versioned binary file.

    Layout: magic ``MEGN``, u8 format version, u32 metadata length, JSON
    metadata (layer descriptors plus an optional caller dict), then each
    parameter array as raw little-endian float32 bytes in params() order.
    The round trip is bit-exact.
    """
    for p in network.params():
        if p.dtype != np.float32:
            raise ValueError("only float32 networks are serialized")
    meta = {"name": network.name, "layers": network.descriptors(),
            "extra": extra or {}}
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<BI", _FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for p in network.params():
            fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def load_network(path):
    """Rebuild a network saved by :func:`save_network`; returns (net, extra)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path} is not a network file (bad magic)")
    version, meta_len = struct.unpack_from("<BI", data, 4)
    if version != _FORMAT_VERSION:
        raise ValueError(f"unsupported format version {version}")
    offset = 9
    meta = json.loads(data[offset:offset + meta_len].decode("utf-8"))
    offset += meta_len
    net = Network([_layer_from_descriptor(d) for d in meta["layers"]],
                  meta["name"])
    for p in net.params():
        nbytes = p.size * 4
        values = np.frombuffer(data, dtype="<f4", count=p.size, offset=offset)
        p[...] = values.reshape(p.shape)
        offset += nbytes
    if offset != len(data):
        raise ValueError(f"{path} has trailing bytes")
    return net, meta["extra"]


def numeric_gradient(loss_fn, arrays, step=1e-4):
    """Central finite-difference gradients of a scalar loss.

    ``loss_fn`` takes no arguments and reads ``arrays`` in place; arrays
    should be float64 for the check to be tight.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            hi = loss_fn()
            flat[i] = keep - step
            lo = loss_fn()
            flat[i] = keep
            gflat[i] = (hi - lo) / (2.0 * step)
        grads.append(g)
    return grads
