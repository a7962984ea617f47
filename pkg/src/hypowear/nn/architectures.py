"""The five model families: MLP, causal 1-D CNN, LSTM, GRU, TCN.

Sequence models consume (n, channels, 12) batches.  Recurrent nets read the
last step's hidden state and convolutional nets mean-pool over time before
the dense head, since the label is anchored to the window's final bin.  The
MLP consumes the handcrafted feature vector, not raw sequences.

Initialization: uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)),
recurrent biases zero except the LSTM forget gate at 1.0.  A fixed seed
yields a bit-identical parameter vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..rng import Stream, derive_seed
from . import autodiff as ad

FAMILIES = ("mlp", "cnn", "lstm", "gru", "tcn")


@dataclass(frozen=True)
class ModelSpec:
    family: str
    in_channels: int = 1
    window_len: int = 12
    hidden: int = 32
    cnn_kernel: int = 3
    cnn_layers: int = 2
    cnn_channels: int = 16
    tcn_kernel: int = 3
    tcn_blocks: int = 3
    tcn_dilations: tuple = (1, 2, 4)
    tcn_channels: int = 16
    tcn_residual: bool = True
    mlp_layers: tuple = (64, 32)
    n_features: int | None = None  # MLP input width

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == "mlp" and self.n_features is None:
            raise ValueError("mlp spec needs n_features")
        if self.in_channels not in (1, 2):
            raise ValueError("in_channels must be 1 or 2")
        if self.family == "tcn":
            if len(self.tcn_dilations) != self.tcn_blocks:
                raise ValueError("one dilation per block")
            if self.receptive_field < self.window_len:
                raise ValueError(
                    f"TCN receptive field {self.receptive_field} does not cover the window"
                )

    @property
    def receptive_field(self) -> int:
        return 1 + (self.tcn_kernel - 1) * sum(self.tcn_dilations)


class _Builder:
    """Draws initial parameter values in a fixed declaration order."""

    def __init__(self, seed: int, zero_init: bool):
        self.stream = Stream(derive_seed(seed, "init"))
        self.zero_init = zero_init

    def glorot(self, shape, fan_in, fan_out):
        if self.zero_init:
            return ad.parameter(np.zeros(shape))
        a = np.sqrt(6.0 / (fan_in + fan_out))
        u = self.stream.uniform(int(np.prod(shape))).reshape(shape)
        return ad.parameter((2.0 * u - 1.0) * a)

    @staticmethod
    def zeros(shape):
        return ad.parameter(np.zeros(shape))


class Net:
    """Base: ordered named parameters plus forward to a logit column."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self._params: list[tuple[str, ad.Tensor]] = []

    def _add(self, name: str, tensor: ad.Tensor) -> ad.Tensor:
        self._params.append((name, tensor))
        return tensor

    def parameters(self) -> list:
        return [t for _, t in self._params]

    def named_parameters(self) -> list:
        return list(self._params)

    def zero_grad(self):
        for _, t in self._params:
            t.zero_grad()

    def get_state(self) -> list:
        return [t.data.copy() for _, t in self._params]

    def set_state(self, state: list):
        for (_, t), data in zip(self._params, state):
            t.data = data.copy()

    def forward(self, x: np.ndarray) -> ad.Tensor:
        raise NotImplementedError

    def to_doc(self) -> dict:
        spec = self.spec
        return {
            "format_version": 1,
            "family": spec.family,
            "spec": {
                "in_channels": spec.in_channels,
                "window_len": spec.window_len,
                "hidden": spec.hidden,
                "cnn_kernel": spec.cnn_kernel,
                "cnn_layers": spec.cnn_layers,
                "cnn_channels": spec.cnn_channels,
                "tcn_kernel": spec.tcn_kernel,
                "tcn_blocks": spec.tcn_blocks,
                "tcn_dilations": list(spec.tcn_dilations),
                "tcn_channels": spec.tcn_channels,
                "tcn_residual": spec.tcn_residual,
                "mlp_layers": list(spec.mlp_layers),
                "n_features": spec.n_features,
            },
            "params": {
                name: {"shape": list(t.data.shape), "data": [float(v) for v in t.data.reshape(-1)]}
                for name, t in self._params
            },
        }


def net_from_doc(doc: dict) -> "Net":
    raw = dict(doc["spec"])
    raw["tcn_dilations"] = tuple(raw["tcn_dilations"])
    raw["mlp_layers"] = tuple(raw["mlp_layers"])
    spec = ModelSpec(family=doc["family"], **raw)
    net = build(spec, seed=0, zero_init=True)
    for name, t in net._params:
        entry = doc["params"][name]
        t.data = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
    return net


def _dense(net: Net, prefix: str, b: _Builder, n_in: int, n_out: int):
    w = net._add(f"{prefix}.w", b.glorot((n_in, n_out), n_in, n_out))
    bias = net._add(f"{prefix}.b", b.zeros(n_out))
    return w, bias


class MLPNet(Net):
    def __init__(self, spec: ModelSpec, b: _Builder):
        super().__init__(spec)
        dims = [spec.n_features, *spec.mlp_layers, 1]
        self.layers = [
            _dense(self, f"dense{i}", b, dims[i], dims[i + 1]) for i in range(len(dims) - 1)
        ]

    def forward(self, x: np.ndarray) -> ad.Tensor:
        h = ad.constant(x)
        for i, (w, bias) in enumerate(self.layers):
            h = ad.add(ad.matmul(h, w), bias)
            if i < len(self.layers) - 1:
                h = ad.relu(h)
        return h


class Cnn1dNet(Net):
    def __init__(self, spec: ModelSpec, b: _Builder):
        super().__init__(spec)
        k, c = spec.cnn_kernel, spec.cnn_channels
        self.convs = []
        c_in = spec.in_channels
        for i in range(spec.cnn_layers):
            w = self._add(f"conv{i}.w", b.glorot((c, c_in, k), c_in * k, c * k))
            bias = self._add(f"conv{i}.b", b.zeros(c))
            self.convs.append((w, bias))
            c_in = c
        self.head = _dense(self, "head", b, c, 1)

    def forward(self, x: np.ndarray) -> ad.Tensor:
        h = ad.constant(x)
        for w, bias in self.convs:
            h = ad.relu(ad.conv1d_causal(h, w, bias, dilation=1))
        pooled = ad.mean_pool_time(h)
        w, bias = self.head
        return ad.add(ad.matmul(pooled, w), bias)


class LstmNet(Net):
    def __init__(self, spec: ModelSpec, b: _Builder):
        super().__init__(spec)
        c, h = spec.in_channels, spec.hidden
        self.w = self._add("lstm.w", b.glorot((c + h, 4 * h), c + h, 4 * h))
        bias = np.zeros(4 * h)
        bias[h : 2 * h] = 1.0  # forget gate opens at init
        self.b = self._add("lstm.b", ad.parameter(bias))
        self.head = _dense(self, "head", b, h, 1)

    def forward(self, x: np.ndarray) -> ad.Tensor:
        n, _, t_len = x.shape
        hid = self.spec.hidden
        h = ad.constant(np.zeros((n, hid)))
        c = ad.constant(np.zeros((n, hid)))
        for t in range(t_len):
            xt = ad.constant(np.ascontiguousarray(x[:, :, t]))
            gates = ad.add(ad.matmul(ad.concat([xt, h], axis=1), self.w), self.b)
            i = ad.sigmoid(ad.slice_cols(gates, 0, hid))
            f = ad.sigmoid(ad.slice_cols(gates, hid, 2 * hid))
            g = ad.tanh(ad.slice_cols(gates, 2 * hid, 3 * hid))
            o = ad.sigmoid(ad.slice_cols(gates, 3 * hid, 4 * hid))
            c = ad.add(ad.mul(f, c), ad.mul(i, g))
            h = ad.mul(o, ad.tanh(c))
        w, bias = self.head
        return ad.add(ad.matmul(h, w), bias)


class GruNet(Net):
    def __init__(self, spec: ModelSpec, b: _Builder):
        super().__init__(spec)
        c, h = spec.in_channels, spec.hidden
        self.w_zr = self._add("gru.w_zr", b.glorot((c + h, 2 * h), c + h, 2 * h))
        self.b_zr = self._add("gru.b_zr", b.zeros(2 * h))
        self.w_n = self._add("gru.w_n", b.glorot((c + h, h), c + h, h))
        self.b_n = self._add("gru.b_n", b.zeros(h))
        self.head = _dense(self, "head", b, h, 1)

    def forward(self, x: np.ndarray) -> ad.Tensor:
        n, _, t_len = x.shape
        hid = self.spec.hidden
        h = ad.constant(np.zeros((n, hid)))
        ones = ad.constant(np.ones((n, hid)))
        for t in range(t_len):
            xt = ad.constant(np.ascontiguousarray(x[:, :, t]))
            zr = ad.add(ad.matmul(ad.concat([xt, h], axis=1), self.w_zr), self.b_zr)
            z = ad.sigmoid(ad.slice_cols(zr, 0, hid))
            r = ad.sigmoid(ad.slice_cols(zr, hid, 2 * hid))
            cand = ad.tanh(
                ad.add(ad.matmul(ad.concat([xt, ad.mul(r, h)], axis=1), self.w_n), self.b_n)
            )
            keep = ad.add(ones, ad.scale(z, -1.0))  # 1 - z
            h = ad.add(ad.mul(keep, h), ad.mul(z, cand))
        w, bias = self.head
        return ad.add(ad.matmul(h, w), bias)


class TcnNet(Net):
    def __init__(self, spec: ModelSpec, b: _Builder):
        super().__init__(spec)
        k, c = spec.tcn_kernel, spec.tcn_channels
        self.blocks = []
        c_in = spec.in_channels
        for i, dil in enumerate(spec.tcn_dilations):
            w = self._add(f"block{i}.w", b.glorot((c, c_in, k), c_in * k, c * k))
            bias = self._add(f"block{i}.b", b.zeros(c))
            down = None
            if spec.tcn_residual and c_in != c:
                dw = self._add(f"block{i}.down.w", b.glorot((c, c_in, 1), c_in, c))
                db = self._add(f"block{i}.down.b", b.zeros(c))
                down = (dw, db)
            self.blocks.append((w, bias, dil, down))
            c_in = c
        self.head = _dense(self, "head", b, c, 1)

    def forward(self, x: np.ndarray) -> ad.Tensor:
        h = ad.constant(x)
        for w, bias, dil, down in self.blocks:
            y = ad.relu(ad.conv1d_causal(h, w, bias, dilation=dil))
            if self.spec.tcn_residual:
                res = h if down is None else ad.conv1d_causal(h, down[0], down[1], dilation=1)
                y = ad.add(y, res)
            h = y
        pooled = ad.mean_pool_time(h)
        w, bias = self.head
        return ad.add(ad.matmul(pooled, w), bias)


_NET_CLASSES = {
    "mlp": MLPNet,
    "cnn": Cnn1dNet,
    "lstm": LstmNet,
    "gru": GruNet,
    "tcn": TcnNet,
}


def build(spec: ModelSpec, seed: int, zero_init: bool = False) -> Net:
    """Construct a net with seeded initialization (zero_init for tests)."""
    return _NET_CLASSES[spec.family](spec, _Builder(seed, zero_init))


def predict_proba(net: Net, x: np.ndarray) -> np.ndarray:
    """Sigmoid of the final logit per row; a pure function of (net, x)."""
    if net.spec.family == "mlp":
        if x.ndim != 2 or x.shape[1] != net.spec.n_features:
            raise ad.ShapeMismatchError(f"expected (n, {net.spec.n_features}), got {x.shape}")
    else:
        if x.ndim != 3 or x.shape[1] != net.spec.in_channels:
            raise ad.ShapeMismatchError(
                f"expected (n, {net.spec.in_channels}, {net.spec.window_len}), got {x.shape}"
            )
    z = net.forward(np.asarray(x, dtype=np.float64)).data.reshape(-1)
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
