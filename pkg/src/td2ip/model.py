"""Embedding, pluggable encoder, and shared or decoupled decoders.

Tensors flowing through the network are batched: histories are
``B x T_p x J x 3`` and outputs ``B x T x J x 3``. Every weight matrix is
stored ``out x in``.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .data import substream
from .diffcore import DimensionError, Tensor

ENCODERS = ("mlp", "gru", "gcn")
DECODER_MODES = ("shared", "decoupled")
ACTIVATIONS = ("relu", "tanh", "sigmoid")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    joints: int
    t_p: int
    t_f: int
    d_e: int = 16
    d_h: int = 32
    feature: int = 32
    encoder: str = "gru"
    decoder_mode: str = "decoupled"
    activation: str = "relu"
    residual: bool = True
    gcn_layers: int = 2

    def __post_init__(self):
        for name in ("joints", "t_p", "t_f", "d_e", "d_h", "feature", "gcn_layers"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.encoder not in ENCODERS:
            raise ConfigError(f"encoder must be one of {ENCODERS}, got {self.encoder!r}")
        if self.decoder_mode not in DECODER_MODES:
            raise ConfigError(f"decoder_mode must be one of {DECODER_MODES}, got {self.decoder_mode!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def horizon(self) -> int:
        return self.t_p + self.t_f


@dataclass
class Td2ipModel:
    config: ModelConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    def param_count(self) -> int:
        return int(sum(p.values.size for p in self.params.values()))

    def copy(self) -> "Td2ipModel":
        return Td2ipModel(self.config, {k: Tensor(v.values.copy(), True, k) for k, v in self.params.items()})

    def decoder_names(self) -> list[str]:
        return ["h", "f"] if self.config.decoder_mode == "decoupled" else ["s"]


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    F, De, Dh = cfg.feature, cfg.d_e, cfg.d_h
    shapes: dict[str, tuple[int, ...]] = {
        "embed.W1": (Dh, 3), "embed.b1": (Dh,),
        "embed.W2": (De, Dh), "embed.b2": (De,),
    }
    if cfg.encoder == "mlp":
        shapes.update({"enc.W1": (F, cfg.t_p * De), "enc.b1": (F,), "enc.W2": (F, F), "enc.b2": (F,)})
    elif cfg.encoder == "gru":
        for g in "zrn":
            shapes.update({f"enc.W{g}": (F, De), f"enc.U{g}": (F, F), f"enc.b{g}": (F,)})
    else:
        shapes["enc.A"] = (cfg.joints, cfg.joints)
        width = De
        for i in range(1, cfg.gcn_layers + 1):
            shapes.update({f"enc.W{i}": (F, width), f"enc.b{i}": (F,)})
            width = F
    lengths = {"h": cfg.t_p, "f": cfg.t_f, "s": cfg.horizon}
    for d in (["h", "f"] if cfg.decoder_mode == "decoupled" else ["s"]):
        shapes.update({
            f"dec.{d}.W1": (F, F), f"dec.{d}.b1": (F,),
            f"dec.{d}.W2": (lengths[d] * 3, F), f"dec.{d}.b2": (lengths[d] * 3,),
        })
    return shapes


def init_params(cfg: ModelConfig, seed: int) -> Td2ipModel:
    """Glorot-uniform matrices, zero biases; each tensor has its own seed substream.

    Keying the stream on the parameter name keeps embedding and encoder
    weights identical across decoder modes for the same seed.
    """
    params = {}
    for name, shape in param_shapes(cfg).items():
        if len(shape) == 1:
            vals = np.zeros(shape)
        else:
            a = np.sqrt(6.0 / (shape[0] + shape[1]))
            vals = substream(seed, "init", *name.encode()).uniform(-a, a, size=shape)
        params[name] = Tensor(vals, requires_grad=True, name=name)
    return Td2ipModel(cfg, params)


# ---------------------------------------------------------------- pieces


def dense(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    return dc.add(dc.matmul(x, dc.transpose(W)), b)


def embed(model: Td2ipModel, X) -> Tensor:
    """Per (frame, joint) two-layer projection of the 3-D coordinates."""
    X = dc._as_tensor(X)
    cfg, p = model.config, model.params
    if X.ndim != 4 or X.shape[2:] != (cfg.joints, 3):
        raise DimensionError(f"history shape {X.shape} does not match B x T x {cfg.joints} x 3")
    act = dc.activation(cfg.activation)
    B, T = X.shape[:2]
    h = act(dense(dc.reshape(X, (-1, 3)), p["embed.W1"], p["embed.b1"]))
    e = dense(h, p["embed.W2"], p["embed.b2"])
    return dc.reshape(e, (B, T, cfg.joints, cfg.d_e))


def time_encoding(t_p: int, joints: int, width: int) -> np.ndarray:
    """Fixed sinusoidal frame-position code, ``t_p x joints x width``."""
    pos = np.arange(t_p)[:, None]
    freq = 1.0 / (10000.0 ** (np.arange(0, width, 2) / width))
    enc = np.zeros((t_p, width))
    enc[:, 0::2] = np.sin(pos * freq)
    enc[:, 1::2] = np.cos(pos * freq[: width // 2])
    return np.repeat(enc[:, None, :], joints, axis=1)


def _encode_mlp(model, E):
    cfg, p = model.config, model.params
    act = dc.activation(cfg.activation)
    B, T, J, De = E.shape
    flat = dc.reshape(dc.transpose(E, (0, 2, 1, 3)), (B * J, T * De))
    h = act(dense(flat, p["enc.W1"], p["enc.b1"]))
    return dense(h, p["enc.W2"], p["enc.b2"])


def _encode_gru(model, E):
    p = model.params
    B, T, J, De = E.shape
    seq = dc.reshape(dc.transpose(E, (1, 0, 2, 3)), (T * B * J, De))
    gates = {
        g: dc.reshape(dense(seq, p[f"enc.W{g}"], p[f"enc.b{g}"]), (T, B * J, -1))
        for g in "zrn"
    }
    h = Tensor(np.zeros((B * J, model.config.feature)))
    for t in range(T):
        xs = {g: dc.reshape(dc.slice_axis(gates[g], t, t + 1, 0), (B * J, -1)) for g in "zrn"}
        z = dc.sigmoid(dc.add(xs["z"], dc.matmul(h, dc.transpose(p["enc.Uz"]))))
        r = dc.sigmoid(dc.add(xs["r"], dc.matmul(h, dc.transpose(p["enc.Ur"]))))
        n = dc.tanh(dc.add(xs["n"], dc.matmul(dc.mul(r, h), dc.transpose(p["enc.Un"]))))
        # h' = (1 - z) * n + z * h
        h = dc.add(n, dc.mul(z, dc.sub(h, n)))
    return h


def _encode_gcn(model, E):
    cfg, p = model.config, model.params
    act = dc.activation(cfg.activation)
    B, T, J, De = E.shape
    H = dc.add(E, Tensor(time_encoding(T, J, De)))
    A_t = dc.transpose(p["enc.A"])
    for i in range(1, cfg.gcn_layers + 1):
        C = H.shape[-1]
        # mix joints: (B,T,C,J) @ A^T
        mixed = dc.matmul(dc.reshape(dc.transpose(H, (0, 1, 3, 2)), (B * T * C, J)), A_t)
        mixed = dc.transpose(dc.reshape(mixed, (B, T, C, J)), (0, 1, 3, 2))
        H = act(dense(dc.reshape(mixed, (B * T * J, C)), p[f"enc.W{i}"], p[f"enc.b{i}"]))
        H = dc.reshape(H, (B, T, J, cfg.feature))
    return dc.reshape(dc.mean_axis(H, 1), (B * J, cfg.feature))


_ENCODERS = {"mlp": _encode_mlp, "gru": _encode_gru, "gcn": _encode_gcn}


def encode(model: Td2ipModel, E: Tensor) -> Tensor:
    """Per-joint feature M, shape ``B x J x F``."""
    try:
        fn = _ENCODERS[model.config.encoder]
    except KeyError:
        raise ConfigError(f"unknown encoder kind {model.config.encoder!r}") from None
    B, _, J, _ = E.shape
    return dc.reshape(fn(model, E), (B, J, model.config.feature))


def _run_decoder(model, M, which: str, length: int, anchor):
    cfg, p = model.config, model.params
    act = dc.activation(cfg.activation)
    B, J, F = M.shape
    h = act(dense(dc.reshape(M, (B * J, F)), p[f"dec.{which}.W1"], p[f"dec.{which}.b1"]))
    out = dense(h, p[f"dec.{which}.W2"], p[f"dec.{which}.b2"])
    out = dc.transpose(dc.reshape(out, (B, J, length, 3)), (0, 2, 1, 3))
    if anchor is not None:
        out = dc.add(out, Tensor(np.repeat(anchor[:, None], length, axis=1)))
    return out


def decode(model: Td2ipModel, M: Tensor, anchor: np.ndarray | None = None) -> dict[str, Tensor]:
    """Decoder outputs keyed 'h'/'f' (decoupled) or 's' (shared).

    ``anchor`` is the last observed frame ``B x J x 3``; when given, each
    decoder predicts offsets from it.
    """
    cfg = model.config
    if M.ndim != 3 or M.shape[-1] != cfg.feature:
        raise DimensionError(f"feature shape {M.shape} does not match width {cfg.feature}")
    lengths = {"h": cfg.t_p, "f": cfg.t_f, "s": cfg.horizon}
    return {d: _run_decoder(model, M, d, lengths[d], anchor) for d in model.decoder_names()}


def _batched(X) -> tuple[np.ndarray, bool]:
    X = np.asarray(X.values if isinstance(X, Tensor) else X, dtype=np.float64)
    if X.ndim == 3:
        return X[None], True
    return X, False


def forward_parts(model: Td2ipModel, X) -> tuple[Tensor, Tensor, dict[str, Tensor]]:
    """Run the full pipeline; returns (prediction, encoder feature, decoder outputs)."""
    Xb, _ = _batched(X)
    cfg = model.config
    if Xb.shape[1:] != (cfg.t_p, cfg.joints, 3):
        raise DimensionError(f"history shape {Xb.shape[1:]} != ({cfg.t_p}, {cfg.joints}, 3)")
    M = encode(model, embed(model, Xb))
    parts = decode(model, M, Xb[:, -1] if cfg.residual else None)
    if cfg.decoder_mode == "decoupled":
        out = dc.concat_axis(parts["h"], parts["f"], axis=1)
    else:
        out = parts["s"]
    return out, M, parts


def forward(model: Td2ipModel, X) -> Tensor:
    """Prediction of the whole window ``[history; future]``, ``B x T x J x 3``."""
    return forward_parts(model, X)[0]


def forward_inverse(model: Td2ipModel, X_r) -> Tensor:
    # same parameters, same code path: the reversed history is just another input
    return forward(model, X_r)


def features(model: Td2ipModel, X) -> np.ndarray:
    """Encoder output flattened per sample, ``B x (J*F)``."""
    Xb, _ = _batched(X)
    M = encode(model, embed(model, Xb))
    return M.values.reshape(M.shape[0], -1)


# ---------------------------------------------------------------- TDW weight files

TDW_MAGIC = "TDW 1"


def save_tdw(arrays: dict[str, np.ndarray], path: str | os.PathLike) -> None:
    """Named arrays as text: name, rank, extents, then the values on one line."""
    lines = [TDW_MAGIC, str(len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        if any(c.isspace() for c in name):
            raise ValueError(f"array name {name!r} contains whitespace")
        lines.append(f"{name} {arr.ndim} " + " ".join(str(d) for d in arr.shape))
        lines.append(" ".join(repr(float(v)) for v in arr.reshape(-1)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_tdw(path: str | os.PathLike) -> dict[str, np.ndarray]:
    lines = Path(path).read_text(encoding="ascii").replace("\r\n", "\n").split("\n")
    if not lines or lines[0].strip() != TDW_MAGIC:
        raise ValueError(f"{path}: not a {TDW_MAGIC!r} file")
    try:
        count = int(lines[1])
        out = {}
        for k in range(count):
            head = lines[2 + 2 * k].split()
            name, rank = head[0], int(head[1])
            shape = tuple(int(d) for d in head[2: 2 + rank])
            body = lines[3 + 2 * k].split()
            vals = np.array([float(v) for v in body], dtype=np.float64)
            if vals.size != int(np.prod(shape)):
                raise ValueError(f"array {name!r}: {vals.size} values for shape {shape}")
            out[name] = vals.reshape(shape)
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}: malformed TDW file ({exc})") from None
    return out


def model_arrays(model: Td2ipModel) -> dict[str, np.ndarray]:
    return {k: v.values for k, v in model.params.items()}


def load_into(cfg: ModelConfig, arrays: dict[str, np.ndarray]) -> Td2ipModel:
    """Build a model from stored arrays, checking every expected shape."""
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name not in arrays:
            raise DimensionError(f"weights lack {name!r} required by the config")
        if arrays[name].shape != shape:
            raise DimensionError(
                f"{name}: weights have shape {arrays[name].shape}, config expects {shape}")
        params[name] = Tensor(arrays[name].copy(), requires_grad=True, name=name)
    return Td2ipModel(cfg, params)


def config_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)
