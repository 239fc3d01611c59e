"""Small post-LN transformer encoder in float64 with exact reverse-mode gradients.

Parameters live in :class:`Params`, an ordered name -> ndarray mapping. To
differentiate, wrap them with :func:`track`, run :func:`forward` and any
loss built from :mod:`xlqa.autodiff` primitives, then call :func:`backprop`.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .errors import ContractError, FormatError, InputError, LengthError


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    hidden_dim: int = 32
    num_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = 64
    max_seq_len: int = 64
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "hidden_dim", "num_layers", "num_heads", "ffn_dim", "max_seq_len"):
            if getattr(self, name) <= 0:
                raise InputError(f"encoder config: {name} must be positive")
        if self.hidden_dim % self.num_heads:
            raise InputError("encoder config: hidden_dim must be divisible by num_heads")
        if self.max_seq_len < 2:
            raise InputError("encoder config: max_seq_len must be >= 2")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads


class Params:
    """Named float64 tensors plus the config they were built for."""

    def __init__(self, config: EncoderConfig, tensors: Mapping, frozen: bool = False):
        self.config = config
        self.tensors = dict(tensors)
        self.frozen = frozen

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def names(self):
        return list(self.tensors)

    def copy(self) -> "Params":
        return Params(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def update(self, deltas: Mapping) -> None:
        if self.frozen:
            raise ContractError("cannot update a frozen parameter snapshot")
        for k, d in deltas.items():
            self.tensors[k] = self.tensors[k] + d

    def equals(self, other: "Params") -> bool:
        return (self.names() == other.names()
                and all(np.array_equal(self[k], other[k]) for k in self.tensors))

    def digest(self) -> str:
        h = hashlib.sha256()
        for k, v in self.tensors.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
        return h.hexdigest()

    def num_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())


class ParamsSnapshot(Params):
    """Read-only deep copy; arrays are flagged non-writeable."""

    def __init__(self, params: Params):
        tensors = {}
        for k, v in params.items():
            c = np.array(v, dtype=np.float64, copy=True)
            c.setflags(write=False)
            tensors[k] = c
        super().__init__(params.config, tensors, frozen=True)

    def copy(self) -> Params:
        return Params(self.config, {k: v.copy() for k, v in self.tensors.items()})


def snapshot(params: Params) -> ParamsSnapshot:
    return ParamsSnapshot(params)


def _layer_names(l):
    p = f"layers.{l}."
    return [p + n for n in ("Wq", "bq", "Wk", "bk", "Wv", "bv", "Wo", "bo", "ln1_g", "ln1_b",
                            "W1", "b1", "W2", "b2", "ln2_g", "ln2_b")]


def init_params(config: EncoderConfig) -> Params:
    """Seeded init: scaled uniform matrices, zero biases, unit layer-norm scales."""
    rng = np.random.default_rng(config.seed)
    H, F = config.hidden_dim, config.ffn_dim

    def mat(fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    t = {
        "tok_emb": rng.uniform(-0.5, 0.5, size=(config.vocab_size, H)),
        "pos_emb": rng.uniform(-0.1, 0.1, size=(config.max_seq_len, H)),
        "emb_ln_g": np.ones(H),
        "emb_ln_b": np.zeros(H),
    }
    for l in range(config.num_layers):
        p = f"layers.{l}."
        for w in ("Wq", "Wk", "Wv", "Wo"):
            t[p + w] = mat(H, H)
            t[p + "b" + w[1].lower()] = np.zeros(H)
        t[p + "ln1_g"] = np.ones(H)
        t[p + "ln1_b"] = np.zeros(H)
        t[p + "W1"] = mat(H, F)
        t[p + "b1"] = np.zeros(F)
        t[p + "W2"] = mat(F, H)
        t[p + "b2"] = np.zeros(H)
        t[p + "ln2_g"] = np.ones(H)
        t[p + "ln2_b"] = np.zeros(H)
    return Params(config, t)


def encoder_param_names(config: EncoderConfig) -> list:
    names = ["tok_emb", "pos_emb", "emb_ln_g", "emb_ln_b"]
    for l in range(config.num_layers):
        names += _layer_names(l)
    return names


# --------------------------------------------------------------------------
# forward / backward


class Tracked:
    """Trainable leaves for one differentiable computation (the tape root set)."""

    def __init__(self, params: Params, names=None):
        self.params = params
        self.config = params.config
        keep = set(params.names() if names is None else names)
        self.vars = {
            k: (ad.leaf(v, k) if k in keep else ad.Tensor(v)) for k, v in params.items()
        }

    def __getitem__(self, name):
        return self.vars[name]


def track(params: Params, names=None) -> Tracked:
    return Tracked(params, names)


def backprop(tracked: Tracked, root) -> dict:
    """Exact gradients of the scalar ``root`` w.r.t. every tracked tensor."""
    if not isinstance(root, ad.Tensor):
        root = ad.as_tensor(root)
    if root.data.size != 1:
        raise ContractError(f"backprop needs a scalar root, got shape {root.data.shape}")
    for v in tracked.vars.values():
        v.grad = None
    ad.backward(root)
    out = {}
    for k, v in tracked.vars.items():
        if v.requires_grad:
            out[k] = v.grad if v.grad is not None else np.zeros_like(v.data)
    return out


def _check_ids(config, ids):
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise InputError("subword ids must be a flat sequence")
    if len(ids) > config.max_seq_len:
        raise LengthError(f"sequence of {len(ids)} ids exceeds max_seq_len={config.max_seq_len}")
    if len(ids) and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise InputError(f"subword id out of range [0, {config.vocab_size})")
    return ids


def _vars(source):
    if isinstance(source, Tracked):
        return source.vars, source.config
    return {k: ad.Tensor(v) for k, v in source.items()}, source.config


def _attention(x, v, p, config):
    n = x.shape[0]
    h, d = config.num_heads, config.head_dim

    def heads(w, b):
        return ad.transpose(ad.reshape(x @ v[p + w] + v[p + b], (n, h, d)), (1, 0, 2))

    q, k, val = heads("Wq", "bq"), heads("Wk", "bk"), heads("Wv", "bv")
    scores = ad.mul(q @ ad.transpose(k, (0, 2, 1)), 1.0 / np.sqrt(d))
    ctx = ad.softmax(scores) @ val
    merged = ad.reshape(ad.transpose(ctx, (1, 0, 2)), (n, h * d))
    return merged @ v[p + "Wo"] + v[p + "bo"]


def hidden_states(source, ids) -> list:
    """All layer outputs: index 0 is the embedding layer, ``l`` the l-th block."""
    v, config = _vars(source)
    ids = _check_ids(config, ids)
    n = len(ids)
    if n == 0:
        return [ad.Tensor(np.zeros((0, config.hidden_dim)))] * (config.num_layers + 1)
    x = ad.take_rows(v["tok_emb"], ids) + ad.rows(v["pos_emb"], 0, n)
    x = ad.layer_norm(x, v["emb_ln_g"], v["emb_ln_b"])
    states = [x]
    for l in range(config.num_layers):
        p = f"layers.{l}."
        x = ad.layer_norm(x + _attention(x, v, p, config), v[p + "ln1_g"], v[p + "ln1_b"])
        ff = ad.gelu(x @ v[p + "W1"] + v[p + "b1"]) @ v[p + "W2"] + v[p + "b2"]
        x = ad.layer_norm(x + ff, v[p + "ln2_g"], v[p + "ln2_b"])
        states.append(x)
    return states


def resolve_layer(config: EncoderConfig, layer) -> int:
    top = config.num_layers
    if layer is None:
        return top
    idx = layer + top + 1 if layer < 0 else layer
    if not 0 <= idx <= top:
        raise InputError(f"layer {layer} out of range for a {top}-layer encoder")
    return idx


def forward(source, ids, layer=None):
    """Differentiable per-subword vectors at ``layer`` (default: final layer)."""
    states = hidden_states(source, ids)
    return states[resolve_layer(source.config, layer)]


def encode(params: Params, subword_ids, layer=None) -> np.ndarray:
    """Per-subword contextual vectors, shape ``(len(ids), hidden_dim)``."""
    return forward(params, subword_ids, layer).data


def pooling_matrix(word_ranges, n_rows: int) -> np.ndarray:
    prev = 0
    P = np.zeros((len(word_ranges), n_rows))
    for w, (a, b) in enumerate(word_ranges):
        if not (prev <= a < b <= n_rows):
            raise InputError(f"word range {w} = ({a}, {b}) is empty, overlapping, out of order or out of bounds")
        P[w, a:b] = 1.0 / (b - a)
        prev = b
    return P


def word_pool(subword_vectors, word_ranges):
    """Mean of each word's subword rows; ``word_ranges`` are half-open row ranges."""
    n = subword_vectors.shape[0]
    P = pooling_matrix(word_ranges, n)
    if isinstance(subword_vectors, ad.Tensor):
        return ad.as_tensor(P) @ subword_vectors
    return P @ np.asarray(subword_vectors, dtype=np.float64)


# --------------------------------------------------------------------------
# checkpoints

_MAGIC = b"XLQACKPT"
_VERSION = 1


def save_params(params: Params, path, extra: Mapping | None = None) -> None:
    """Write config + named tensors; deterministic bytes for identical inputs."""
    names = params.names()
    header = {
        "version": _VERSION,
        "config": asdict(params.config),
        "extra": dict(extra or {}),
        "tensors": [{"name": k, "shape": list(params[k].shape)} for k in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(blob)))
        fh.write(blob)
        for k in names:
            fh.write(np.ascontiguousarray(params[k], dtype="<f8").tobytes())


def load_params(path):
    """Return ``(params, extra)`` from a checkpoint written by :func:`save_params`."""
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != _MAGIC:
        raise FormatError(f"{path}: not a parameter checkpoint")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    offset = 16 + hlen
    tensors = {}
    for spec in header["tensors"]:
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        if offset + 8 * count > len(data):
            raise FormatError(f"{path}: truncated tensor data for {spec['name']!r}")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).astype(np.float64)
        tensors[spec["name"]] = arr.reshape(spec["shape"])
        offset += 8 * count
    if offset != len(data):
        raise FormatError(f"{path}: trailing or missing tensor data")
    return Params(EncoderConfig(**header["config"]), tensors), header["extra"]


# --------------------------------------------------------------------------
# finite-difference checking


def gradient_check(params: Params, objective, *, step=1e-5, max_entries=24, seed=0, names=None):
    """Compare ``backprop`` against central differences.

    ``objective(source)`` must build a scalar from ``source`` (either a
    :class:`Tracked` or a plain :class:`Params`). Up to ``max_entries``
    randomly chosen coordinates of each tensor are perturbed. The per-tensor
    error is ``max|analytic - numeric| / max(max|analytic|, max|numeric|)``
    over the sampled coordinates, with the denominator floored at 1e-3 of the
    largest gradient entry so tensors whose true gradient is zero (e.g. key
    biases, which softmax cancels) are not judged on rounding noise alone.
    Returns the worst tensor's error and the per-tensor breakdown.
    """
    tracked = track(params, names)
    grads = backprop(tracked, objective(tracked))
    rng = np.random.default_rng(seed)
    work = params.copy()
    global_scale = max((float(np.abs(g).max(initial=0.0)) for g in grads.values()), default=0.0)
    floor = max(1e-3 * global_scale, 1e-12)
    report = {}
    for name, g in grads.items():
        picks = np.arange(g.size) if g.size <= max_entries else rng.choice(g.size, max_entries, replace=False)
        base = work[name]
        analytic, numeric = [], []
        for idx in picks:
            pos = np.unravel_index(idx, base.shape)
            orig = base[pos]
            base[pos] = orig + step
            up = float(ad.as_tensor(objective(work)).data)
            base[pos] = orig - step
            down = float(ad.as_tensor(objective(work)).data)
            base[pos] = orig
            analytic.append(g[pos])
            numeric.append((up - down) / (2 * step))
        analytic, numeric = np.array(analytic), np.array(numeric)
        scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
        report[name] = float(np.abs(analytic - numeric).max(initial=0.0) / scale)
    return max(report.values(), default=0.0), report
