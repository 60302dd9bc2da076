"""Pair-node graph neural network producing FlexD schedules.

Each node is a user pair ``q`` with users ``n = 2q`` and ``m = 2q + 1``. The
first component of the direction readout means user ``n`` transmits. Complex
channels enter as (Re, Im) pairs and every weight is real.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, gelu, sigmoid, softmax
from .secrecy import Schedule

MODES = ("csi", "distance")


class CheckpointError(ValueError):
    """Unreadable checkpoint: bad magic, truncated data or wrong version."""


class ShapeMismatchError(ValueError):
    """Checkpoint tensors do not fit the model they are loaded into."""


@dataclass
class ModelConfig:
    mode: str = "csi"
    n_eves: int = 2
    proj_dim: int = 8          # c; the projection emits 2c reals
    hidden: int = 64
    layers: int = 3
    head_hidden: int = 32
    area_side_m: float = 1000.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if min(self.n_eves, self.proj_dim, self.hidden, self.layers, self.head_hidden) < 1:
            raise ValueError("model sizes must be positive")

    @property
    def node_dim(self):
        return 4 + 2 * self.proj_dim

    @property
    def eve_dim(self):
        return (4 if self.mode == "csi" else 2) * self.n_eves

    @property
    def proj_name(self):
        return "W_p" if self.mode == "csi" else "W_p_dist"


EDGE_DIM = 16


def _ri(z):
    return np.stack([z.real, z.imag], axis=-1)


class GraphBatch:
    """Raw (un-normalized) graph features for a batch of same-size realizations.

    node: (B, N, 4)   Re/Im of h_{mn}, h_{nm}
    eve:  (B, N, 4K)  Re/Im of g_n, g_m   (csi)   or (B, N, 2K) d_n, d_m (distance)
    edge: (B, N, N, 16) Re/Im of the eight cross channels, zero on the diagonal
    """

    def __init__(self, reals, mode):
        H = np.stack([r.H / np.sqrt(r.noise_w) for r in reals])
        b, n_users, _ = H.shape
        N = n_users // 2
        first = 2 * np.arange(N)
        second = first + 1
        self.n_pairs = N
        self.pmax = np.array([r.pmax_w for r in reals])
        self.node = np.concatenate(
            [_ri(H[:, second, first]), _ri(H[:, first, second])], axis=-1)
        if mode == "csi":
            G = np.stack([r.G / np.sqrt(r.noise_w) for r in reals])
            parts = [G[:, first].real, G[:, first].imag, G[:, second].real, G[:, second].imag]
        else:
            D = np.stack([r.D for r in reals])
            parts = [D[:, first], D[:, second]]
        self.eve = np.concatenate(parts, axis=-1)
        n_, m_ = first[:, None], second[:, None]
        j_, i_ = first[None, :], second[None, :]
        order = [(n_, j_), (j_, n_), (m_, j_), (j_, m_), (n_, i_), (i_, n_), (m_, i_), (i_, m_)]
        edge = np.concatenate([_ri(H[:, a, c]) for a, c in order], axis=-1)
        edge[:, np.arange(N), np.arange(N)] = 0.0
        self.edge = edge

    def subset(self, idx):
        out = object.__new__(GraphBatch)
        out.n_pairs = self.n_pairs
        for name in ("pmax", "node", "eve", "edge"):
            setattr(out, name, getattr(self, name)[idx])
        return out

    @property
    def n_edges(self):
        return self.n_pairs * (self.n_pairs - 1)


def _glorot(rng, fan_out, fan_in):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_out, fan_in))


class PairGNN:
    """Message-passing network over the pair graph plus power/direction heads."""

    def __init__(self, cfg: ModelConfig | None = None):
        self.cfg = cfg or ModelConfig()
        rng = np.random.default_rng(self.cfg.seed)
        c = self.cfg
        self.params: dict[str, Tensor] = {}

        def add(name, arr):
            self.params[name] = Tensor(arr, requires_grad=True, name=name)

        add(c.proj_name, _glorot(rng, 2 * c.proj_dim, c.eve_dim))
        width = c.node_dim
        for layer in range(c.layers):
            add(f"layer{layer}.W_s", _glorot(rng, c.hidden, width))
            add(f"layer{layer}.W_i", _glorot(rng, c.hidden, width))
            add(f"layer{layer}.W_e", _glorot(rng, c.hidden, EDGE_DIM))
            width = c.hidden
        for head, out in (("f_p", 1), ("f_t", 2)):
            dims = [c.hidden, c.head_hidden, c.head_hidden, out]
            for k in range(3):
                add(f"{head}.{k}.W", _glorot(rng, dims[k + 1], dims[k]))
                add(f"{head}.{k}.b", np.zeros(dims[k + 1]))
        # feature standardization; fit_normalization overwrites these
        self.buffers = {
            "norm.node_mean": np.zeros(4), "norm.node_std": np.ones(4),
            "norm.eve_mean": np.zeros(c.eve_dim), "norm.eve_std": np.ones(c.eve_dim),
            "norm.edge_mean": np.zeros(EDGE_DIM), "norm.edge_std": np.ones(EDGE_DIM),
        }
        if c.mode == "distance":
            self.buffers["norm.eve_std"] = np.full(c.eve_dim, c.area_side_m)

    # -- parameters ------------------------------------------------------------
    def trainable(self):
        return list(self.params.values())

    def n_parameters(self, include_projection=True):
        return sum(p.data.size for name, p in self.params.items()
                   if include_projection or name != self.cfg.proj_name)

    def fit_normalization(self, graphs: GraphBatch):
        def stats(a):
            a = a.reshape(-1, a.shape[-1])
            sd = a.std(axis=0)
            return a.mean(axis=0), np.where(sd > 0, sd, 1.0)

        self.buffers["norm.node_mean"], self.buffers["norm.node_std"] = stats(graphs.node)
        N = graphs.n_pairs
        if N > 1:
            off = ~np.eye(N, dtype=bool)
            self.buffers["norm.edge_mean"], self.buffers["norm.edge_std"] = stats(
                graphs.edge[:, off])
        if self.cfg.mode == "csi":
            self.buffers["norm.eve_mean"], self.buffers["norm.eve_std"] = stats(graphs.eve)

    # -- forward -----------------------------------------------------------------
    def _check_eves(self, eve_feats):
        W = self.params[self.cfg.proj_name]
        if np.shape(eve_feats)[-1] != W.shape[1]:
            raise ShapeMismatchError(
                f"{self.cfg.proj_name} expects {W.shape[1]} eavesdropper features, "
                f"got {np.shape(eve_feats)[-1]}")
        return W

    def project_eves(self, eve_feats):
        """Linear projection of (normalized) eavesdropper features to 2c reals."""
        W = self._check_eves(eve_feats)
        return ad._as_tensor(eve_feats) @ W.T

    def input_nodes(self, g: GraphBatch):
        b = self.buffers
        node = (g.node - b["norm.node_mean"]) / b["norm.node_std"]
        self._check_eves(g.eve)
        eve = (g.eve - b["norm.eve_mean"]) / b["norm.eve_std"]
        return ad.concat([Tensor(node), self.project_eves(eve)], axis=-1)

    def input_edges(self, g: GraphBatch):
        b = self.buffers
        edge = (g.edge - b["norm.edge_mean"]) / b["norm.edge_std"]
        N = g.n_pairs
        edge[:, np.arange(N), np.arange(N)] = 0.0
        return edge

    def message_pass(self, x, edge, layer):
        """x(n) <- GELU(W_s x(n) + sum_{j != n} [W_i x(j) + W_e e(n, j)])."""
        P = self.params
        N = x.shape[-2]
        adj = np.ones((N, N)) - np.eye(N)
        own = x @ P[f"layer{layer}.W_s"].T
        neigh = Tensor(adj) @ (x @ P[f"layer{layer}.W_i"].T)
        if N > 1:
            per_edge = Tensor(edge * adj[..., None]) @ P[f"layer{layer}.W_e"].T
            return gelu(own + neigh + per_edge.sum(axis=-2))
        return gelu(own + neigh)

    def _mlp(self, head, x):
        P = self.params
        for k in range(3):
            x = x @ P[f"{head}.{k}.W"].T + P[f"{head}.{k}.b"]
            if k < 2:
                x = gelu(x)
        return x

    def embed(self, g: GraphBatch):
        x = self.input_nodes(g)
        edge = self.input_edges(g)
        for layer in range(self.cfg.layers):
            x = self.message_pass(x, edge, layer)
        return x

    def forward(self, g: GraphBatch):
        """Soft outputs: pair power (B, N) in watts and direction (B, N, 2)."""
        x = self.embed(g)
        B, N = g.node.shape[:2]
        power = sigmoid(self._mlp("f_p", x).reshape(B, N)) * g.pmax[:, None]
        direction = softmax(self._mlp("f_t", x), axis=-1)
        return power, direction

    def infer_batch(self, reals):
        g = GraphBatch(reals, self.cfg.mode)
        power, direction = self.forward(g)
        return [harden(p, d) for p, d in zip(power.data, direction.data)]

    def infer(self, real):
        return self.infer_batch([real])[0]

    # -- checkpoints -------------------------------------------------------------
    def state(self):
        out = {k: v.data for k, v in self.params.items()}
        out.update(self.buffers)
        return out

    def save(self, path, extra=None):
        save_params(path, self.cfg, self.state(), extra)

    def load(self, path):
        """Load tensors from ``path`` into this model, checking names and shapes."""
        cfg, tensors, extra = load_params(path)
        if cfg.mode != self.cfg.mode:
            raise ShapeMismatchError(
                f"checkpoint is for mode {cfg.mode!r}, model uses {self.cfg.mode!r} "
                f"({cfg.proj_name} vs {self.cfg.proj_name})")
        mine = self.state()
        for name, arr in mine.items():
            if name not in tensors:
                raise ShapeMismatchError(f"checkpoint lacks tensor {name}")
            if tensors[name].shape != arr.shape:
                raise ShapeMismatchError(
                    f"{name}: checkpoint shape {tensors[name].shape} != model shape {arr.shape}")
        for name, arr in tensors.items():
            if name in self.params:
                self.params[name].data = arr.copy()
            elif name in self.buffers:
                self.buffers[name] = arr.copy()
            else:
                raise ShapeMismatchError(f"unexpected tensor {name} in checkpoint")
        return extra

    @classmethod
    def from_checkpoint(cls, path):
        cfg, _, _ = load_params(path)
        model = cls(cfg)
        model.load(path)
        return model


def harden(pair_power, direction):
    """Argmax hardening (ties -> first user) into a feasible Schedule."""
    first = direction[:, 0] >= direction[:, 1]
    return Schedule.from_pairs(first, pair_power)


def readout_power(logit, pmax):
    return pmax * float(sigmoid(Tensor(logit)).data)


def readout_direction(logits):
    return softmax(Tensor(np.asarray(logits, dtype=float))).data


CKPT_MAGIC = b"FXGN"
CKPT_VERSION = 1


def save_params(path, cfg: ModelConfig, tensors, extra=None):
    meta = json.dumps({"config": asdict(cfg), "extra": extra or {}}).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", CKPT_MAGIC, CKPT_VERSION, len(tensors), len(meta)))
        fh.write(meta)
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_params(path):
    """Read a checkpoint; returns ``(ModelConfig, {name: array}, extra)``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    off = 0

    def read(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(buf):
            raise CheckpointError(f"truncated checkpoint {path}")
        vals = struct.unpack_from(fmt, buf, off)
        off += size
        return vals

    magic, version, count, meta_len = read("<4sIII")
    if magic != CKPT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (magic {magic!r})")
    if version != CKPT_VERSION:
        raise CheckpointError(f"checkpoint version {version} unsupported (want {CKPT_VERSION})")
    (meta,) = read(f"<{meta_len}s")
    try:
        meta = json.loads(meta.decode())
        cfg = ModelConfig(**meta["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint metadata in {path}") from exc
    tensors = {}
    for _ in range(count):
        (n,) = read("<H")
        (name,) = read(f"<{n}s")
        (ndim,) = read("<B")
        shape = read(f"<{ndim}I")
        size = int(np.prod(shape)) if ndim else 1
        if off + 8 * size > len(buf):
            raise CheckpointError(f"truncated checkpoint {path}")
        arr = np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(shape).astype(float)
        off += 8 * size
        tensors[name.decode()] = arr
    if off != len(buf):
        raise CheckpointError(f"trailing bytes in checkpoint {path}")
    return cfg, tensors, meta.get("extra", {})


def build_graph(real, mode="csi"):
    return GraphBatch([real], mode)


def project_eves_csi(g_m, g_n, W_p):
    """y = W_p [Re g_m || Im g_m || Re g_n || Im g_n]."""
    feats = np.concatenate([np.real(g_m), np.imag(g_m), np.real(g_n), np.imag(g_n)])
    if W_p.shape[1] != feats.size:
        raise ShapeMismatchError(f"W_p has {W_p.shape[1]} columns, features have {feats.size}")
    return W_p @ feats


def project_eves_distance(d_m, d_n, W_p, area_side_m=1000.0):
    feats = np.concatenate([np.asarray(d_m, float), np.asarray(d_n, float)]) / area_side_m
    if W_p.shape[1] != feats.size:
        raise ShapeMismatchError(f"W_p_dist has {W_p.shape[1]} columns, features have {feats.size}")
    return W_p @ feats
