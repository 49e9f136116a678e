"""Dual-attention graph network mapping a fusion graph to parallelogram parameters.

Each layer computes two attention distributions per head, one over the
temporal (same source, adjacent slot) neighbourhood and one over the spatial
(other sources, same slot) neighbourhood, blends them with a learnable
``lambda = sigmoid(raw)`` and aggregates projected neighbour messages. Layer
outputs go through layer norm, ELU, dropout and a residual add. Nodes are
mean-pooled and an affine head emits 8 raw values, decoded with training
label statistics (softplus keeps length and width positive).
"""
from __future__ import annotations

import base64
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidConfig, IsolatedNode, SchemaMismatch, ShapeMismatch
from .geometry import ParallelogramState
from .graph import (INTER_MASK, INTRA_MASK, N_FEATURES, N_NODES, FeatureStats, normalize_array,
                    recenter, reference_point)

CHECKPOINT_FORMAT = "leo-checkpoint"
CHECKPOINT_VERSION = 1
N_OUT = 8
POSITIVE_DIMS = (2, 3)  # l, w
LABEL_STD_FLOOR = 0.05


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 128
    heads: int = 4
    layers: int = 4
    dropout: float = 0.1
    pool: str = "mean"
    leaky_slope: float = 0.2
    recenter: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.heads:
            raise InvalidConfig(f"heads ({self.heads}) must divide d_model ({self.d_model})")
        if self.pool not in ("mean", "max"):
            raise InvalidConfig(f"unknown pool {self.pool!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfig("dropout must lie in [0, 1)")
        if self.layers < 1:
            raise InvalidConfig("need at least one layer")


@dataclass(frozen=True)
class LabelStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, float).reshape(N_OUT))
        object.__setattr__(self, "std", np.maximum(np.asarray(self.std, float).reshape(N_OUT),
                                                   LABEL_STD_FLOOR))

    @classmethod
    def from_labels(cls, labels) -> "LabelStats":
        y = np.array([np.asarray(getattr(l, "as_array", lambda: l)(), float) for l in labels])
        return cls(y.mean(axis=0), y.std(axis=0))

    @classmethod
    def identity(cls) -> "LabelStats":
        m = np.zeros(N_OUT)
        m[list(POSITIVE_DIMS)] = 1.0
        return cls(m, np.ones(N_OUT))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "LabelStats":
        return cls(d["mean"], d["std"])


def _inv_softplus(y: np.ndarray) -> np.ndarray:
    y = np.maximum(y, 1e-6)
    return np.where(y > 30, y, np.log(np.expm1(np.minimum(y, 30))))


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, np.ndarray]
    feature_stats: FeatureStats = field(default_factory=FeatureStats.identity)
    label_stats: LabelStats = field(default_factory=LabelStats.identity)

    # --- construction ---------------------------------------------------------

    @classmethod
    def init(cls, config: ModelConfig = ModelConfig(), feature_stats=None, label_stats=None) -> "Model":
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x6A7]))
        d, H = config.d_model, config.heads
        p: dict[str, np.ndarray] = {
            "in.W": ad.glorot(rng, N_FEATURES, d),
            "in.b": np.zeros(d),
        }
        for li in range(config.layers):
            dh = layer_head_dim(config, li)
            for br in ("intra", "inter"):
                p[f"l{li}.W_{br}"] = ad.glorot(rng, d, H * dh)
                p[f"l{li}.a_{br}"] = ad.glorot(rng, 2 * dh, 1, shape=(H, 2 * dh))
            p[f"l{li}.W_msg"] = ad.glorot(rng, d, H * dh)
            p[f"l{li}.lam"] = np.zeros(1)  # sigmoid(0) = 0.5
            p[f"l{li}.bias"] = np.zeros(d)
            p[f"l{li}.ln_g"] = np.ones(d)
            p[f"l{li}.ln_b"] = np.zeros(d)
        p["out.W"] = np.zeros((d, N_OUT))  # start at the label mean
        p["out.b"] = np.zeros(N_OUT)
        return cls(config, p, feature_stats or FeatureStats.identity(), label_stats or LabelStats.identity())

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def lambdas(self) -> list[float]:
        return [float(1.0 / (1.0 + math.exp(-self.params[f"l{i}.lam"][0]))) for i in range(self.config.layers)]

    # --- forward --------------------------------------------------------------

    def forward(self, x, *, training: bool = False, seed: int = 0, step: int = 0,
                lam_override: float | None = None, masks=None, tensors: dict | None = None,
                return_nodes: bool = False):
        """Raw 8-vectors for a batch of normalised feature matrices ``x`` (B, 48, 11).

        ``tensors`` maps parameter names to Tensors (for differentiation);
        otherwise constant Tensors wrap the stored arrays.
        """
        cfg = self.config
        P = tensors if tensors is not None else {k: Tensor(v) for k, v in self.params.items()}
        x = ad.as_tensor(x)
        if x.ndim == 2:
            x = x.reshape(1, *x.shape)
        if x.shape[-2:] != (N_NODES, N_FEATURES) and masks is None:
            raise ShapeMismatch(f"graph features {x.shape} vs expected (B, {N_NODES}, {N_FEATURES})")
        intra, inter = masks if masks is not None else (INTRA_MASK, INTER_MASK)
        if not (intra.any(axis=1).all() and inter.any(axis=1).all()):
            raise IsolatedNode("every node needs a neighbour in both attention branches")
        h = x @ P["in.W"] + P["in.b"]
        for li in range(cfg.layers):
            z = self._layer(h, li, P, intra, inter, lam_override)
            z = ad.layer_norm(z, P[f"l{li}.ln_g"], P[f"l{li}.ln_b"])
            z = ad.elu(z)
            z = ad.dropout(z, cfg.dropout, training=training, seed=seed, layer=li, step=step)
            h = h + z
        pooled = h.mean(axis=1) if cfg.pool == "mean" else ad.max_(h, axis=1)
        raw = pooled @ P["out.W"] + P["out.b"]
        return (raw, h) if return_nodes else raw

    def _layer(self, h, li, P, intra, inter, lam_override):
        cfg = self.config
        H, dh = cfg.heads, layer_head_dim(cfg, li)
        B, N = h.shape[0], h.shape[1]

        def heads(t):  # (B, N, H*dh) -> (B, H, N, dh)
            return ad.transpose(t.reshape(B, N, H, dh), (0, 2, 1, 3))

        alphas = []
        for br, mask in (("intra", intra), ("inter", inter)):
            wh = heads(h @ P[f"l{li}.W_{br}"])
            alphas.append(attention_from_projection(wh, P[f"l{li}.a_{br}"], mask, cfg.leaky_slope))
        if lam_override is None:
            lam = ad.sigmoid(P[f"l{li}.lam"])
        else:
            lam = Tensor(np.array([float(lam_override)]))
        alpha = alphas[0] * lam + alphas[1] * (1.0 - lam)
        msg = alpha @ heads(h @ P[f"l{li}.W_msg"])  # (B, H, N, dh)
        if li == cfg.layers - 1:
            out = msg.mean(axis=1)
        else:
            out = ad.transpose(msg, (0, 2, 1, 3)).reshape(B, N, H * dh)
        return out + P[f"l{li}.bias"]

    def decode(self, raw) -> Tensor:
        """Raw outputs to parameter space: affine with label stats, softplus for l and w."""
        raw = ad.as_tensor(raw)
        mu, sd = self.label_stats.mean, self.label_stats.std
        lin_mask = np.ones(N_OUT)
        lin_mask[list(POSITIVE_DIMS)] = 0.0
        shift = np.zeros(N_OUT)
        shift[list(POSITIVE_DIMS)] = _inv_softplus(mu[list(POSITIVE_DIMS)] / sd[list(POSITIVE_DIMS)])
        lin = (raw * sd + mu) * lin_mask
        pos = ad.softplus(raw + shift) * (sd * (1.0 - lin_mask))
        return lin + pos

    # --- graph-level helpers -----------------------------------------------------

    def origins(self, graphs) -> np.ndarray:
        if not self.config.recenter:
            return np.zeros((len(graphs), 2))
        return np.stack([reference_point(g.features) for g in graphs])

    def inputs(self, graphs, origins=None) -> np.ndarray:
        """Recentred (optional) and normalised (B, 48, 11) inputs."""
        origins = self.origins(graphs) if origins is None else origins
        return np.stack([normalize_array(recenter(g.features, o) if self.config.recenter else g.features,
                                         self.feature_stats)
                         for g, o in zip(graphs, origins)])

    @staticmethod
    def relative_targets(graphs, origins) -> np.ndarray:
        y = np.stack([g.target.as_array() for g in graphs])
        y[:, :2] -= origins
        return y

    def predict_graphs(self, graphs, batch: int = 256, **kw) -> np.ndarray:
        """Absolute (B, 8) predictions for raw graphs in eval mode."""
        graphs = list(graphs)
        out = []
        for s in range(0, len(graphs), batch):
            chunk = graphs[s:s + batch]
            o = self.origins(chunk)
            pred = self.predict(self.inputs(chunk, o), **kw)
            pred[:, :2] += o
            out.append(pred)
        return np.concatenate(out) if out else np.zeros((0, N_OUT))

    def predict(self, x, **kw) -> np.ndarray:
        """Decoded (B, 8) predictions in eval mode (no tape)."""
        return self.decode(self.forward(x, training=False, **kw)).value

    def predict_states(self, x, **kw) -> list[ParallelogramState]:
        return [ParallelogramState.from_array(r) for r in self.predict(x, **kw)]

    def attention(self, x, layer: int, branch: str, head: int, masks=None) -> np.ndarray:
        """(48, 48) attention coefficients of one graph for a layer/branch/head."""
        x = np.asarray(x, float)
        h = Tensor(x[None] @ self.params["in.W"] + self.params["in.b"])
        P = {k: Tensor(v) for k, v in self.params.items()}
        intra, inter = masks if masks is not None else (INTRA_MASK, INTER_MASK)
        for li in range(layer):
            z = self._layer(h, li, P, intra, inter, None)
            z = ad.elu(ad.layer_norm(z, P[f"l{li}.ln_g"], P[f"l{li}.ln_b"]))
            h = h + z
        return attention_coefficients(h.value[0], intra if branch == "intra" else inter,
                                      self.params[f"l{layer}.W_{branch}"],
                                      self.params[f"l{layer}.a_{branch}"], head,
                                      self.config.heads, self.config.leaky_slope)

    # --- persistence ----------------------------------------------------------

    def to_dict(self) -> dict:
        arrays = {
            k: {"shape": list(v.shape),
                "data": base64.b64encode(np.ascontiguousarray(v, dtype="<f8").tobytes()).decode("ascii")}
            for k, v in sorted(self.params.items())
        }
        body = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "feature_stats": self.feature_stats.to_dict(),
            "label_stats": self.label_stats.to_dict(),
            "params": arrays,
        }
        body["sha256"] = _content_hash(body)
        return body

    @classmethod
    def from_dict(cls, d: dict) -> "Model":
        if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
            raise SchemaMismatch(f"checkpoint format {d.get('format')!r} v{d.get('version')!r} not supported")
        body = {k: v for k, v in d.items() if k != "sha256"}
        if _content_hash(body) != d.get("sha256"):
            raise SchemaMismatch("checkpoint content hash mismatch")
        config = ModelConfig(**d["config"])
        params = {}
        for k, a in d["params"].items():
            arr = np.frombuffer(base64.b64decode(a["data"]), dtype="<f8").astype(np.float64)
            params[k] = arr.reshape(a["shape"])
        expected = cls.init(config)
        for k, v in expected.params.items():
            if k not in params or params[k].shape != v.shape:
                raise SchemaMismatch(f"checkpoint parameter {k} missing or mis-shaped")
        if set(params) != set(expected.params):
            raise SchemaMismatch("checkpoint has unexpected parameters")
        return cls(config, params, FeatureStats.from_dict(d["feature_stats"]),
                   LabelStats.from_dict(d["label_stats"]))

    def save(self, path) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        Path(path).write_text(text + "\n", encoding="utf-8")
        return hashlib.sha256((text + "\n").encode()).hexdigest()

    @classmethod
    def load(cls, path) -> "Model":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise SchemaMismatch(f"{path}: not a JSON checkpoint ({e})") from None
        return cls.from_dict(d)


def _content_hash(body: dict) -> str:
    return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def layer_head_dim(config: ModelConfig, layer: int) -> int:
    """Heads are concatenated in inner layers (d/H each) and averaged in the last (d each)."""
    return config.d_model if layer == config.layers - 1 else config.d_model // config.heads


def attention_from_projection(wh, a, mask, slope: float = 0.2):
    """Masked softmax of LeakyReLU(a_src . Wh_i + a_dst . Wh_j) over neighbours j.

    ``wh`` is (B, H, N, dh) and ``a`` is (H, 2*dh). Returns (B, H, N, N).
    """
    H, two_dh = a.shape
    dh = two_dh // 2
    a_src = a[:, :dh].reshape(1, H, 1, dh)
    a_dst = a[:, dh:].reshape(1, H, 1, dh)
    s = (wh * a_src).sum(axis=-1, keepdims=True)  # (B, H, N, 1)
    t = (wh * a_dst).sum(axis=-1, keepdims=True)  # (B, H, N, 1)
    logits = ad.leaky_relu(s + ad.transpose(t, (0, 1, 3, 2)), slope)
    return ad.softmax_masked(logits, mask, axis=-1)


def attention_coefficients(h, mask, W, a, head: int, heads: int, slope: float = 0.2) -> np.ndarray:
    """Numpy-only coefficients of one head for node features ``h`` (N, d)."""
    h = np.asarray(h, float)
    if not np.asarray(mask).any(axis=1).all():
        raise IsolatedNode("node without neighbours")
    dh = W.shape[1] // heads
    wh = (h @ W)[:, head * dh:(head + 1) * dh]
    return attention_from_projection(Tensor(wh[None, None]), Tensor(a[head:head + 1]), mask, slope).value[0, 0]
