"""NHGCN, NHGCN-SS and the GCN / MLP / GCN+X baselines on top of :mod:`nhgcn.autodiff`."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Literal, Mapping

import numpy as np
import scipy.sparse as sp

from .autodiff import LOG_FLOOR, Node, Tape, glorot
from .graph import Graph, NormAdj, apply_mask, masked_normalized, normalize_adjacency
from .metrics import MaskPair

ARCHS = ("nhgcn", "nhgcn_ss", "gcn", "mlp", "gcn_plus_x")
COMBINERS = ("add", "concatenate", "maxpooling")
ACTIVATIONS = ("relu", "tanh")
GROUPS = ("low", "high")

Mode = Literal["train", "eval"]
Params = dict[str, np.ndarray]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    in_dim: int
    n_classes: int
    arch: str = "nhgcn"
    hidden: int = 64
    activation: str = "relu"
    combiner: str = "add"
    self_loop: bool = True
    dropout_agg: float = 0.5
    dropout_comb: float = 0.5
    hop: int = 1
    inv_threshold: float = 2.0
    # None resolves to True for nhgcn_ss and False otherwise
    share_weights: bool | None = None
    renormalize_after_mask: bool = False

    def __post_init__(self) -> None:
        if self.share_weights is None:
            object.__setattr__(self, "share_weights", self.arch == "nhgcn_ss")
        self.validate()

    @property
    def threshold(self) -> float:
        return 1.0 / self.inv_threshold

    @property
    def uses_masks(self) -> bool:
        return self.arch in ("nhgcn", "nhgcn_ss")

    def validate(self) -> None:
        if self.arch not in ARCHS:
            raise ConfigError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.combiner not in COMBINERS:
            raise ConfigError(f"combiner must be one of {COMBINERS}, got {self.combiner!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.in_dim < 1 or self.hidden < 1:
            raise ConfigError("in_dim and hidden must be positive")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")
        for name in ("dropout_agg", "dropout_comb"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be in [0, 1)")
        if self.hop < 1:
            raise ConfigError("hop must be >= 1")
        if self.inv_threshold < 1.0:
            raise ConfigError("inv_threshold (1/T) must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class Prediction:
    probs: np.ndarray
    labels: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", self.probs.argmax(axis=1))


# -- parameters ----------------------------------------------------------------


def _w(cfg: ModelConfig, name: str, group: str) -> str:
    return name if cfg.share_weights else f"{name}_{group}"


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    f, h, c = cfg.in_dim, cfg.hidden, cfg.n_classes
    if cfg.arch in ("gcn", "mlp"):
        return {"W1": (f, h), "W2": (h, c)}
    if cfg.arch == "gcn_plus_x":
        return {"W1": (f, h), "W2": (h, h), "W_x": (f, h), "W_o": (h, c), "alpha": (2,)}
    shapes: dict[str, tuple[int, ...]] = {}
    for g in GROUPS:
        shapes[_w(cfg, "W1", g)] = (f, h)
        shapes[_w(cfg, "W2", g)] = (h, h)
    shapes["W_x"] = (f, h)
    shapes["W_o"] = (3 * h if cfg.combiner == "concatenate" else h, c)
    if cfg.combiner != "maxpooling":
        shapes["alpha"] = (3,)
    return shapes


def init_params(cfg: ModelConfig, seed: int) -> Params:
    """Glorot-uniform weights; combiner logits start at zero (equal weights)."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        params[name] = np.zeros(shape) if name == "alpha" else glorot(rng, *shape)
    return params


def param_count(cfg: ModelConfig) -> int:
    return int(sum(np.prod(s) for s in param_shapes(cfg).values()))


def reported_param_formula(cfg: ModelConfig) -> int:
    """The closed-form count ``3 + 2(2(f f' + f' f')) + f f' + 3 f' c`` (minus 3 for
    maxpooling), for comparison with :func:`param_count`."""
    f, h, c = cfg.in_dim, cfg.hidden, cfg.n_classes
    total = 3 + 2 * (2 * (f * h + h * h)) + f * h + 3 * h * c
    return total - 3 if cfg.combiner == "maxpooling" else total


# -- graph operators -----------------------------------------------------------


class GraphOperators:
    """Normalized adjacency for one graph plus the masked per-channel operators.

    Masked operators are cached for the most recent mask pair, since masks only
    change at NH update events.
    """

    def __init__(self, graph: Graph, cfg: ModelConfig):
        self.graph = graph
        self.cfg = cfg
        self.norm: NormAdj = normalize_adjacency(graph, cfg.self_loop)
        self._key: bytes | None = None
        self._cached: dict[str, tuple[sp.csr_matrix, sp.csr_matrix]] = {}

    @property
    def n(self) -> int:
        return self.graph.n

    def _masked(self, mask: np.ndarray, side: str) -> sp.csr_matrix:
        if self.cfg.renormalize_after_mask:
            return masked_normalized(self.graph, mask, side, self.cfg.self_loop)
        return apply_mask(self.norm, mask, side)

    def channel_ops(self, masks: MaskPair) -> dict[str, tuple[sp.csr_matrix, sp.csr_matrix]]:
        """``{group: (layer-1 operator, layer-2 operator)}``."""
        if masks.n != self.n:
            raise ValueError(f"mask length {masks.n} does not match graph size {self.n}")
        key = masks.low.tobytes()
        if key != self._key:
            first = "source" if self.cfg.arch == "nhgcn_ss" else "target"
            ops = {}
            for g in GROUPS:
                m = getattr(masks, g)
                ops[g] = (self._masked(m, first), self._masked(m, "source"))
            self._cached, self._key = ops, key
        return self._cached


# -- forward passes ------------------------------------------------------------


def _combine(tape: Tape, outs: list[Node], p: dict[str, Node], combiner: str) -> Node:
    if combiner == "maxpooling":
        return tape.maximum(outs)
    alpha = tape.scalar_softmax(p["alpha"])
    scaled = [tape.scale(h, alpha, i) for i, h in enumerate(outs)]
    if combiner == "add":
        return tape.add(scaled)
    return tape.concat_cols(scaled)


def _two_layer_channel(tape, x, op1, op2, w1, w2, cfg, training, rng) -> Node:
    h1 = tape.activation(cfg.activation, tape.spmm(op1, tape.matmul(x, w1)))
    h1 = tape.dropout(h1, cfg.dropout_agg, training, rng)
    return tape.activation(cfg.activation, tape.spmm(op2, tape.matmul(h1, w2)))


def _check_inputs(X: np.ndarray, cfg: ModelConfig, n: int) -> None:
    if X.shape != (n, cfg.in_dim):
        raise ValueError(f"feature matrix shape {X.shape} != ({n}, {cfg.in_dim})")


def build_forward(
    tape: Tape,
    params: Mapping[str, np.ndarray],
    X: np.ndarray,
    ops: GraphOperators | None,
    masks: MaskPair | None,
    cfg: ModelConfig,
    training: bool,
    rng: np.random.Generator | None,
) -> Node:
    """Record one forward pass on ``tape`` and return the soft-assignment node."""
    p = {k: tape.param(k, v) for k, v in params.items()}
    x = tape.dropout(tape.const(X), cfg.dropout_agg, training, rng)

    if cfg.arch == "mlp":
        h = tape.activation(cfg.activation, tape.matmul(x, p["W1"]))
        h = tape.dropout(h, cfg.dropout_agg, training, rng)
        return tape.row_softmax(tape.matmul(h, p["W2"]))

    if ops is None:
        raise ValueError(f"{cfg.arch} needs graph operators")
    _check_inputs(X, cfg, ops.n)
    a = ops.norm.matrix

    if cfg.arch == "gcn":
        h = tape.activation(cfg.activation, tape.spmm(a, tape.matmul(x, p["W1"])))
        h = tape.dropout(h, cfg.dropout_agg, training, rng)
        return tape.row_softmax(tape.spmm(a, tape.matmul(h, p["W2"])))

    if cfg.arch == "gcn_plus_x":
        outs = [_two_layer_channel(tape, x, a, a, p["W1"], p["W2"], cfg, training, rng)]
    else:
        if masks is None:
            raise ValueError(f"{cfg.arch} needs an NH mask pair")
        channel_ops = ops.channel_ops(masks)
        outs = []
        for g in GROUPS:
            op1, op2 = channel_ops[g]
            w1, w2 = p[_w(cfg, "W1", g)], p[_w(cfg, "W2", g)]
            outs.append(_two_layer_channel(tape, x, op1, op2, w1, w2, cfg, training, rng))
    # raw-feature channel: linear only
    outs.append(tape.matmul(x, p["W_x"]))

    combiner = "add" if cfg.arch == "gcn_plus_x" else cfg.combiner
    h_o = _combine(tape, outs, p, combiner)
    h_o = tape.dropout(h_o, cfg.dropout_comb, training, rng)
    return tape.row_softmax(tape.matmul(h_o, p["W_o"]))


def _rng(mode: Mode, seed: int | np.random.Generator | None) -> np.random.Generator | None:
    if mode == "eval":
        return None
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def forward(
    params: Mapping[str, np.ndarray],
    X: np.ndarray,
    ops: GraphOperators | None,
    masks: MaskPair | None,
    cfg: ModelConfig,
    mode: Mode = "eval",
    seed: int | np.random.Generator | None = None,
) -> tuple[Prediction, Tape, Node]:
    tape = Tape()
    out = build_forward(tape, params, X, ops, masks, cfg, mode == "train", _rng(mode, seed))
    return Prediction(out.value), tape, out


def nhgcn_forward(params, X, ops, masks, cfg, mode="eval", seed=None):
    if cfg.arch != "nhgcn":
        raise ConfigError(f"nhgcn_forward called with arch={cfg.arch!r}")
    return forward(params, X, ops, masks, cfg, mode, seed)


def nhgcn_ss_forward(params, X, ops, masks, cfg, mode="eval", seed=None):
    if cfg.arch != "nhgcn_ss":
        raise ConfigError(f"nhgcn_ss_forward called with arch={cfg.arch!r}")
    return forward(params, X, ops, masks, cfg, mode, seed)


def gcn_forward(params, X, ops, cfg, mode="eval", seed=None):
    return forward(params, X, ops, None, cfg, mode, seed)


def mlp_forward(params, X, cfg, mode="eval", seed=None):
    return forward(params, X, None, None, cfg, mode, seed)


def gcn_plus_x_forward(params, X, ops, cfg, mode="eval", seed=None):
    return forward(params, X, ops, None, cfg, mode, seed)


# -- loss ----------------------------------------------------------------------


def train_targets(labels: np.ndarray, train_idx: np.ndarray, n_classes: int) -> np.ndarray:
    """One-hot rows for training nodes, zero rows elsewhere."""
    train_idx = np.asarray(train_idx, dtype=np.int64)
    if train_idx.size == 0:
        raise ValueError("empty training set")
    y = np.zeros((labels.size, n_classes))
    y[train_idx, labels[train_idx]] = 1.0
    return y


def loss(pred: Prediction | np.ndarray, y_train: np.ndarray) -> float:
    """``-trace(Y_train^T log B)``, with ``B`` floored at 1e-12."""
    b = pred.probs if isinstance(pred, Prediction) else np.asarray(pred)
    if not y_train.any():
        raise ValueError("empty training set")
    return float(-np.trace(y_train.T @ np.log(np.maximum(b, LOG_FLOOR))))


def loss_per_node(pred: Prediction | np.ndarray, labels: np.ndarray, train_idx: np.ndarray) -> float:
    """The same cross-entropy as :func:`loss`, summed node by node."""
    b = pred.probs if isinstance(pred, Prediction) else np.asarray(pred)
    if len(train_idx) == 0:
        raise ValueError("empty training set")
    return float(-sum(np.log(max(b[i, labels[i]], LOG_FLOOR)) for i in train_idx))


def loss_and_grad(
    params: Mapping[str, np.ndarray],
    X: np.ndarray,
    ops: GraphOperators | None,
    masks: MaskPair | None,
    cfg: ModelConfig,
    y_train: np.ndarray,
    mode: Mode = "eval",
    seed: int | None = None,
) -> tuple[float, dict[str, np.ndarray], Prediction]:
    tape = Tape()
    out = build_forward(tape, params, X, ops, masks, cfg, mode == "train", _rng(mode, seed))
    value = tape.trace_nll(out, y_train)
    grads = tape.backward(value)
    return float(value.value), grads, Prediction(out.value)


def combiner_weights(params: Mapping[str, np.ndarray]) -> np.ndarray | None:
    """Softmax of the combiner logits, or ``None`` when the model has none."""
    if "alpha" not in params:
        return None
    z = params["alpha"] - params["alpha"].max()
    e = np.exp(z)
    return e / e.sum()


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(path: str | Path, params: Mapping[str, np.ndarray], cfg: ModelConfig, extra: Mapping | None = None) -> Path:
    """Write parameters, config and optional arrays/metadata to an ``.npz`` file.

    ``extra`` values that are arrays are stored as arrays (prefixed ``extra/``);
    everything else goes into a JSON header.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    extra = dict(extra or {})
    arrays = {f"param/{k}": np.asarray(v) for k, v in params.items()}
    meta = {}
    for k, v in extra.items():
        if isinstance(v, np.ndarray):
            arrays[f"extra/{k}"] = v
        else:
            meta[k] = v
    header = json.dumps({"config": cfg.to_dict(), "meta": meta}, sort_keys=True)
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.array(header), **arrays)
    return path


def load_checkpoint(path: str | Path) -> tuple[Params, ModelConfig, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["__header__"]))
        params = {k.split("/", 1)[1]: z[k] for k in z.files if k.startswith("param/")}
        extra = {k.split("/", 1)[1]: z[k] for k in z.files if k.startswith("extra/")}
    extra.update(header["meta"])
    return params, ModelConfig.from_dict(header["config"]), extra
