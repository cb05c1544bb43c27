"""GCN forward pass, losses and the hand-written backward pass.

Layer ``l`` computes ``Z = S @ dropout(X) @ W`` where ``S`` is the batch
propagation matrix. For the diagonal-enhanced variant ``S = A~ + lam * diag(A~)``;
every other variant uses the normalized adjacency directly. Hidden layers apply
ReLU; the residual variant adds the layer input back between equal-width hidden
layers. The last layer emits raw logits.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np
import scipy.sparse as sp

from .sparse import GraphInputError, SparseMatrix, from_scipy, normalize, spmm

VARIANTS = ("plain", "residual", "identity_aug", "diag_enhanced")
TASKS = ("multiclass", "multilabel")


class NumericError(ArithmeticError):
    """Non-finite values during forward/backward or an optimizer step."""


@dataclass
class GcnModel:
    dims: list
    weights: list
    variant: str = "plain"
    lam: float = 0.0
    task: str = "multiclass"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise GraphInputError(f"unknown layer variant {self.variant!r}")
        if self.task not in TASKS:
            raise GraphInputError(f"unknown task {self.task!r}")
        if len(self.weights) != len(self.dims) - 1:
            raise GraphInputError("need one weight matrix per layer")
        for l, w in enumerate(self.weights):
            if w.shape != (self.dims[l], self.dims[l + 1]):
                raise GraphInputError(
                    f"W{l} has shape {w.shape}, expected {(self.dims[l], self.dims[l + 1])}"
                )

    @classmethod
    def init(cls, dims, variant="plain", lam=0.0, task="multiclass", seed=0) -> GcnModel:
        """Glorot-uniform weights."""
        rng = np.random.default_rng(seed)
        weights = []
        for f_in, f_out in zip(dims[:-1], dims[1:]):
            s = np.sqrt(6.0 / (f_in + f_out))
            weights.append(rng.uniform(-s, s, size=(f_in, f_out)))
        return cls(list(dims), weights, variant, lam, task)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def norm_mode(self, configured: str) -> str:
        """Normalization the variant needs; the A~-based variants force row mode."""
        if self.variant in ("identity_aug", "diag_enhanced"):
            return "row"
        return configured

    def has_residual(self, layer: int) -> bool:
        """True if X[layer+1] = relu(Z[layer+1]) + X[layer]."""
        return (self.variant == "residual" and 1 <= layer <= self.n_layers - 2
                and self.dims[layer] == self.dims[layer + 1])

    def copy(self) -> GcnModel:
        return GcnModel(list(self.dims), [w.copy() for w in self.weights],
                        self.variant, self.lam, self.task)


def propagation_matrix(variant: str, adj_norm: SparseMatrix, lam: float = 0.0) -> SparseMatrix:
    if adj_norm.n_rows != adj_norm.n_cols:
        raise GraphInputError("propagation matrix must be square")
    if variant == "diag_enhanced" and lam != 0.0:
        m = adj_norm.to_scipy() + lam * sp.diags(adj_norm.diagonal())
        return from_scipy(m)
    return adj_norm


def propagate(variant: str, adj_norm: SparseMatrix, x: np.ndarray, w: np.ndarray,
              lam: float = 0.0) -> np.ndarray:
    """One layer's pre-activation ``(S @ x) @ w``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != w.shape[0]:
        raise GraphInputError(f"feature width {x.shape[1]} does not match W rows {w.shape[0]}")
    return spmm(propagation_matrix(variant, adj_norm, lam), x) @ w


def precompute_ax(adj_norm: SparseMatrix, x: np.ndarray) -> np.ndarray:
    """First-layer aggregation, computed once and reused as the layer-0 input."""
    return spmm(adj_norm, x)


@dataclass
class ForwardTrace:
    inputs: list = field(default_factory=list)       # X[l] before dropout
    propagated: list = field(default_factory=list)   # S @ dropout(X[l])
    masks: list = field(default_factory=list)        # inverted-dropout masks or None
    pre: list = field(default_factory=list)          # Z[l+1]
    prop: SparseMatrix | None = None

    @property
    def logits(self) -> np.ndarray:
        return self.pre[-1]

    def cached_floats(self) -> int:
        """Floats held in layer outputs, i.e. the b * sum(F_l) activation term."""
        return int(sum(z.size for z in self.pre))


def _check_finite(arr: np.ndarray, layer: int, what: str):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite {what} at layer {layer}")


def forward(model: GcnModel, batch, dropout_rate: float = 0.0, rng_seed=None,
            training: bool = False, ax: np.ndarray | None = None) -> ForwardTrace:
    """Run all layers on ``batch``.

    ``ax`` is an optional precomputed ``S @ X`` for layer 0 (from
    :func:`precompute_ax`); when given, the first sparse product is skipped.
    """
    if not 0.0 <= dropout_rate < 1.0:
        raise GraphInputError("dropout_rate must be in [0, 1)")
    x = np.asarray(batch.features, dtype=np.float64)
    if x.shape[1] != model.dims[0]:
        raise GraphInputError(f"features have {x.shape[1]} columns, model expects {model.dims[0]}")
    s = propagation_matrix(model.variant, batch.adj_norm, model.lam)
    rng = np.random.default_rng(rng_seed)
    use_dropout = training and dropout_rate > 0.0
    trace = ForwardTrace(prop=s)
    for l, w in enumerate(model.weights):
        trace.inputs.append(x)
        aggregated = l == 0 and ax is not None
        src = ax if aggregated else x
        mask = None
        if use_dropout:
            mask = (rng.random(src.shape) >= dropout_rate) / (1.0 - dropout_rate)
            src = src * mask
        trace.masks.append(mask)
        p = src if aggregated else spmm(s, src)
        trace.propagated.append(p)
        z = p @ w
        _check_finite(z, l, "pre-activation")
        trace.pre.append(z)
        if l < model.n_layers - 1:
            nxt = np.maximum(z, 0.0)
            if model.has_residual(l):
                nxt = nxt + x
            x = nxt
    return trace


def loss_and_dlogits(task: str, logits: np.ndarray, labels: np.ndarray, mask: np.ndarray):
    n_train = int(mask.sum())
    dlogits = np.zeros_like(logits)
    if n_train == 0:
        return 0.0, dlogits
    z = logits[mask]
    if task == "multiclass":
        y = np.asarray(labels)[mask].astype(np.int64)
        shifted = z - z.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        logp = shifted - log_norm
        loss = -logp[np.arange(n_train), y].mean()
        probs = np.exp(logp)
        probs[np.arange(n_train), y] -= 1.0
        dlogits[mask] = probs / n_train
    else:
        y = np.asarray(labels, dtype=np.float64)[mask]
        k = z.shape[1]
        loss = (np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))).mean()
        sig = 0.5 * (1.0 + np.tanh(0.5 * z))
        dlogits[mask] = (sig - y) / (n_train * k)
    return float(loss), dlogits


def loss_and_grad(model: GcnModel, trace: ForwardTrace, batch) -> tuple[float, list]:
    """Mean cross-entropy over the batch's training rows and its weight gradients."""
    if batch.n_train == 0:
        warnings.warn("batch has no training nodes; loss and gradients are zero", stacklevel=2)
        return 0.0, [np.zeros_like(w) for w in model.weights]
    loss, dz = loss_and_dlogits(model.task, trace.logits, batch.labels, batch.train_mask)
    s_t = trace.prop.transpose()
    grads = [None] * model.n_layers
    skip_grad = [None] * model.n_layers
    for l in range(model.n_layers - 1, -1, -1):
        grads[l] = trace.propagated[l].T @ dz
        _check_finite(grads[l], l, "gradient")
        if l == 0:
            break
        dx = spmm(s_t, dz @ model.weights[l].T)
        if trace.masks[l] is not None:
            dx = dx * trace.masks[l]
        if skip_grad[l] is not None:
            dx = dx + skip_grad[l]
        if model.has_residual(l - 1):
            skip_grad[l - 1] = dx
        dz = dx * (trace.pre[l - 1] > 0.0)
    return loss, grads


def loss_only(model: GcnModel, batch) -> float:
    trace = forward(model, batch)
    loss, _ = loss_and_dlogits(model.task, trace.logits, batch.labels, batch.train_mask)
    return loss


def micro_f1(task: str, logits: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """(micro-F1, accuracy) of predictions derived from ``logits``."""
    labels = np.asarray(labels)
    if task == "multiclass":
        pred = logits.argmax(axis=1)
        acc = float((pred == labels).mean())
        # single-label micro-F1: every miss is one FP and one FN
        return acc, acc
    pred = logits > 0.0
    truth = labels.astype(bool)
    tp = int((pred & truth).sum())
    fp = int((pred & ~truth).sum())
    fn = int((~pred & truth).sum())
    denom = 2 * tp + fp + fn
    f1 = 1.0 if denom == 0 else 2 * tp / denom
    return float(f1), float((pred == truth).mean())


def predict_metrics(model: GcnModel, graph: SparseMatrix, features, labels, split,
                    norm_mode: str = "row") -> tuple[float, float]:
    """Evaluate on the whole ``graph`` and score the ``split`` nodes."""
    split = np.asarray(split, dtype=np.int64)
    if len(split) == 0:
        raise GraphInputError("evaluation split is empty")
    logits = predict_logits(model, graph, features, norm_mode)
    return micro_f1(model.task, logits[split], np.asarray(labels)[split])


def predict_logits(model: GcnModel, graph: SparseMatrix, features, norm_mode="row",
                   adj_norm: SparseMatrix | None = None) -> np.ndarray:
    if adj_norm is None:
        adj_norm = normalize(graph, model.norm_mode(norm_mode))
    whole = SimpleNamespace(features=features, adj_norm=adj_norm)
    return forward(model, whole).logits
