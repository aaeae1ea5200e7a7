"""Dense feed-forward networks with hand-written analytic gradients.

A network is a flat list of dense layers with two split indices: layers
before ``extractor_end`` form the feature extractor, layers in
``[extractor_end, classifier_end)`` the classifier head (K logits), and
the remainder the projection head, whose output is L2-normalized.

Everything runs in float64. Every loss implemented here has an analytic
gradient path; the test suite checks all of them against central finite
differences.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError, TrainingError

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "identity")

CE_EPS = 1e-12
#: largest value a clamped BCE-on-energy term can take: -log(CE_EPS)
ENERGY_BCE_CAP = -np.log(CE_EPS)


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError("layer expects 2-D weights and 1-D bias")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ShapeError(
                f"bias length {self.bias.shape[0]} != output width {self.weights.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class DenseNet:
    """Extractor + classifier head + projection head as one layer list."""

    layers: list[DenseLayer]
    extractor_end: int
    classifier_end: int

    def __post_init__(self):
        if not (1 <= self.extractor_end <= self.classifier_end <= len(self.layers)):
            raise ShapeError("split indices must satisfy 1 <= extractor_end <= classifier_end <= n_layers")
        for prev, nxt in zip(self.layers, self.layers[1:self.extractor_end]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError(f"extractor widths disagree: {prev.out_dim} -> {nxt.in_dim}")
        d = self.feature_dim
        for head_start, head_end in ((self.extractor_end, self.classifier_end),
                                     (self.classifier_end, len(self.layers))):
            widths = [d] + [self.layers[i].out_dim for i in range(head_start, head_end)]
            for i in range(head_start, head_end):
                if self.layers[i].in_dim != widths[i - head_start]:
                    raise ShapeError("head widths disagree with extractor output")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def feature_dim(self) -> int:
        return self.layers[self.extractor_end - 1].out_dim

    @property
    def n_classes(self) -> int:
        return self.layers[self.classifier_end - 1].out_dim

    @property
    def projection_dim(self) -> int:
        if self.classifier_end == len(self.layers):
            raise ShapeError("network has no projection head")
        return self.layers[-1].out_dim

    def copy(self) -> "DenseNet":
        return DenseNet(
            [DenseLayer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers],
            self.extractor_end,
            self.classifier_end,
        )


def build_network(input_dim: int, n_classes: int, hidden=(64, 64), projection_dim: int = 32,
                  rng: np.random.Generator | None = None) -> DenseNet:
    """Fresh network with symmetric uniform fan-in initialization.

    Extractor: ReLU layers of the given hidden widths. Classifier and
    projector are single linear layers on the extractor output.
    """
    rng = rng or np.random.default_rng()
    layers = []
    widths = [input_dim] + list(hidden)
    for a, b in zip(widths, widths[1:]):
        layers.append(_init_layer(a, b, "relu", rng))
    d = widths[-1]
    layers.append(_init_layer(d, n_classes, "identity", rng))
    layers.append(_init_layer(d, projection_dim, "identity", rng))
    return DenseNet(layers, extractor_end=len(hidden), classifier_end=len(hidden) + 1)


def _init_layer(in_dim, out_dim, activation, rng):
    bound = 1.0 / np.sqrt(in_dim)
    w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    b = rng.uniform(-bound, bound, size=out_dim)
    return DenseLayer(w, b, activation)


# ---------------------------------------------------------------------------
# forward passes


@dataclass
class ForwardCache:
    """Per-layer inputs and pre-activations kept for backprop."""

    inputs: list[np.ndarray | None]
    preacts: list[np.ndarray | None]
    features: np.ndarray
    logits: np.ndarray | None = None
    projection_raw: np.ndarray | None = None
    projection: np.ndarray | None = None
    degenerate_rows: np.ndarray | None = None


def _activate(pre: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(pre, 0.0)
    return pre


def _run_segment(net: DenseNet, x: np.ndarray, start: int, end: int, cache: ForwardCache | None):
    out = x
    for i in range(start, end):
        layer = net.layers[i]
        if out.shape[1] != layer.in_dim:
            raise ShapeError(f"layer {i} expects width {layer.in_dim}, got {out.shape[1]}")
        pre = out @ layer.weights.T + layer.bias
        if cache is not None:
            cache.inputs[i] = out
            cache.preacts[i] = pre
        out = _activate(pre, layer.activation)
    return out


def normalize_rows(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """L2-normalize rows; zero rows fall back to the first basis vector.

    Returns (unit rows, degenerate-row mask).
    """
    norms = np.linalg.norm(u, axis=1)
    degenerate = norms < 1e-30
    safe = np.where(degenerate, 1.0, norms)
    z = u / safe[:, None]
    if degenerate.any():
        z = z.copy()
        z[degenerate] = 0.0
        z[degenerate, 0] = 1.0
        log.warning("projection: %d zero-norm embedding(s) replaced by e1", int(degenerate.sum()))
    return z, degenerate


def forward_batch(net: DenseNet, x: np.ndarray, *, want_logits: bool = True,
                  want_projection: bool = False) -> ForwardCache:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    cache = ForwardCache(inputs=[None] * len(net.layers), preacts=[None] * len(net.layers),
                         features=np.empty(0))
    cache.features = _run_segment(net, x, 0, net.extractor_end, cache)
    if want_logits:
        cache.logits = _run_segment(net, cache.features, net.extractor_end, net.classifier_end, cache)
    if want_projection:
        raw = _run_segment(net, cache.features, net.classifier_end, len(net.layers), cache)
        cache.projection_raw = raw
        cache.projection, cache.degenerate_rows = normalize_rows(raw)
    return cache


def head_forward(net: DenseNet, features: np.ndarray, cache: ForwardCache | None = None) -> np.ndarray:
    """Classifier logits from feature-space inputs (extractor bypassed)."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    return _run_segment(net, features, net.extractor_end, net.classifier_end, cache)


def forward_features(net: DenseNet, x) -> np.ndarray:
    return forward_batch(net, x, want_logits=False).features[0]


def forward_logits(net: DenseNet, x) -> np.ndarray:
    return forward_batch(net, x).logits[0]


def forward_projection(net: DenseNet, x) -> np.ndarray:
    cache = forward_batch(net, x, want_logits=False, want_projection=True)
    return cache.projection[0]


# ---------------------------------------------------------------------------
# pointwise losses and the energy score


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax along the last axis."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def gce_loss(probs: np.ndarray, y: int, q: float = 0.7) -> float:
    """Generalized cross entropy (1 - p_y^q) / q for a single prediction."""
    if q <= 0 or q > 1:
        raise ParameterError(f"q must be in (0, 1], got {q}")
    p = float(probs[y])
    return (1.0 - p ** q) / q


def gce_losses(probs: np.ndarray, y: np.ndarray, q: float = 0.7) -> np.ndarray:
    if q <= 0 or q > 1:
        raise ParameterError(f"q must be in (0, 1], got {q}")
    p = probs[np.arange(len(y)), y]
    return (1.0 - p ** q) / q


def cross_entropy(probs: np.ndarray, y: int) -> float:
    """Standard -log p_y with an epsilon clamp."""
    return float(-np.log(max(float(probs[y]), CE_EPS)))


def soft_cross_entropy(probs: np.ndarray, targets: np.ndarray) -> float:
    """-sum_k t_k log p_k averaged over rows (soft-target variant)."""
    probs = np.atleast_2d(probs)
    targets = np.atleast_2d(targets)
    return float(-(targets * np.log(np.maximum(probs, CE_EPS))).sum(axis=1).mean())


def energy(logits: np.ndarray, temperature: float = 1.0) -> float:
    """Scalar energy -T * logsumexp(logits / T), computed with a max shift."""
    return float(energies(np.atleast_2d(logits), temperature)[0])


def energies(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    if temperature <= 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    scaled = np.asarray(logits, dtype=np.float64) / temperature
    m = scaled.max(axis=-1, keepdims=True)
    lse = m[..., 0] + np.log(np.exp(scaled - m).sum(axis=-1))
    return -temperature * lse


def _energy_grad(logits: np.ndarray, temperature: float) -> np.ndarray:
    # dE/dlogits = -softmax(logits / T), row-wise
    return -softmax(logits / temperature)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# gradient bundles and backprop


@dataclass
class GradientBundle:
    """Per-parameter gradients mirroring a DenseNet, plus the loss value."""

    loss: float
    d_weights: list[np.ndarray]
    d_bias: list[np.ndarray]

    @classmethod
    def zeros(cls, net: DenseNet, loss: float = 0.0) -> "GradientBundle":
        return cls(loss,
                   [np.zeros_like(l.weights) for l in net.layers],
                   [np.zeros_like(l.bias) for l in net.layers])

    def add_scaled(self, other: "GradientBundle", scale: float = 1.0) -> None:
        self.loss += scale * other.loss
        for dw, ow in zip(self.d_weights, other.d_weights):
            dw += scale * ow
        for db, ob in zip(self.d_bias, other.d_bias):
            db += scale * ob

    def is_finite(self) -> bool:
        return (np.isfinite(self.loss)
                and all(np.isfinite(a).all() for a in self.d_weights)
                and all(np.isfinite(a).all() for a in self.d_bias))


def _backward_segment(net: DenseNet, cache: ForwardCache, dout: np.ndarray,
                      start: int, end: int, bundle: GradientBundle) -> np.ndarray:
    """Backprop dout through layers [start, end), accumulating into bundle."""
    for i in reversed(range(start, end)):
        layer = net.layers[i]
        pre = cache.preacts[i]
        dpre = dout * (pre > 0.0) if layer.activation == "relu" else dout
        bundle.d_weights[i] += dpre.T @ cache.inputs[i]
        bundle.d_bias[i] += dpre.sum(axis=0)
        dout = dpre @ layer.weights
    return dout


def backprop_logits(net: DenseNet, cache: ForwardCache, dlogits: np.ndarray,
                    bundle: GradientBundle, *, into_extractor: bool = True) -> np.ndarray | None:
    dfeat = _backward_segment(net, cache, dlogits, net.extractor_end, net.classifier_end, bundle)
    if into_extractor:
        return _backward_segment(net, cache, dfeat, 0, net.extractor_end, bundle)
    return dfeat


def backprop_projection(net: DenseNet, cache: ForwardCache, dproj: np.ndarray,
                        bundle: GradientBundle) -> np.ndarray:
    # through z = u / |u|: du = (dz - (dz . z) z) / |u|; degenerate rows are constant
    u = cache.projection_raw
    z = cache.projection
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    norms = np.where(norms < 1e-30, 1.0, norms)
    draw = (dproj - (dproj * z).sum(axis=1, keepdims=True) * z) / norms
    if cache.degenerate_rows is not None and cache.degenerate_rows.any():
        draw = draw.copy()
        draw[cache.degenerate_rows] = 0.0
    dfeat = _backward_segment(net, cache, draw, net.classifier_end, len(net.layers), bundle)
    return _backward_segment(net, cache, dfeat, 0, net.extractor_end, bundle)


def _softmax_chain(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    """dL/dlogits given dL/dprobs, row-wise through the softmax Jacobian."""
    return probs * (dprobs - (dprobs * probs).sum(axis=1, keepdims=True))


# ---------------------------------------------------------------------------
# loss + gradient entry points


def gce_loss_and_grads(net: DenseNet, x: np.ndarray, y: np.ndarray, q: float = 0.7):
    """Mean GCE loss over the batch and its gradients."""
    cache = forward_batch(net, x)
    probs = softmax(cache.logits)
    losses = gce_losses(probs, y, q)
    value = float(losses.mean())
    n = len(y)
    p_y = probs[np.arange(n), y]
    dlogits = probs * (p_y ** q)[:, None]
    dlogits[np.arange(n), y] -= p_y ** q
    dlogits /= n
    bundle = GradientBundle.zeros(net, value)
    backprop_logits(net, cache, dlogits, bundle)
    return value, bundle


def soft_ce_loss_and_grads(net: DenseNet, x: np.ndarray, targets: np.ndarray):
    """Mean soft-target cross entropy over the batch."""
    cache = forward_batch(net, x)
    probs = softmax(cache.logits)
    value = soft_cross_entropy(probs, targets)
    dlogits = (probs - targets) / len(targets)
    bundle = GradientBundle.zeros(net, value)
    backprop_logits(net, cache, dlogits, bundle)
    return value, bundle


def mse_prob_loss_and_grads(net: DenseNet, x: np.ndarray, targets: np.ndarray):
    """Mean squared error between softmax outputs and soft targets.

    Per-sample value averages over classes, matching the convention of the
    semi-supervised consistency term.
    """
    cache = forward_batch(net, x)
    probs = softmax(cache.logits)
    n, k = probs.shape
    value = float(((probs - targets) ** 2).sum(axis=1).mean() / k)
    dprobs = 2.0 * (probs - targets) / (n * k)
    bundle = GradientBundle.zeros(net, value)
    backprop_logits(net, cache, _softmax_chain(probs, dprobs), bundle)
    return value, bundle


def prior_kl_loss_and_grads(net: DenseNet, x: np.ndarray):
    """KL(uniform prior || batch-mean prediction)."""
    cache = forward_batch(net, x)
    probs = softmax(cache.logits)
    n, k = probs.shape
    pbar = probs.mean(axis=0)
    prior = 1.0 / k
    value = float((prior * np.log(prior / pbar)).sum())
    dprobs = np.tile(-prior / (n * pbar), (n, 1))
    bundle = GradientBundle.zeros(net, value)
    backprop_logits(net, cache, _softmax_chain(probs, dprobs), bundle)
    return value, bundle


def _ntxent_value_and_dproj(z: np.ndarray, temperature: float):
    """NT-Xent loss over adjacent-pair projections; returns (value, dL/dz)."""
    if temperature <= 0:
        raise ParameterError("contrastive temperature must be positive")
    m = len(z)
    if m % 2 != 0 or m < 2:
        raise ShapeError("contrastive batch must hold adjacent view pairs")
    sims = (z @ z.T) / temperature
    np.fill_diagonal(sims, -np.inf)
    row_max = sims.max(axis=1, keepdims=True)
    expd = np.exp(sims - row_max)
    denom = expd.sum(axis=1, keepdims=True)
    attn = expd / denom  # row-stochastic, zero diagonal
    pos = np.arange(m) ^ 1  # partner index within each pair
    log_denom = np.log(denom[:, 0]) + row_max[:, 0]
    value = float((-sims[np.arange(m), pos] + log_denom).mean())
    dsims = attn / m
    dsims[np.arange(m), pos] -= 1.0 / m
    dz = ((dsims + dsims.T) @ z) / temperature
    return value, dz


def contrastive_loss_and_grads(net: DenseNet, views: np.ndarray, temperature: float = 0.5):
    """NT-Xent over the projections of adjacent view pairs."""
    cache = forward_batch(net, views, want_logits=False, want_projection=True)
    value, dproj = _ntxent_value_and_dproj(cache.projection, temperature)
    bundle = GradientBundle.zeros(net, value)
    backprop_projection(net, cache, dproj, bundle)
    return value, bundle


def energy_bce_loss_and_grads(net: DenseNet, *, clean_inputs: np.ndarray | None = None,
                              clean_features: np.ndarray | None = None,
                              outlier_features: np.ndarray | None = None,
                              temperature: float = 1.0):
    """Binary cross entropy on energies: real data low, synthetic outliers high.

    Clean samples enter either as raw inputs (gradients reach the
    extractor) or as fixed feature vectors (classifier head only).
    Outliers are always feature-space points. Each BCE term is clamped at
    -log(1e-12).
    """
    if clean_inputs is not None and clean_features is not None:
        raise ParameterError("pass clean samples as inputs or features, not both")
    bundle = GradientBundle.zeros(net, 0.0)
    value = 0.0

    def _term(logits, sign):
        # sign +1: -log(1 - sigmoid(E)) = softplus(E); sign -1: -log(sigmoid(E)) = softplus(-E)
        e = energies(logits, temperature)
        raw = _softplus(sign * e)
        clipped = np.minimum(raw, ENERGY_BCE_CAP)
        d_e = sign * _sigmoid(sign * e) * (raw < ENERGY_BCE_CAP) / len(e)
        dlogits = d_e[:, None] * _energy_grad(logits, temperature)
        return float(clipped.mean()), dlogits

    if clean_inputs is not None:
        cache = forward_batch(net, clean_inputs)
        term, dlogits = _term(cache.logits, +1.0)
        value += term
        backprop_logits(net, cache, dlogits, bundle)
    elif clean_features is not None and len(clean_features):
        cache = ForwardCache(inputs=[None] * len(net.layers), preacts=[None] * len(net.layers),
                             features=np.empty(0))
        logits = head_forward(net, clean_features, cache)
        term, dlogits = _term(logits, +1.0)
        value += term
        _backward_segment(net, cache, dlogits, net.extractor_end, net.classifier_end, bundle)

    if outlier_features is not None and len(outlier_features):
        cache = ForwardCache(inputs=[None] * len(net.layers), preacts=[None] * len(net.layers),
                             features=np.empty(0))
        logits = head_forward(net, outlier_features, cache)
        term, dlogits = _term(logits, -1.0)
        value += term
        _backward_segment(net, cache, dlogits, net.extractor_end, net.classifier_end, bundle)

    bundle.loss = value
    return value, bundle


@dataclass
class TotalLossBatch:
    """One optimization step's ingredients for the combined objective."""

    labeled_inputs: np.ndarray
    labeled_targets: np.ndarray
    unlabeled_inputs: np.ndarray | None = None
    unlabeled_targets: np.ndarray | None = None
    contrast_views: np.ndarray | None = None
    support_inputs: np.ndarray | None = None
    outlier_features: np.ndarray | None = None
    lambda_u: float = 0.0
    lambda_reg: float = 0.0
    lambda_cl: float = 0.0
    lambda_energy: float = 0.0
    temperature: float = 1.0
    contrast_temperature: float = 0.5


def total_loss_and_grads(net: DenseNet, batch: TotalLossBatch):
    """Full training objective; returns (value, per-term dict, gradients)."""
    terms = {"labeled": 0.0, "unlabeled": 0.0, "prior": 0.0, "contrastive": 0.0, "energy": 0.0}
    bundle = GradientBundle.zeros(net)

    n_l = len(batch.labeled_inputs)
    if n_l == 0:
        raise ShapeError("labeled part of the batch must be nonempty")
    has_u = batch.unlabeled_inputs is not None and len(batch.unlabeled_inputs) > 0
    if has_u:
        x_all = np.vstack([batch.labeled_inputs, batch.unlabeled_inputs])
    else:
        x_all = batch.labeled_inputs
    cache = forward_batch(net, x_all)
    probs = softmax(cache.logits)
    k = probs.shape[1]

    p_l = probs[:n_l]
    terms["labeled"] = soft_cross_entropy(p_l, batch.labeled_targets)
    dlogits = np.zeros_like(probs)
    dlogits[:n_l] = (p_l - batch.labeled_targets) / n_l

    if has_u:
        p_u = probs[n_l:]
        n_u = len(p_u)
        terms["unlabeled"] = float(((p_u - batch.unlabeled_targets) ** 2).sum(axis=1).mean() / k)
        if batch.lambda_u > 0.0:
            dprobs_u = 2.0 * (p_u - batch.unlabeled_targets) / (n_u * k)
            dlogits[n_l:] += batch.lambda_u * _softmax_chain(p_u, dprobs_u)

    n_all = len(probs)
    pbar = probs.mean(axis=0)
    prior = 1.0 / k
    terms["prior"] = float((prior * np.log(prior / pbar)).sum())
    if batch.lambda_reg > 0.0:
        dprobs = np.tile(-prior / (n_all * pbar), (n_all, 1))
        dlogits += batch.lambda_reg * _softmax_chain(probs, dprobs)

    backprop_logits(net, cache, dlogits, bundle)

    if batch.contrast_views is not None and len(batch.contrast_views):
        c_cache = forward_batch(net, batch.contrast_views, want_logits=False, want_projection=True)
        terms["contrastive"], dproj = _ntxent_value_and_dproj(c_cache.projection,
                                                              batch.contrast_temperature)
        if batch.lambda_cl > 0.0:
            scratch = GradientBundle.zeros(net)
            backprop_projection(net, c_cache, dproj, scratch)
            bundle.add_scaled(scratch, batch.lambda_cl)

    if ((batch.support_inputs is not None and len(batch.support_inputs))
            or (batch.outlier_features is not None and len(batch.outlier_features))):
        si = batch.support_inputs if batch.support_inputs is not None and len(batch.support_inputs) else None
        of = batch.outlier_features if batch.outlier_features is not None and len(batch.outlier_features) else None
        terms["energy"], e_bundle = energy_bce_loss_and_grads(
            net, clean_inputs=si, outlier_features=of, temperature=batch.temperature)
        if batch.lambda_energy > 0.0:
            bundle.add_scaled(e_bundle, batch.lambda_energy)

    value = (terms["labeled"] + batch.lambda_u * terms["unlabeled"]
             + batch.lambda_reg * terms["prior"] + batch.lambda_cl * terms["contrastive"]
             + batch.lambda_energy * terms["energy"])
    bundle.loss = value
    return value, terms, bundle


@dataclass
class TermBatch:
    """Carrier for `backward`: only the fields the chosen loss needs are read."""

    x: np.ndarray | None = None
    y: np.ndarray | None = None
    targets: np.ndarray | None = None
    views: np.ndarray | None = None
    clean_inputs: np.ndarray | None = None
    clean_features: np.ndarray | None = None
    outlier_features: np.ndarray | None = None
    total: TotalLossBatch | None = None


def backward(net: DenseNet, batch: TermBatch, loss_spec: str, *, q: float = 0.7,
             temperature: float = 1.0, contrast_temperature: float = 0.5) -> GradientBundle:
    """Analytic gradients for any implemented loss composition.

    loss_spec is one of: ce, gce, mse, prior_kl, contrastive, energy_bce,
    total.
    """
    if loss_spec == "gce":
        value, bundle = gce_loss_and_grads(net, batch.x, batch.y, q)
    elif loss_spec == "ce":
        value, bundle = soft_ce_loss_and_grads(net, batch.x, batch.targets)
    elif loss_spec == "mse":
        value, bundle = mse_prob_loss_and_grads(net, batch.x, batch.targets)
    elif loss_spec == "prior_kl":
        value, bundle = prior_kl_loss_and_grads(net, batch.x)
    elif loss_spec == "contrastive":
        value, bundle = contrastive_loss_and_grads(net, batch.views, contrast_temperature)
    elif loss_spec == "energy_bce":
        value, bundle = energy_bce_loss_and_grads(
            net, clean_inputs=batch.clean_inputs, clean_features=batch.clean_features,
            outlier_features=batch.outlier_features, temperature=temperature)
    elif loss_spec == "total":
        value, _, bundle = total_loss_and_grads(net, batch.total)
    else:
        raise ParameterError(f"unknown loss spec {loss_spec!r}")
    if not np.isfinite(value):
        raise TrainingError(f"non-finite loss for spec {loss_spec!r}")
    return bundle


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class SgdState:
    v_weights: list[np.ndarray]
    v_bias: list[np.ndarray]

    @classmethod
    def zeros(cls, net: DenseNet) -> "SgdState":
        return cls([np.zeros_like(l.weights) for l in net.layers],
                   [np.zeros_like(l.bias) for l in net.layers])


def sgd_step(net: DenseNet, grads: GradientBundle, lr: float, weight_decay: float = 0.0,
             momentum: float = 0.0, state: SgdState | None = None) -> SgdState:
    """In-place momentum SGD update; returns the (possibly fresh) velocity state."""
    if lr <= 0:
        raise ParameterError(f"learning rate must be positive, got {lr}")
    if state is None:
        state = SgdState.zeros(net)
    for layer, dw, db, vw, vb in zip(net.layers, grads.d_weights, grads.d_bias,
                                     state.v_weights, state.v_bias):
        gw = dw + weight_decay * layer.weights
        gb = db + weight_decay * layer.bias
        vw *= momentum
        vw += gw
        vb *= momentum
        vb += gb
        layer.weights -= lr * vw
        layer.bias -= lr * vb
    return state
