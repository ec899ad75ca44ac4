"""Small heteroscedastic feed-forward regressor with hand-written backprop.

The network is a shared trunk followed by a mean head and a variance head.
All parameters live in one flat float64 vector; each layer's weights and bias
are views into it, so Adam updates and best-snapshot copies are single array
operations. Parameter order is trunk, mean head, variance head, and within
each layer weights (row-major) then bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .objective import ObjectiveKind, natural_to_moments

VAR_EPS = 1e-6
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def _gelu_tanh(x):
    # float ** 3 is far slower than repeated multiplication
    return np.tanh(_GELU_C * (x + _GELU_A * (x * x * x)))


def gelu(x):
    return 0.5 * x * (1.0 + _gelu_tanh(x))


def gelu_grad(x, t=None):
    if t is None:
        t = _gelu_tanh(x)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


ACTIVATIONS = ("gelu", "identity")


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "gelu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"inconsistent layer shapes: weights {self.weights.shape}, bias {self.bias.shape}"
            )

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


def _glorot(rng, n_in, n_out, activation="gelu"):
    limit = math.sqrt(6.0 / (n_in + n_out))
    return DenseLayer(rng.uniform(-limit, limit, size=(n_out, n_in)), np.zeros(n_out), activation)


class HeteroNet:
    """Trunk + mean head + variance-logit head.

    With ``natural=True`` the two heads are read as natural parameters
    (eta1, eta2 = -softplus(u) - 1e-6) instead of (mu, r).
    """

    def __init__(self, trunk, mean_head, var_head, natural: bool = False):
        self.trunk = list(trunk)
        self.mean_head = list(mean_head)
        self.var_head = list(var_head)
        self.natural = natural
        self._check_architecture()
        self._bind(None)

    @classmethod
    def build(cls, d_in: int, hidden: int = 64, trunk_layers: int = 2, head_hidden=(),
              natural: bool = False, seed=0) -> "HeteroNet":
        if d_in < 1 or hidden < 1 or trunk_layers < 1:
            raise ConfigError("d_in, hidden and trunk_layers must be >= 1")
        rng = np.random.default_rng(seed)
        trunk, width = [], d_in
        for _ in range(trunk_layers):
            trunk.append(_glorot(rng, width, hidden))
            width = hidden

        def head():
            layers, w = [], hidden
            for h in head_hidden:
                layers.append(_glorot(rng, w, h))
                w = h
            layers.append(_glorot(rng, w, 1, "identity"))
            return layers

        mean_head = head()
        var_head = head()
        return cls(trunk, mean_head, var_head, natural=natural)

    def _check_architecture(self):
        if not self.trunk or not self.mean_head or not self.var_head:
            raise ConfigError("trunk and both heads need at least one layer")
        for stack in (self.trunk, self.mean_head, self.var_head):
            for a, b in zip(stack, stack[1:]):
                if a.out_dim != b.in_dim:
                    raise ShapeError("layer widths do not chain")
        width = self.trunk[-1].out_dim
        for head in (self.mean_head, self.var_head):
            if head[0].in_dim != width:
                raise ShapeError("trunk output width must equal head input width")
            if head[-1].out_dim != 1 or head[-1].activation != "identity":
                raise ShapeError("heads must end in a 1-unit identity layer")

    @property
    def layers(self):
        return self.trunk + self.mean_head + self.var_head

    def _bind(self, flat: Optional[np.ndarray]):
        sizes = [(l.weights.size, l.bias.size) for l in self.layers]
        total = sum(a + b for a, b in sizes)
        if flat is None:
            flat = np.concatenate([np.concatenate([l.weights.ravel(), l.bias]) for l in self.layers])
        elif flat.shape != (total,):
            raise ShapeError(f"expected {total} parameters, got {flat.shape}")
        self.params = flat
        self._slots = []
        offset = 0
        for layer in self.layers:
            w = slice(offset, offset + layer.weights.size)
            offset += layer.weights.size
            b = slice(offset, offset + layer.bias.size)
            offset += layer.bias.size
            layer.weights = flat[w].reshape(layer.weights.shape)
            layer.bias = flat[b]
            self._slots.append((w, b))
        n_trunk = sum(l.weights.size + l.bias.size for l in self.trunk)
        n_mean = sum(l.weights.size + l.bias.size for l in self.mean_head)
        self.partitions = {
            "trunk": slice(0, n_trunk),
            "mean_head": slice(n_trunk, n_trunk + n_mean),
            "var_head": slice(n_trunk + n_mean, total),
        }

    @property
    def d_in(self) -> int:
        return self.trunk[0].in_dim

    @property
    def hidden(self) -> int:
        return self.trunk[-1].out_dim

    def architecture(self) -> dict:
        return {
            "d_in": self.d_in,
            "trunk": [l.out_dim for l in self.trunk],
            "head_hidden": [l.out_dim for l in self.mean_head[:-1]],
            "natural": self.natural,
        }

    @classmethod
    def from_architecture(cls, arch: dict, params=None) -> "HeteroNet":
        rng = np.random.default_rng(0)
        trunk, w = [], arch["d_in"]
        for h in arch["trunk"]:
            trunk.append(_glorot(rng, w, h))
            w = h

        def head():
            layers, width = [], w
            for h in arch["head_hidden"]:
                layers.append(_glorot(rng, width, h))
                width = h
            layers.append(_glorot(rng, width, 1, "identity"))
            return layers

        net = cls(trunk, head(), head(), natural=bool(arch.get("natural", False)))
        if params is not None:
            net.set_params(params)
        return net

    def set_params(self, flat):
        flat = np.array(flat, dtype=float)
        self._bind(flat)

    def copy(self) -> "HeteroNet":
        clone = HeteroNet.__new__(HeteroNet)
        clone.trunk = [DenseLayer(l.weights, l.bias, l.activation) for l in self.trunk]
        clone.mean_head = [DenseLayer(l.weights, l.bias, l.activation) for l in self.mean_head]
        clone.var_head = [DenseLayer(l.weights, l.bias, l.activation) for l in self.var_head]
        clone.natural = self.natural
        clone._bind(self.params.copy())
        return clone

    def n_params(self) -> int:
        return self.params.size


@dataclass
class ForwardTrace:
    trunk_cache: list
    mean_cache: list
    var_cache: list
    hidden: np.ndarray
    head_mean: np.ndarray
    r: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray
    eta2: Optional[np.ndarray] = None


def _run_stack(layers, a):
    cache = []
    for layer in layers:
        z = a @ layer.weights.T + layer.bias
        if layer.activation == "gelu":
            t = _gelu_tanh(z)
            out = 0.5 * z * (1.0 + t)
        else:
            t, out = None, z
        cache.append((a, z, t))
        a = out
    return a, cache


def _locate_nonfinite(stacks):
    # non-finite values propagate forward, so the first offending layer is the culprit
    for name, cache in stacks:
        for i, (_, z, _) in enumerate(cache):
            if not np.all(np.isfinite(z)):
                raise NumericError(f"non-finite activation in {name} layer {i}")
    raise NumericError("non-finite network output")


def forward(net: HeteroNet, x) -> ForwardTrace:
    """Forward pass for one feature vector or a batch (rows are samples)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.d_in:
        raise ShapeError(f"expected inputs with {net.d_in} features, got shape {x.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        h, trunk_cache = _run_stack(net.trunk, x)
        m, mean_cache = _run_stack(net.mean_head, h)
        r, var_cache = _run_stack(net.var_head, h)
    head_mean, r = m[:, 0], r[:, 0]
    if not (np.all(np.isfinite(head_mean)) and np.all(np.isfinite(r))):
        _locate_nonfinite([("trunk", trunk_cache), ("mean_head", mean_cache), ("var_head", var_cache)])
    if net.natural:
        eta2 = -softplus(r) - VAR_EPS
        mu, sigma2 = natural_to_moments(head_mean, eta2)
        return ForwardTrace(trunk_cache, mean_cache, var_cache, h, head_mean, r, mu, sigma2, eta2)
    sigma2 = softplus(r) + VAR_EPS
    return ForwardTrace(trunk_cache, mean_cache, var_cache, h, head_mean, r, head_mean, sigma2)


class Gradients:
    """Flat gradient vector with named views per parameter partition."""

    def __init__(self, flat: np.ndarray, partitions: dict):
        self.flat = flat
        self.partitions = partitions

    @property
    def trunk(self):
        return self.flat[self.partitions["trunk"]]

    @property
    def mean_head(self):
        return self.flat[self.partitions["mean_head"]]

    @property
    def var_head(self):
        return self.flat[self.partitions["var_head"]]


def _backprop(layers, slots, cache, grad_out, g):
    for layer, (ws, bs), (a_in, z, t) in zip(reversed(layers), reversed(slots), reversed(cache)):
        dz = grad_out * gelu_grad(z, t) if layer.activation == "gelu" else grad_out
        g[ws] = (dz.T @ a_in).ravel()
        g[bs] = dz.sum(axis=0)
        grad_out = dz @ layer.weights
    return grad_out


def backward(net: HeteroNet, x, y, objective: ObjectiveKind, part: str = "total"):
    """Mean loss over the batch and its routed gradients.

    ``part`` restricts back-propagation to one loss component: ``"mean"``
    sends only the mean-path gradient, ``"var"`` only the variance-calibration
    gradient (the detached residual contributes nothing to the mean head).
    Coupled objectives (NLL, beta-NLL, natural) report all of their mean
    gradient on the mean path.
    """
    if not isinstance(objective, ObjectiveKind):
        raise ConfigError(f"unknown objective {objective!r}")
    if part not in ("total", "mean", "var"):
        raise ConfigError(f"unknown loss component {part!r}")
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size == 0:
        raise ConfigError("empty batch")
    if objective.natural != net.natural:
        raise ConfigError("network head parameterisation does not match the objective")
    tr = forward(net, x)
    if y.shape[0] != tr.mu.shape[0]:
        raise ShapeError("inputs and targets differ in length")
    if net.natural:
        ps = objective.evaluate(tr.head_mean, tr.eta2, y)
        dmap = -sigmoid(tr.r)
    else:
        ps = objective.evaluate(tr.mu, tr.sigma2, y)
        dmap = sigmoid(tr.r)
    n = y.shape[0]
    if part == "total":
        d_mean, d_var = ps.d_mu_for_mean_path + ps.d_mu_for_var_path, ps.d_var
    elif part == "mean":
        d_mean, d_var = ps.d_mu_for_mean_path, np.zeros(n)
    else:
        d_mean, d_var = ps.d_mu_for_var_path, ps.d_var

    g = np.zeros_like(net.params)
    n_t, n_m = len(net.trunk), len(net.mean_head)
    slots_t, slots_m, slots_v = net._slots[:n_t], net._slots[n_t:n_t + n_m], net._slots[n_t + n_m:]
    dh = _backprop(net.mean_head, slots_m, tr.mean_cache, (d_mean / n)[:, None], g)
    dh_var = _backprop(net.var_head, slots_v, tr.var_cache, (d_var * dmap / n)[:, None], g)
    if ps.var_to_trunk:
        dh = dh + dh_var
    _backprop(net.trunk, slots_t, tr.trunk_cache, dh, g)
    return float(np.mean(ps.loss)), Gradients(g, net.partitions)


def loss_value(net: HeteroNet, x, y, objective: ObjectiveKind) -> float:
    tr = forward(net, x)
    if net.natural:
        ps = objective.evaluate(tr.head_mean, tr.eta2, y)
    else:
        ps = objective.evaluate(tr.mu, tr.sigma2, y)
    return float(np.mean(ps.loss))


# --------------------------------------------------------------------------
# optimisation


@dataclass
class TrainSchedule:
    max_epochs: int = 100
    batch_size: int = 128
    lr0: float = 1e-4
    plateau_patience: int = 10
    lr_factor: float = 0.5
    min_lr: float = 1e-7
    early_stop_patience: int = 20
    weight_decay: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.lr_factor < 1:
            raise ConfigError("lr_factor must lie in (0, 1)")
        if not 0 < self.min_lr <= self.lr0:
            raise ConfigError("need 0 < min_lr <= lr0")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ConfigError("patiences must be >= 1")
        if self.max_epochs < 0 or self.batch_size < 1:
            raise ConfigError("max_epochs must be >= 0 and batch_size >= 1")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        params = np.asarray(params, dtype=float)
        return cls(np.zeros_like(params), np.zeros_like(params))


def adam_step(params, grads, state: AdamState, lr: float, weight_decay: float = 0.0):
    """Bias-corrected Adam with decoupled weight decay; updates ``params`` in place."""
    if not lr > 0:
        raise ConfigError("learning rate must be positive")
    grads = np.asarray(grads, dtype=float)
    if np.shape(params) != grads.shape or state.m.shape != grads.shape:
        raise ShapeError("parameter, gradient and moment shapes differ")
    if not np.all(np.isfinite(grads)):
        raise NumericError("non-finite gradient")
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    update = m_hat / (np.sqrt(v_hat) + state.eps)
    if weight_decay:
        update = update + weight_decay * params
    params -= lr * update
    return params, state


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = math.inf

    @property
    def epochs_run(self) -> int:
        return len(self.val_loss)


def train_member(net: HeteroNet, train_set, val_set, objective: ObjectiveKind,
                 schedule: TrainSchedule, evaluate: Optional[Callable[[HeteroNet], float]] = None):
    """Mini-batch Adam with plateau LR decay and early stopping.

    Returns a copy of the network at its best validation epoch (the input
    network is left untouched) together with the per-epoch history.
    ``evaluate`` overrides the validation loss; it defaults to the
    objective's mean loss on ``val_set``.
    """
    x_tr, y_tr = (np.asarray(a, dtype=float) for a in train_set)
    x_va, y_va = (np.asarray(a, dtype=float) for a in val_set)
    if len(y_tr) == 0 or len(y_va) == 0:
        raise ConfigError("training and validation sets must be non-empty")
    y_tr, y_va = y_tr.reshape(-1), y_va.reshape(-1)
    if evaluate is None:
        def evaluate(model):
            return loss_value(model, x_va, y_va, objective)

    work = net.copy()
    best = net.copy()
    history = TrainHistory()
    if schedule.max_epochs == 0:
        return best, history

    rng = np.random.default_rng(schedule.seed)
    state = AdamState.zeros_like(work.params)
    lr = schedule.lr0
    n = len(y_tr)
    since_best = since_decay = 0
    for epoch in range(schedule.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, schedule.batch_size):
            idx = order[start:start + schedule.batch_size]
            loss, grads = backward(work, x_tr[idx], y_tr[idx], objective)
            adam_step(work.params, grads.flat, state, lr, schedule.weight_decay)
            total += loss * len(idx)
        val = float(evaluate(work))
        history.train_loss.append(total / n)
        history.val_loss.append(val)
        history.lr.append(lr)
        if val < history.best_val:
            history.best_val, history.best_epoch = val, epoch
            best.params[:] = work.params
            since_best = since_decay = 0
        else:
            since_best += 1
            since_decay += 1
            if since_decay >= schedule.plateau_patience:
                lr = max(lr * schedule.lr_factor, schedule.min_lr)
                since_decay = 0
            if since_best >= schedule.early_stop_patience:
                break
    return best, history
