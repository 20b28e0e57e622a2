"""Residual feed-forward regressor mapping signal coefficients to FOD coefficients.

Five hidden layers of widths 400, 45, 200, 45, 200 with elu activations
and a linear output projection. A skip connection adds the second hidden
activation into the fourth layer's pre-activation, which is why those two
widths match. Trained with mini-batch RMSProp on mean squared error;
everything is seeded and deterministic. Implemented directly in numpy so
the analytic gradients can be audited against finite differences.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

HIDDEN_WIDTHS = (400, 45, 200, 45, 200)
# which hidden activation feeds the skip, and which pre-activation receives it
SKIP_FROM = 2
SKIP_INTO = 4


@dataclass(frozen=True)
class MlpArchitecture:
    input_dim: int
    output_dim: int
    hidden: tuple = HIDDEN_WIDTHS

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise InvalidArgumentError("layer dimensions must be >= 1")
        if tuple(self.hidden) != HIDDEN_WIDTHS:
            raise InvalidArgumentError(f"hidden widths are fixed at {HIDDEN_WIDTHS}")

    @property
    def layer_dims(self):
        return (self.input_dim,) + tuple(self.hidden) + (self.output_dim,)


@dataclass(frozen=True)
class TrainConfig:
    """Mini-batch RMSProp settings (loss is always mean squared error).

    `momentum` accumulates the preconditioned step as in the common
    framework implementations of RMSProp; 0 disables it.
    """

    epochs: int = 200
    batch_size: int = 1000
    learning_rate: float = 1e-3
    decay: float = 0.9
    stabilizer: float = 1e-8
    momentum: float = 0.0
    seed: int = 0
    k_folds: int = 5
    early_stop: bool = False
    patience: int = 50

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")
        if self.epochs < 1:
            raise InvalidArgumentError("epochs must be >= 1")
        if self.k_folds < 2:
            raise InvalidArgumentError("k_folds must be >= 2")


class MlpModel:
    """Weight matrices and bias vectors for the fixed architecture.

    Weights are stored (fan_in, fan_out) so a batch maps through
    ``batch @ W + b``.
    """

    def __init__(self, architecture, weights, biases, seed=None):
        dims = architecture.layer_dims
        if len(weights) != len(dims) - 1 or len(biases) != len(dims) - 1:
            raise InvalidArgumentError("expected one weight/bias pair per layer")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise InvalidArgumentError(
                    f"layer {i}: shapes {w.shape}/{b.shape} do not chain {dims[i]}->{dims[i + 1]}"
                )
        self.architecture = architecture
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        self.seed = seed

    @property
    def input_dim(self):
        return self.architecture.input_dim

    @property
    def output_dim(self):
        return self.architecture.output_dim

    def copy(self):
        return MlpModel(
            self.architecture,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            seed=self.seed,
        )

    def parameter_count(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def build_model(input_dim, output_dim, seed):
    """Seeded Gaussian initialization, std sqrt(2 / (fan_in + fan_out))."""
    arch = MlpArchitecture(input_dim, output_dim)
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    dims = arch.layer_dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        std = np.sqrt(2.0 / (fan_in + fan_out))
        weights.append(rng.standard_normal((fan_in, fan_out)) * std)
        biases.append(np.zeros(fan_out))
    return MlpModel(arch, weights, biases, seed=seed)


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _elu_grad(pre, post):
    # derivative is 1 above zero and elu(x) + 1 below
    return np.where(pre > 0, 1.0, post + 1.0)


def _forward_trace(model, batch):
    """Forward pass keeping pre-activations and activations for backprop."""
    pre = []
    act = [batch]
    h = batch
    for layer in range(5):
        z = h @ model.weights[layer] + model.biases[layer]
        if layer + 1 == SKIP_INTO:
            z = z + act[SKIP_FROM]
        a = elu(z)
        pre.append(z)
        act.append(a)
        h = a
    out = h @ model.weights[5] + model.biases[5]
    return out, pre, act


def forward(model, batch):
    """Map a batch (rows = samples) through the network."""
    batch = np.asarray(batch, dtype=float)
    if batch.ndim != 2 or batch.shape[1] != model.input_dim:
        raise InvalidArgumentError(
            f"batch width {batch.shape} does not match input_dim {model.input_dim}"
        )
    out, _, _ = _forward_trace(model, batch)
    return out


def predict(model, inputs):
    """Forward pass without any state mutation."""
    return forward(model, inputs)


def mse(predictions, targets):
    diff = predictions - targets
    return float(np.mean(diff * diff))


def _gradients(model, batch, targets):
    """Loss and analytic parameter gradients of the batch MSE."""
    out, pre, act = _forward_trace(model, batch)
    diff = out - targets
    loss = float(np.mean(diff * diff))

    grad_w = [None] * 6
    grad_b = [None] * 6
    delta = 2.0 * diff / diff.size
    grad_w[5] = act[5].T @ delta
    grad_b[5] = delta.sum(axis=0)

    upstream = delta @ model.weights[5].T
    skip_delta = None
    for layer in range(4, -1, -1):
        delta = upstream * _elu_grad(pre[layer], act[layer + 1])
        if layer + 1 == SKIP_INTO:
            skip_delta = delta
        grad_w[layer] = act[layer].T @ delta
        grad_b[layer] = delta.sum(axis=0)
        upstream = delta @ model.weights[layer].T
        if layer + 1 == SKIP_FROM + 1 and skip_delta is not None:
            # the skip feeds act[SKIP_FROM] straight into pre-activation 4
            upstream = upstream + skip_delta
    return loss, grad_w, grad_b


class VoxelDataset:
    """Paired input/target coefficient rows with block grouping.

    A block groups a source voxel with its synthetic rotations so that
    fold splitting can keep them on one side.
    """

    def __init__(self, inputs, targets, block_ids):
        inputs = np.asarray(inputs, dtype=float)
        targets = np.asarray(targets, dtype=float)
        block_ids = np.asarray(block_ids)
        if inputs.ndim != 2 or targets.ndim != 2:
            raise InvalidArgumentError("inputs and targets must be 2-D")
        if not (inputs.shape[0] == targets.shape[0] == block_ids.shape[0]):
            raise InvalidArgumentError("row counts of inputs/targets/block_ids differ")
        if inputs.shape[0] == 0:
            raise InvalidArgumentError("dataset is empty")
        self.inputs = inputs
        self.targets = targets
        self.block_ids = block_ids

    def __len__(self):
        return self.inputs.shape[0]

    def n_blocks(self):
        return np.unique(self.block_ids).size


def train(model, data, cfg, validation=None):
    """Mini-batch RMSProp on mean squared error.

    Returns a trained copy of the model and the per-epoch mean training
    loss. Shuffling is driven by cfg.seed, so identical (model, data,
    cfg) reproduce identical histories. When `validation` is given as an
    (inputs, targets) pair and cfg.early_stop is set, training stops
    after cfg.patience epochs without validation improvement and the
    best-validation weights are restored.
    """
    if not isinstance(data, VoxelDataset):
        raise InvalidArgumentError("data must be a VoxelDataset")
    if data.inputs.shape[1] != model.input_dim or data.targets.shape[1] != model.output_dim:
        raise InvalidArgumentError(
            f"dataset widths {data.inputs.shape[1]}/{data.targets.shape[1]} do not match "
            f"model dims {model.input_dim}/{model.output_dim}"
        )

    model = model.copy()
    square_avg_w = [np.zeros_like(w) for w in model.weights]
    square_avg_b = [np.zeros_like(b) for b in model.biases]
    step_w = [np.zeros_like(w) for w in model.weights]
    step_b = [np.zeros_like(b) for b in model.biases]
    rng = np.random.default_rng(cfg.seed)
    n_rows = len(data)
    history = []

    best_val = np.inf
    best_state = None
    stale = 0

    for _ in range(cfg.epochs):
        order = rng.permutation(n_rows)
        epoch_sse = 0.0
        for start in range(0, n_rows, cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            loss, grad_w, grad_b = _gradients(
                model, data.inputs[rows], data.targets[rows]
            )
            epoch_sse += loss * rows.size
            for i in range(6):
                square_avg_w[i] = cfg.decay * square_avg_w[i] + (1 - cfg.decay) * grad_w[i] ** 2
                square_avg_b[i] = cfg.decay * square_avg_b[i] + (1 - cfg.decay) * grad_b[i] ** 2
                step_w[i] = cfg.momentum * step_w[i] + grad_w[i] / (
                    np.sqrt(square_avg_w[i]) + cfg.stabilizer
                )
                step_b[i] = cfg.momentum * step_b[i] + grad_b[i] / (
                    np.sqrt(square_avg_b[i]) + cfg.stabilizer
                )
                model.weights[i] -= cfg.learning_rate * step_w[i]
                model.biases[i] -= cfg.learning_rate * step_b[i]
        history.append(epoch_sse / n_rows)

        if validation is not None:
            val_inputs, val_targets = validation
            val_loss = mse(forward(model, val_inputs), val_targets)
            if val_loss < best_val:
                best_val = val_loss
                stale = 0
                if cfg.early_stop:
                    best_state = ([w.copy() for w in model.weights],
                                  [b.copy() for b in model.biases])
            else:
                stale += 1
                if cfg.early_stop and stale >= cfg.patience:
                    break
    if cfg.early_stop and best_state is not None:
        model.weights, model.biases = best_state
    return model, np.array(history)


def gradient_check(model, batch, targets, *, n_samples=200, step=1e-5, seed=0,
                   arrays=None):
    """Max relative error of analytic vs central-difference gradients.

    Samples parameter coordinates at random (at least `n_samples`, or
    every coordinate of the arrays selected by `arrays`, e.g. ("w2",),
    when that is smaller). Intended for small batches.
    """
    batch = np.asarray(batch, dtype=float)
    targets = np.asarray(targets, dtype=float)
    _, grad_w, grad_b = _gradients(model, batch, targets)

    named = {}
    for i in range(6):
        named[f"w{i + 1}"] = (model.weights[i], grad_w[i])
        named[f"b{i + 1}"] = (model.biases[i], grad_b[i])
    if arrays is not None:
        unknown = set(arrays) - named.keys()
        if unknown:
            raise InvalidArgumentError(f"unknown parameter arrays: {sorted(unknown)}")
        named = {k: named[k] for k in arrays}

    flat = []
    for name, (param, grad) in named.items():
        for k in range(param.size):
            flat.append((param, grad, k))
    rng = np.random.default_rng(seed)
    if len(flat) > n_samples:
        picks = rng.choice(len(flat), size=n_samples, replace=False)
        flat = [flat[p] for p in picks]

    worst = 0.0
    for param, grad, k in flat:
        view = param.reshape(-1)
        saved = view[k]
        view[k] = saved + step
        loss_plus = mse(forward(model, batch), targets)
        view[k] = saved - step
        loss_minus = mse(forward(model, batch), targets)
        view[k] = saved
        numeric = (loss_plus - loss_minus) / (2.0 * step)
        analytic = grad.reshape(-1)[k]
        scale = max(abs(numeric), abs(analytic), 1e-8)
        worst = max(worst, abs(numeric - analytic) / scale)
    return worst


def kfold_split(data, k, seed):
    """Block-aware k-fold partitions as (train_rows, test_rows) index pairs.

    Blocks, not rows, are shuffled and dealt into k near-equal folds, so
    all rotations of a source voxel stay on one side of every split.
    """
    if k < 2:
        raise InvalidArgumentError("k must be >= 2")
    blocks = np.unique(data.block_ids)
    if blocks.size < k:
        raise InvalidArgumentError(f"cannot split {blocks.size} blocks into {k} folds")
    rng = np.random.default_rng(seed)
    shuffled = blocks[rng.permutation(blocks.size)]
    fold_blocks = np.array_split(shuffled, k)

    splits = []
    all_rows = np.arange(len(data))
    for fold in fold_blocks:
        test_mask = np.isin(data.block_ids, fold)
        splits.append((all_rows[~test_mask], all_rows[test_mask]))
    return splits
