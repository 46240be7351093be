"""
A convolutional network regressing item latent factors from descriptions.

The network embeds the tokens of a description, convolves the N × d input
with a bank of filters spanning `window` consecutive tokens, applies ReLU,
keeps the maximum response of every filter over the whole description and
maps the pooled vector to k factors with a dense layer. The input is extended
with `window` − 1 zero rows at the end so that the convolution output has as
many positions as the input.

Word vectors are trained together with the other parameters; the padding
row stays zero.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pandas import DataFrame

from .checkpoint import read_container, write_container
from .errors import (
    DivergenceError,
    NotFoundError,
    ParameterError,
    StaleCacheError,
)
from .textprep import PAD_ROW, EmbeddingTable, TokenizedDoc
from .types import FactorVector, IdArray, Matrix

__all__ = [
    "CnnConfig",
    "CnnEpoch",
    "CnnModel",
    "ForwardCache",
    "Gradients",
    "backward",
    "evaluate_cnn",
    "forward",
    "history_frame",
    "init_cnn",
    "load_cnn",
    "loss",
    "predict_factors",
    "save_cnn",
    "squared_error",
    "train_cnn",
]

logger = logging.getLogger(__name__)

_MAGIC = b"FFCN"
_VERSION = 1


@dataclass(frozen=True)
class CnnConfig:
    """
    Architecture and training settings of the network.

    Attributes:
        embed_dim: Dimensionality of word vectors.
        num_filters: Number of convolution filters.
        window: Number of consecutive tokens a filter spans.
        output_dim: Number of predicted latent factors.
        learning_rate: SGD step size.
        batch_size: Number of documents per update.
        max_epochs: Number of passes over the training documents.
        validation_frac: Share of documents held out for model selection.
        seed: Seed of initialisation, the validation split and batch order.
    """

    embed_dim: int = 300
    num_filters: int = 50
    window: int = 4
    output_dim: int = 20
    learning_rate: float = 0.001
    batch_size: int = 64
    max_epochs: int = 50
    validation_frac: float = 0.10
    seed: int = 0

    def __post_init__(self) -> None:
        for name in (
            "embed_dim",
            "num_filters",
            "window",
            "output_dim",
            "batch_size",
            "max_epochs",
        ):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be at least 1.")
        if not self.learning_rate > 0:
            raise ParameterError("The learning rate must be positive.")
        if not 0 < self.validation_frac < 1:
            raise ParameterError("The validation share must lie between 0 and 1.")


@dataclass(frozen=True)
class CnnEpoch:
    """RMSE of the predicted factors after an epoch; epoch 0 is the initial model."""

    epoch: int
    train_rmse: float
    val_rmse: float


class CnnModel:
    """
    Parameters of the network.

    Attributes:
        config: Architecture the parameters belong to.
        embedding: Trainable word vectors, owned by the model.
        filters: Filter bank of shape (num_filters, window × embed_dim). The
            weights applied to the o-th token of a window are
            `filters[:, o * embed_dim : (o + 1) * embed_dim]`.
        filter_bias: One bias per filter.
        dense_w: Output weights of shape (output_dim, num_filters).
        dense_b: Output biases.
        epoch: Training epoch the parameters were taken from.
        version: Incremented by every parameter update.
    """

    def __init__(
        self,
        config: CnnConfig,
        embedding: EmbeddingTable,
        filters: Matrix,
        filter_bias: FactorVector,
        dense_w: Matrix,
        dense_b: FactorVector,
        epoch: int = 0,
    ) -> None:
        if embedding.dim != config.embed_dim:
            raise ParameterError(
                f"Embedding table has {embedding.dim} dimensions, "
                f"the network expects {config.embed_dim}."
            )
        self.config = config
        self.embedding = embedding
        self.filters = np.asarray(filters, dtype=np.float64).reshape(
            config.num_filters, config.window * config.embed_dim
        )
        self.filter_bias = np.asarray(filter_bias, dtype=np.float64).reshape(
            config.num_filters
        )
        self.dense_w = np.asarray(dense_w, dtype=np.float64).reshape(
            config.output_dim, config.num_filters
        )
        self.dense_b = np.asarray(dense_b, dtype=np.float64).reshape(config.output_dim)
        self.epoch = epoch
        self.version = 0

    def copy(self) -> CnnModel:
        return CnnModel(
            self.config,
            self.embedding.copy(),
            self.filters.copy(),
            self.filter_bias.copy(),
            self.dense_w.copy(),
            self.dense_b.copy(),
            self.epoch,
        )

    def parameters(self) -> Dict[str, np.ndarray]:
        """Return every parameter array by name. The arrays are not copies."""
        return {
            "embedding": self.embedding.matrix,
            "filters": self.filters,
            "filter_bias": self.filter_bias,
            "dense_w": self.dense_w,
            "dense_b": self.dense_b,
        }

    def window_weights(self) -> np.ndarray:
        """Return the filters as a (num_filters, window, embed_dim) view."""
        config = self.config
        return self.filters.reshape(config.num_filters, config.window, config.embed_dim)


@dataclass(frozen=True)
class ForwardCache:
    """Activations of one forward pass, kept for the backward pass."""

    version: int
    token_ids: IdArray
    inputs: Matrix
    pre_activations: Matrix
    argmax: IdArray
    pooled: FactorVector


@dataclass
class Gradients:
    """
    Gradients of the squared error of one or more documents.

    Attributes:
        filters, filter_bias, dense_w, dense_b: Gradients of the model
            parameters of the same name.
        rows: Embedding rows the documents use, padding excluded, ascending.
        row_grads: Gradient of every row in `rows`.
    """

    filters: Matrix
    filter_bias: FactorVector
    dense_w: Matrix
    dense_b: FactorVector
    rows: IdArray
    row_grads: Matrix

    def embedding_row(self, row: int) -> FactorVector:
        """Return the gradient of an embedding row, zero for unused rows."""
        positions = np.flatnonzero(self.rows == row)
        if len(positions) == 0:
            return np.zeros(self.row_grads.shape[1])
        return self.row_grads[positions[0]]

    @classmethod
    def total(cls, parts: Sequence[Gradients]) -> Gradients:
        """Sum gradients of several documents, accumulated in the given order."""
        first = parts[0]
        filters = first.filters.copy()
        filter_bias = first.filter_bias.copy()
        dense_w = first.dense_w.copy()
        dense_b = first.dense_b.copy()
        for part in parts[1:]:
            filters += part.filters
            filter_bias += part.filter_bias
            dense_w += part.dense_w
            dense_b += part.dense_b

        all_rows = np.concatenate([part.rows for part in parts])
        rows, inverse = np.unique(all_rows, return_inverse=True)
        row_grads = np.zeros((len(rows), first.row_grads.shape[1]))
        np.add.at(row_grads, inverse, np.vstack([part.row_grads for part in parts]))
        return cls(filters, filter_bias, dense_w, dense_b, rows, row_grads)


def init_cnn(
    config: CnnConfig, table: EmbeddingTable, rng: np.random.Generator
) -> CnnModel:
    """
    Create a network with uniform Glorot initialisation of the filters and
    dense weights and zero biases. The model gets its own copy of the table.
    """
    fan_in = config.window * config.embed_dim
    filter_limit = math.sqrt(6 / (fan_in + config.num_filters))
    filters = rng.uniform(
        -filter_limit, filter_limit, size=(config.num_filters, fan_in)
    )

    dense_limit = math.sqrt(6 / (config.num_filters + config.output_dim))
    dense_w = rng.uniform(
        -dense_limit, dense_limit, size=(config.output_dim, config.num_filters)
    )
    return CnnModel(
        config,
        table.copy(),
        filters,
        np.zeros(config.num_filters),
        dense_w,
        np.zeros(config.output_dim),
    )


def forward(model: CnnModel, doc: TokenizedDoc) -> Tuple[FactorVector, ForwardCache]:
    """
    Predict the factors of a document and keep the activations needed to
    compute gradients.

    Raises:
        ParameterError: The document has no tokens.
    """
    if doc.true_length < 1:
        raise ParameterError(f"Description of ‘{doc.business_id}’ has no tokens.")

    config = model.config
    length = len(doc.token_ids)
    inputs = np.vstack(
        [
            model.embedding.matrix[doc.token_ids],
            np.zeros((config.window - 1, config.embed_dim)),
        ]
    )

    weights = model.window_weights()
    pre_activations = np.tile(model.filter_bias, (length, 1))
    for offset in range(config.window):
        pre_activations += inputs[offset : offset + length] @ weights[:, offset, :].T

    activations = np.maximum(pre_activations, 0.0)
    # np.argmax returns the first maximal position.
    argmax = np.argmax(activations, axis=0)
    pooled = activations[argmax, np.arange(config.num_filters)]
    prediction = model.dense_w @ pooled + model.dense_b

    cache = ForwardCache(
        model.version, doc.token_ids, inputs, pre_activations, argmax, pooled
    )
    return prediction, cache


def predict_factors(model: CnnModel, doc: TokenizedDoc) -> FactorVector:
    return forward(model, doc)[0]


def squared_error(prediction: FactorVector, target: FactorVector) -> float:
    """Return the mean squared difference of two factor vectors."""
    prediction = np.asarray(prediction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if prediction.shape != target.shape:
        raise ParameterError(
            f"Cannot compare vectors of shapes {prediction.shape} and {target.shape}."
        )
    difference = prediction - target
    return float(difference @ difference) / len(difference)


def loss(prediction: FactorVector, target: FactorVector) -> float:
    """Return the root mean squared difference of two factor vectors."""
    return math.sqrt(squared_error(prediction, target))


def backward(
    model: CnnModel,
    cache: ForwardCache,
    prediction: FactorVector,
    target: FactorVector,
) -> Gradients:
    """
    Compute the gradients of `squared_error(prediction, target)` with respect
    to every parameter used by the forward pass of `cache`.

    Raises:
        StaleCacheError: The model was updated after the forward pass.
    """
    if cache.version != model.version:
        raise StaleCacheError(
            f"Forward cache of model version {cache.version} used with "
            f"version {model.version}."
        )

    config = model.config
    d_output = 2.0 * (np.asarray(prediction) - np.asarray(target)) / config.output_dim

    dense_w = np.outer(d_output, cache.pooled)
    d_pooled = model.dense_w.T @ d_output

    filter_range = np.arange(config.num_filters)
    active = cache.pre_activations[cache.argmax, filter_range] > 0
    d_response = np.where(active, d_pooled, 0.0)

    # Input rows seen by every filter at its maximal position.
    positions = cache.argmax[:, None] + np.arange(config.window)
    windows = cache.inputs[positions]
    filters = d_response[:, None] * windows.reshape(config.num_filters, -1)

    length = len(cache.token_ids)
    contributions = d_response[:, None, None] * model.window_weights()
    inside = positions < length
    d_inputs = np.zeros((length, config.embed_dim))
    np.add.at(d_inputs, positions[inside], contributions[inside])

    rows, inverse = np.unique(cache.token_ids, return_inverse=True)
    row_grads = np.zeros((len(rows), config.embed_dim))
    np.add.at(row_grads, inverse, d_inputs)
    used = rows != PAD_ROW

    return Gradients(
        filters=filters,
        filter_bias=d_response,
        dense_w=dense_w,
        dense_b=d_output,
        rows=rows[used],
        row_grads=row_grads[used],
    )


def _apply(model: CnnModel, gradients: Gradients, step: float, epoch: int) -> None:
    model.filters -= step * gradients.filters
    model.filter_bias -= step * gradients.filter_bias
    model.dense_w -= step * gradients.dense_w
    model.dense_b -= step * gradients.dense_b
    matrix = model.embedding.matrix
    matrix[gradients.rows] -= step * gradients.row_grads
    model.version += 1

    touched = (
        model.filters,
        model.filter_bias,
        model.dense_w,
        model.dense_b,
        matrix[gradients.rows],
    )
    if not all(np.isfinite(array).all() for array in touched):
        raise DivergenceError(epoch)


def evaluate_cnn(
    model: CnnModel,
    docs: Sequence[TokenizedDoc],
    targets: Mapping[str, FactorVector],
) -> float:
    """
    Return the RMSE of the predicted factors over all components of all
    documents.
    """
    if not docs:
        raise ParameterError("Cannot evaluate on an empty document list.")
    total = math.fsum(
        squared_error(predict_factors(model, doc), targets[doc.business_id])
        for doc in docs
    )
    return math.sqrt(total / len(docs))


def _check_targets(
    docs: Sequence[TokenizedDoc], targets: Mapping[str, FactorVector], k: int
) -> None:
    missing = [doc.business_id for doc in docs if doc.business_id not in targets]
    if missing:
        raise NotFoundError(f"No target factors for: {', '.join(missing)}")
    for doc in docs:
        if np.shape(targets[doc.business_id]) != (k,):
            raise ParameterError(
                f"Target of ‘{doc.business_id}’ does not have {k} components."
            )


def train_cnn(
    docs: Sequence[TokenizedDoc],
    targets: Mapping[str, FactorVector],
    config: CnnConfig,
    table: EmbeddingTable,
) -> Tuple[CnnModel, List[CnnEpoch]]:
    """
    Train the network with minibatch SGD on the mean squared error of the
    predicted factors.

    The documents are shuffled once with the configured seed and the last
    `validation_frac` of them are held out. Every epoch visits the remaining
    documents in a new random order, in batches of `batch_size` (the last
    batch may be smaller). The model with the lowest validation RMSE is
    returned, the initial model included.

    Arguments:
        docs: Prepared descriptions.
        targets: Factor vector of every described business.
        config: Architecture and training settings.
        table: Embedding table the documents were prepared against. It is
            copied, not modified.

    Returns:
        The selected model and the RMSE history, starting with epoch 0.

    Raises:
        NotFoundError: Some documents have no target; all are listed.
        ParameterError: Fewer than two documents, or mismatching shapes.
        DivergenceError: A parameter or the validation error became
            non-finite.
    """
    if len(docs) < 2:
        raise ParameterError("Training needs at least two documents.")
    _check_targets(docs, targets, config.output_dim)

    rng = np.random.default_rng(config.seed)
    model = init_cnn(config, table, rng)

    order = rng.permutation(len(docs))
    num_val = min(max(1, round(len(docs) * config.validation_frac)), len(docs) - 1)
    train_docs = [docs[i] for i in order[: len(docs) - num_val].tolist()]
    val_docs = [docs[i] for i in order[len(docs) - num_val :].tolist()]

    logger.info(
        "Training CNN on %d descriptions, validating on %d",
        len(train_docs),
        len(val_docs),
    )

    history = [
        CnnEpoch(
            0,
            evaluate_cnn(model, train_docs, targets),
            evaluate_cnn(model, val_docs, targets),
        )
    ]
    best: Tuple[float, CnnModel] = (history[0].val_rmse, model.copy())

    for epoch in range(1, config.max_epochs + 1):
        shuffled = rng.permutation(len(train_docs)).tolist()
        for start in range(0, len(shuffled), config.batch_size):
            batch = [train_docs[i] for i in shuffled[start : start + config.batch_size]]
            parts = []
            for doc in batch:
                prediction, cache = forward(model, doc)
                parts.append(
                    backward(model, cache, prediction, targets[doc.business_id])
                )
            step = config.learning_rate / len(batch)
            _apply(model, Gradients.total(parts), step, epoch)

        model.epoch = epoch
        record = CnnEpoch(
            epoch,
            evaluate_cnn(model, train_docs, targets),
            evaluate_cnn(model, val_docs, targets),
        )
        if not (math.isfinite(record.train_rmse) and math.isfinite(record.val_rmse)):
            raise DivergenceError(epoch, "loss")
        history.append(record)
        logger.info(
            "Epoch %d: training RMSE %.4f, validation RMSE %.4f",
            epoch,
            record.train_rmse,
            record.val_rmse,
        )

        if record.val_rmse < best[0]:
            best = (record.val_rmse, model.copy())

    logger.info(
        "Lowest validation RMSE %.4f reached in epoch %d", best[0], best[1].epoch
    )
    return best[1], history


def history_frame(history: Sequence[CnnEpoch]) -> DataFrame:
    """Return the training history with columns epoch, train_rmse, val_rmse."""
    return DataFrame(
        [asdict(record) for record in history],
        columns=["epoch", "train_rmse", "val_rmse"],
    )


def save_cnn(
    model: CnnModel,
    path: Union[str, Path],
    history: Optional[Sequence[CnnEpoch]] = None,
) -> None:
    """
    Write a model checkpoint. Arrays are stored in the order embedding,
    filters, filter_bias, dense_w, dense_b.
    """
    write_container(
        path,
        _MAGIC,
        _VERSION,
        {
            "config": asdict(model.config),
            "epoch": model.epoch,
            "table": model.embedding.describe(),
            "history": [asdict(record) for record in history or ()],
        },
        model.parameters(),
    )


def load_cnn(path: Union[str, Path]) -> Tuple[CnnModel, List[CnnEpoch]]:
    """Read a model checkpoint and the history stored with it."""
    header, arrays = read_container(path, _MAGIC, _VERSION)
    model = CnnModel(
        CnnConfig(**header["config"]),
        EmbeddingTable.from_description(header["table"], arrays["embedding"]),
        arrays["filters"],
        arrays["filter_bias"],
        arrays["dense_w"],
        arrays["dense_b"],
        header["epoch"],
    )
    return model, [CnnEpoch(**record) for record in header["history"]]
