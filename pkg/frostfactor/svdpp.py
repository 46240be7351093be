"""
SVD++ latent factor model trained with stochastic gradient descent.

A rating of item i by user u is predicted as

    mu + b_u + b_i + q_i · (p_u + |N(u)|^(-1/2) Σ_{j ∈ N(u)} y_j)

where N(u) is the set of items the user rated in training.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .checkpoint import read_container, write_container
from .corpus import ReviewSet
from .errors import DivergenceError, NotFoundError, ParameterError
from .evaluation import rmse
from .types import FactorVector, IdArray, Matrix, Rating

__all__ = [
    "EpochStats",
    "MfHyper",
    "MfModel",
    "SampleGradients",
    "export_json",
    "init_mf",
    "item_bias",
    "item_factors",
    "load_mf",
    "mf_rmse",
    "predict_known",
    "predict_rating",
    "rating_triples",
    "sample_gradients",
    "sample_loss",
    "save_mf",
    "train_mf",
]

logger = logging.getLogger(__name__)

_MAGIC = b"FFMF"
_VERSION = 1


@dataclass(frozen=True)
class MfHyper:
    """
    Hyperparameters of SVD++ training.

    Attributes:
        k: Number of latent factors.
        learning_rate: Initial SGD step size.
        regularization: L2 penalty weight of all biases and factors.
        epochs: Number of passes over the training ratings.
        seed: Seed of parameter initialisation and per-epoch shuffling.
        init_scale: Factors start uniform in [-init_scale, init_scale].
        adaptive_rate: Undo an epoch that increases the training objective
            and halve the learning rate for the following epochs.
    """

    k: int = 20
    learning_rate: float = 0.007
    regularization: float = 0.02
    epochs: int = 30
    seed: int = 0
    init_scale: float = 0.1
    adaptive_rate: bool = True

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ParameterError(f"k must be at least 1, got {self.k}.")
        if not self.learning_rate > 0:
            raise ParameterError("The learning rate must be positive.")
        if not self.regularization >= 0:
            raise ParameterError("The regularization weight must not be negative.")
        if self.epochs < 1:
            raise ParameterError("At least one training epoch is required.")
        if not self.init_scale > 0:
            raise ParameterError("The initialisation scale must be positive.")


@dataclass(frozen=True)
class EpochStats:
    """
    Training statistics after an epoch. Epoch 0 describes the initial state.
    """

    epoch: int
    rmse: float
    objective: float
    learning_rate: float
    rolled_back: bool = False


@dataclass
class SampleGradients:
    """
    Gradients of the single-rating objective. `implicit_factors` has one row
    per item in N(u), in the order of `MfModel.rated_positions`.
    """

    user_bias: float
    item_bias: float
    user_factors: FactorVector
    item_factors: FactorVector
    implicit_factors: Matrix


class MfModel:
    """
    Parameters of a trained (or freshly initialised) SVD++ model. Parameters
    are stored as arrays indexed by the position of a user or item in
    `user_ids` and `item_ids`.
    """

    def __init__(
        self,
        hyper: MfHyper,
        mu: float,
        user_ids: Sequence[str],
        item_ids: Sequence[str],
        user_bias: np.ndarray,
        item_bias: np.ndarray,
        user_factors: Matrix,
        item_factors: Matrix,
        implicit_factors: Matrix,
        rated: Sequence[IdArray],
        history: Optional[List[EpochStats]] = None,
    ) -> None:
        self.hyper = hyper
        self.mu = mu
        self.user_ids: Tuple[str, ...] = tuple(user_ids)
        self.item_ids: Tuple[str, ...] = tuple(item_ids)
        self.user_bias = user_bias
        self.item_bias = item_bias
        self.user_factors = user_factors
        self.item_factors = item_factors
        self.implicit_factors = implicit_factors
        self.rated_positions: Tuple[IdArray, ...] = tuple(rated)
        self.history: List[EpochStats] = list(history or [])

        self._user_index = {user_id: u for u, user_id in enumerate(self.user_ids)}
        self._item_index = {item_id: i for i, item_id in enumerate(self.item_ids)}
        self.norms = [len(items) ** -0.5 for items in self.rated_positions]
        self._implicit: Optional[Matrix] = None

        assert len(self._user_index) == len(self.user_ids) == len(self.rated_positions)
        assert len(self._item_index) == len(self.item_ids)
        assert user_factors.shape == (len(self.user_ids), hyper.k)
        assert item_factors.shape == implicit_factors.shape == (
            len(self.item_ids),
            hyper.k,
        )

    @property
    def k(self) -> int:
        return self.hyper.k

    @property
    def final_rmse(self) -> float:
        """Return the training RMSE after the last epoch."""
        return self.history[-1].rmse if self.history else math.nan

    def has_user(self, user_id: str) -> bool:
        return user_id in self._user_index

    def has_item(self, item_id: str) -> bool:
        return item_id in self._item_index

    def user_position(self, user_id: str) -> int:
        try:
            return self._user_index[user_id]
        except KeyError:
            raise NotFoundError(f"Unknown user ‘{user_id}’.") from None

    def item_position(self, item_id: str) -> int:
        try:
            return self._item_index[item_id]
        except KeyError:
            raise NotFoundError(f"Unknown item ‘{item_id}’.") from None

    def rated_items(self, user_id: str) -> frozenset:
        """Return N(u), the items a user rated in training."""
        positions = self.rated_positions[self.user_position(user_id)]
        return frozenset(self.item_ids[i] for i in positions)

    def implicit_vectors(self) -> Matrix:
        """
        Return |N(u)|^(-1/2) Σ y_j for every user. The result is cached until
        the parameters change through training.
        """
        if self._implicit is None:
            implicit = np.zeros_like(self.user_factors)
            for u, items in enumerate(self.rated_positions):
                implicit[u] = self.norms[u] * self.implicit_factors[items].sum(axis=0)
            self._implicit = implicit
        return self._implicit

    def invalidate_cache(self) -> None:
        self._implicit = None

    def parameters(self) -> Tuple[np.ndarray, ...]:
        return (
            self.user_bias,
            self.item_bias,
            self.user_factors,
            self.item_factors,
            self.implicit_factors,
        )

    def snapshot(self) -> Tuple[np.ndarray, ...]:
        return tuple(array.copy() for array in self.parameters())

    def restore(self, snapshot: Tuple[np.ndarray, ...]) -> None:
        for target, saved in zip(self.parameters(), snapshot):
            target[...] = saved
        self.invalidate_cache()


def rating_triples(
    ratings: ReviewSet,
) -> Tuple[List[str], List[str], IdArray, IdArray, np.ndarray]:
    """
    Turn reviews into training triples. Only the latest-dated rating of each
    (user, business) pair is kept; among equally dated ones the later review
    in corpus order wins. Users and items are numbered in order of first
    appearance among the kept ratings.

    Returns:
        User identifiers, item identifiers and the user positions, item
            positions and ratings of the triples in corpus order.
    """
    latest: Dict[Tuple[str, str], int] = {}
    for position, review in enumerate(ratings):
        key = (review.user_id, review.business_id)
        kept = latest.get(key)
        if kept is None or review.date >= ratings[kept].date:
            latest[key] = position

    user_index: Dict[str, int] = {}
    item_index: Dict[str, int] = {}
    users, items, stars = [], [], []
    for position in sorted(latest.values()):
        review = ratings[position]
        users.append(user_index.setdefault(review.user_id, len(user_index)))
        items.append(item_index.setdefault(review.business_id, len(item_index)))
        stars.append(review.stars)

    return (
        list(user_index),
        list(item_index),
        np.asarray(users, dtype=np.int64),
        np.asarray(items, dtype=np.int64),
        np.asarray(stars, dtype=np.float64),
    )


def _initialise(
    ratings: ReviewSet, hyper: MfHyper, rng: np.random.Generator
) -> Tuple[MfModel, IdArray, IdArray, np.ndarray]:
    if len(ratings) == 0:
        raise ParameterError("Cannot factorise an empty rating set.")

    user_ids, item_ids, users, items, stars = rating_triples(ratings)
    num_users, num_items = len(user_ids), len(item_ids)

    rated: List[List[int]] = [[] for _ in range(num_users)]
    for u, i in zip(users.tolist(), items.tolist()):
        rated[u].append(i)

    scale = hyper.init_scale
    user_factors = rng.uniform(-scale, scale, size=(num_users, hyper.k))
    item_factors = rng.uniform(-scale, scale, size=(num_items, hyper.k))
    implicit_factors = rng.uniform(-scale, scale, size=(num_items, hyper.k))

    model = MfModel(
        hyper=hyper,
        mu=float(np.mean(stars)),
        user_ids=user_ids,
        item_ids=item_ids,
        user_bias=np.zeros(num_users),
        item_bias=np.zeros(num_items),
        user_factors=user_factors,
        item_factors=item_factors,
        implicit_factors=implicit_factors,
        rated=[np.asarray(positions, dtype=np.int64) for positions in rated],
    )
    return model, users, items, stars


def init_mf(ratings: ReviewSet, hyper: MfHyper = MfHyper()) -> MfModel:
    """
    Return the seeded pre-training state `train_mf` starts from: biases are
    zero and all factors are drawn uniformly from [-init_scale, init_scale],
    user factors first, then item factors, then implicit factors.
    """
    model, _, _, _ = _initialise(ratings, hyper, np.random.default_rng(hyper.seed))
    return model


def _gradients(model: MfModel, u: int, i: int, rating: float) -> SampleGradients:
    reg = model.hyper.regularization
    items = model.rated_positions[u]
    norm = model.norms[u]
    implicit_rows = model.implicit_factors[items]
    implicit = norm * implicit_rows.sum(axis=0)

    user_factors = model.user_factors[u]
    item_factors = model.item_factors[i]
    predicted = (
        model.mu
        + model.user_bias[u]
        + model.item_bias[i]
        + item_factors @ (user_factors + implicit)
    )
    error = rating - predicted

    return SampleGradients(
        user_bias=float(-error + reg * model.user_bias[u]),
        item_bias=float(-error + reg * model.item_bias[i]),
        user_factors=-error * item_factors + reg * user_factors,
        item_factors=-error * (user_factors + implicit) + reg * item_factors,
        implicit_factors=-error * norm * item_factors + reg * implicit_rows,
    )


def sample_loss(model: MfModel, user_id: str, item_id: str, rating: Rating) -> float:
    """
    Return the single-rating objective SGD descends on:
    ½ (r − r̂)² + ½ λ (b_u² + b_i² + |p_u|² + |q_i|² + Σ_{j ∈ N(u)} |y_j|²).
    """
    u = model.user_position(user_id)
    i = model.item_position(item_id)
    items = model.rated_positions[u]
    implicit_rows = model.implicit_factors[items]
    implicit = model.norms[u] * implicit_rows.sum(axis=0)

    predicted = (
        model.mu
        + model.user_bias[u]
        + model.item_bias[i]
        + model.item_factors[i] @ (model.user_factors[u] + implicit)
    )
    penalty = (
        model.user_bias[u] ** 2
        + model.item_bias[i] ** 2
        + model.user_factors[u] @ model.user_factors[u]
        + model.item_factors[i] @ model.item_factors[i]
        + np.sum(implicit_rows**2)
    )
    return float(
        0.5 * (rating - predicted) ** 2
        + 0.5 * model.hyper.regularization * penalty
    )


def sample_gradients(
    model: MfModel, user_id: str, item_id: str, rating: Rating
) -> SampleGradients:
    """Return the gradients of `sample_loss` with respect to every parameter."""
    return _gradients(
        model, model.user_position(user_id), model.item_position(item_id), rating
    )


def _sgd_step(model: MfModel, u: int, i: int, rating: float, rate: float) -> None:
    gradients = _gradients(model, u, i, rating)
    model.user_bias[u] -= rate * gradients.user_bias
    model.item_bias[i] -= rate * gradients.item_bias
    model.user_factors[u] -= rate * gradients.user_factors
    model.item_factors[i] -= rate * gradients.item_factors
    # N(u) holds distinct items, so fancy-index assignment is safe here.
    model.implicit_factors[model.rated_positions[u]] -= (
        rate * gradients.implicit_factors
    )


def _training_error(
    model: MfModel, users: IdArray, items: IdArray, stars: np.ndarray
) -> Tuple[float, float]:
    """Return the training RMSE and the regularised objective."""
    model.invalidate_cache()
    implicit = model.implicit_vectors()
    predicted = (
        model.mu
        + model.user_bias[users]
        + model.item_bias[items]
        + np.einsum(
            "nk,nk->n",
            model.item_factors[items],
            model.user_factors[users] + implicit[users],
        )
    )
    errors = stars - predicted
    squared = float(errors @ errors)
    penalty = sum(float(np.sum(array**2)) for array in model.parameters())
    objective = squared + model.hyper.regularization * penalty
    return math.sqrt(squared / len(stars)), objective


def train_mf(ratings: ReviewSet, hyper: MfHyper = MfHyper()) -> MfModel:
    """
    Fit an SVD++ model to the ratings of a review set.

    The ratings are visited in a fresh seeded permutation every epoch. After
    each epoch the training RMSE and the regularised objective
    Σ (r − r̂)² + λ Σ |θ|² are recorded. With `hyper.adaptive_rate`, an epoch
    that increases the objective is undone and the learning rate halved.

    Raises:
        ParameterError: The review set is empty.
        DivergenceError: A parameter became non-finite.
    """
    rng = np.random.default_rng(hyper.seed)
    model, users, items, stars = _initialise(ratings, hyper, rng)

    user_list, item_list, star_list = users.tolist(), items.tolist(), stars.tolist()
    rate = hyper.learning_rate
    train_rmse, objective = _training_error(model, users, items, stars)
    history = [EpochStats(0, train_rmse, objective, rate)]

    logger.info(
        "Training SVD++ with k=%d on %d ratings of %d users and %d items",
        hyper.k,
        len(stars),
        len(model.user_ids),
        len(model.item_ids),
    )

    for epoch in range(1, hyper.epochs + 1):
        snapshot = model.snapshot() if hyper.adaptive_rate else None
        for t in rng.permutation(len(star_list)).tolist():
            _sgd_step(model, user_list[t], item_list[t], star_list[t], rate)

        epoch_rmse, epoch_objective = _training_error(model, users, items, stars)
        if not math.isfinite(epoch_objective):
            raise DivergenceError(epoch)

        if snapshot is not None and epoch_objective > objective:
            model.restore(snapshot)
            history.append(EpochStats(epoch, train_rmse, objective, rate, True))
            logger.info(
                "Epoch %d increased the objective; halving learning rate to %g",
                epoch,
                rate / 2,
            )
            rate /= 2
            continue

        train_rmse, objective = epoch_rmse, epoch_objective
        history.append(EpochStats(epoch, train_rmse, objective, rate))
        logger.info(
            "Epoch %d: training RMSE %.4f, objective %.4f", epoch, train_rmse, objective
        )

    model.history = history
    model.invalidate_cache()
    logger.info("Final training RMSE %.4f", train_rmse)
    return model


def predict_rating(
    model: MfModel,
    user_id: str,
    factors: FactorVector,
    item_bias: float = 0.0,
    *,
    clamp: bool = True,
) -> Rating:
    """
    Predict the rating of an item described by its factor vector and bias.

    Arguments:
        model: Trained model providing the user side of the prediction.
        user_id: The rating user. Unknown users get mu + item_bias.
        factors: Item factor vector of length k.
        item_bias: Item bias.
        clamp: Clamp the prediction to the rating range [1, 5].
    """
    factors = np.asarray(factors, dtype=np.float64)
    if factors.shape != (model.k,):
        raise ParameterError(
            f"Expected an item factor vector of length {model.k}, "
            f"got shape {factors.shape}."
        )

    predicted = model.mu + item_bias
    if model.has_user(user_id):
        u = model.user_position(user_id)
        user_side = model.user_factors[u] + model.implicit_vectors()[u]
        predicted += model.user_bias[u] + float(factors @ user_side)

    return float(min(max(predicted, 1.0), 5.0)) if clamp else float(predicted)


def item_factors(model: MfModel, item_id: str) -> FactorVector:
    """Return q_i of a trained item. The array is a view into the model."""
    return model.item_factors[model.item_position(item_id)]


def item_bias(model: MfModel, item_id: str) -> float:
    return float(model.item_bias[model.item_position(item_id)])


def predict_known(
    model: MfModel, user_id: str, item_id: str, *, clamp: bool = True
) -> Rating:
    """Predict a rating of an item the model was trained on."""
    return predict_rating(
        model,
        user_id,
        item_factors(model, item_id),
        item_bias(model, item_id),
        clamp=clamp,
    )


def mf_rmse(model: MfModel, ratings: ReviewSet, *, clamp: bool = True) -> float:
    """
    Return the RMSE of the model's predictions over a review set. Every
    reviewed business must have been part of the factorisation.

    Raises:
        NotFoundError: Some businesses have no factors; all are listed.
    """
    missing = sorted(
        {
            review.business_id
            for review in ratings
            if not model.has_item(review.business_id)
        }
    )
    if missing:
        raise NotFoundError(f"No latent factors for item(s): {', '.join(missing)}")

    return rmse(
        [
            (
                predict_known(model, review.user_id, review.business_id, clamp=clamp),
                review.stars,
            )
            for review in ratings
        ]
    )


def save_mf(model: MfModel, path: Union[str, Path]) -> None:
    """
    Write a model checkpoint. Arrays are stored in the order user_bias,
    item_bias, user_factors, item_factors, implicit_factors, rated_offsets,
    rated_items, where user u rated
    rated_items[rated_offsets[u]:rated_offsets[u + 1]].
    """
    lengths = [len(items) for items in model.rated_positions]
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    rated = (
        np.concatenate(model.rated_positions)
        if model.rated_positions
        else np.zeros(0, dtype=np.int64)
    )
    write_container(
        path,
        _MAGIC,
        _VERSION,
        {
            "hyper": asdict(model.hyper),
            "mu": model.mu,
            "user_ids": list(model.user_ids),
            "item_ids": list(model.item_ids),
            "history": [asdict(stats) for stats in model.history],
        },
        {
            "user_bias": model.user_bias,
            "item_bias": model.item_bias,
            "user_factors": model.user_factors,
            "item_factors": model.item_factors,
            "implicit_factors": model.implicit_factors,
            "rated_offsets": offsets,
            "rated_items": rated,
        },
    )


def load_mf(path: Union[str, Path]) -> MfModel:
    """Read a checkpoint written by `save_mf`."""
    header, arrays = read_container(path, _MAGIC, _VERSION)
    offsets = arrays["rated_offsets"]
    rated = [
        arrays["rated_items"][offsets[u] : offsets[u + 1]]
        for u in range(len(offsets) - 1)
    ]
    return MfModel(
        hyper=MfHyper(**header["hyper"]),
        mu=header["mu"],
        user_ids=header["user_ids"],
        item_ids=header["item_ids"],
        user_bias=arrays["user_bias"],
        item_bias=arrays["item_bias"],
        user_factors=arrays["user_factors"],
        item_factors=arrays["item_factors"],
        implicit_factors=arrays["implicit_factors"],
        rated=rated,
        history=[EpochStats(**stats) for stats in header["history"]],
    )


def export_json(model: MfModel, path: Union[str, Path]) -> None:
    """Write all model parameters keyed by identifier as indented JSON."""
    document = {
        "hyper": asdict(model.hyper),
        "mu": model.mu,
        "users": {
            user_id: {
                "bias": float(model.user_bias[u]),
                "factors": model.user_factors[u].tolist(),
                "rated": [model.item_ids[i] for i in model.rated_positions[u]],
            }
            for u, user_id in enumerate(model.user_ids)
        },
        "items": {
            item_id: {
                "bias": float(model.item_bias[i]),
                "factors": model.item_factors[i].tolist(),
                "implicit_factors": model.implicit_factors[i].tolist(),
            }
            for i, item_id in enumerate(model.item_ids)
        },
        "history": [asdict(stats) for stats in model.history],
    }
    with open(path, "w", encoding="utf-8") as stream:
        json.dump(document, stream, indent=2, sort_keys=True)
