"""Riemannian SGD on the ball, the joint classification + clustering
objective, loss-weight schedules, and the training loops.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ball, cluster, geometry, model as model_mod
from . import tape as tp
from .data import Taxonomy

__all__ = [
    "LossWeights",
    "Schedule",
    "TrainState",
    "riemannian_grad",
    "rsgd_step",
    "joint_loss",
    "train",
    "train_with_constraint",
]

DIVERGENCE_LIMIT = 1e8


@dataclass(frozen=True)
class LossWeights:
    """Weights of the two loss terms: lam for classification, gamma for
    clustering."""

    lam: float
    gamma: float

    def __post_init__(self):
        if self.lam < 0 or self.gamma < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.lam + self.gamma == 0:
            raise ValueError("at least one loss weight must be positive")


@dataclass(frozen=True)
class Schedule:
    """Per-epoch loss-weight schedule.

    ``joint``: starts at ``start`` (default (0, 1): clustering-only warmup)
    and switches to (0.5, 0.5) after ``switch_epoch`` epochs.
    ``alternating``: k_steps epochs of (0, 1) then k_steps of (1, 0),
    repeating.  ``constant``: fixed ``weights`` throughout.
    """

    mode: str = "joint"
    switch_epoch: int = 100
    k_steps: int = 5
    start: tuple = (0.0, 1.0)
    weights: LossWeights = LossWeights(0.5, 0.5)

    def __post_init__(self):
        if self.mode not in ("joint", "alternating", "constant"):
            raise ValueError(f"unknown schedule mode: {self.mode!r}")
        if self.switch_epoch < 0:
            raise ValueError("switch_epoch must be >= 0")
        if self.k_steps < 1:
            raise ValueError("k_steps must be >= 1")
        LossWeights(*self.start)

    def weights_at(self, epoch):
        if self.mode == "constant":
            return self.weights
        if self.mode == "joint":
            if epoch < self.switch_epoch:
                return LossWeights(*self.start)
            return LossWeights(0.5, 0.5)
        # alternating: blocks of k epochs, clustering first
        if (epoch // self.k_steps) % 2 == 0:
            return LossWeights(0.0, 1.0)
        return LossWeights(1.0, 0.0)


@dataclass
class TrainState:
    """Result of a training run: the trained model plus its trajectory."""

    model: model_mod.Model
    epoch: int
    seed: int
    learning_rate: float
    loss_history: list = field(default_factory=list)

    def __post_init__(self):
        # lr 0 is the degenerate evaluate-only run; negative is an error
        if self.learning_rate < 0:
            raise ValueError("learning rate must be nonnegative")


def riemannian_grad(x, euclid_grad, c):
    """Rescale a Euclidean gradient by the inverse metric: the conformal
    factor squared, ((1 - c ||x||^2)/2)^2, per point (last axis)."""
    c = ball.check_curvature(c)
    x = np.asarray(x, dtype=float)
    g = np.asarray(euclid_grad, dtype=float)
    if x.shape != g.shape:
        raise ValueError("point/gradient shape mismatch")
    scale = ((1.0 - c * (x * x).sum(axis=-1, keepdims=True)) / 2.0) ** 2
    return scale * g


def rsgd_step(x, euclid_grad, lr, c):
    """One Riemannian SGD step: first-order Möbius retraction
    x (+) exp0(-lr * riemannian_grad), re-projected into the safe ball."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    g = np.asarray(euclid_grad, dtype=float)
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite gradient; step rejected")
    step = ball.exp0(-lr * riemannian_grad(x, g, c), c)
    return ball.project_to_ball(tp.value(ball.mobius_add(x, step, c)), c)


def sgd_step(x, euclid_grad, lr):
    """Plain Euclidean gradient step."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    g = np.asarray(euclid_grad, dtype=float)
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite gradient; step rejected")
    return np.asarray(x, dtype=float) - lr * g


def _forward_parts(config, weight, bias, a, p, x):
    latent = model_mod.forward_latent(config, weight, bias, x)
    if config.space == "hyperbolic":
        logits = model_mod.mlr_logits(latent, a, p, config.curvature)
    else:
        logits = model_mod.euclidean_logits(latent, a, p)
    return latent, logits


def _similarity_points(config, sim_cfg, x, latent, logits):
    """The vectors clustering runs on, mapped into the model's geometry."""
    source = {"logits": logits, "latent": latent, "input": x}[sim_cfg.similarity_source]
    geom = geometry.of(config.space, config.curvature)
    if config.space == "hyperbolic" and sim_cfg.similarity_source != "latent":
        # latent vectors already live on the ball; others are tangent
        source = ball.exp0(source, config.curvature)
    return source, geom


def joint_loss(x, labels, config, weight, bias, a, p, weights, sim_cfg, triplets=None, rng=None, triplets_per_item=50):
    """lam * mean cross-entropy + gamma * clustering loss on the
    similarity-source vectors.

    ``triplets`` may be supplied explicitly; otherwise ``rng`` is used to
    sample triplets_per_item * batch_size of them.  A batch of fewer than
    3 items cannot form triplets and is rejected when gamma > 0.
    """
    n = tp.value(x).shape[0]
    latent, logits = _forward_parts(config, weight, bias, a, p, x)
    total = None
    if weights.lam > 0:
        total = tp.mul(model_mod.cross_entropy(logits, labels), weights.lam)
    if weights.gamma > 0:
        if n < 3:
            raise ValueError("clustering loss needs a batch of >= 3 items")
        points, geom = _similarity_points(config, sim_cfg, x, latent, logits)
        if triplets is None:
            if rng is None:
                raise ValueError("need triplets or an rng to sample them")
            triplets = cluster.sample_triplets(n, triplets_per_item * n, rng)
        tree = tp.mul(cluster.tree_loss(points, triplets, sim_cfg, geom), weights.gamma)
        total = tree if total is None else total + tree
    return total


def _batches(n, batch_size, rng, min_last=3):
    """Shuffled minibatch index lists; a trailing batch smaller than
    ``min_last`` is folded into the previous one."""
    order = rng.permutation(n)
    batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < min_last:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def _check_finite(loss, epoch):
    if not np.isfinite(loss) or abs(loss) > DIVERGENCE_LIMIT:
        raise RuntimeError(f"training diverged at epoch {epoch}: loss={loss}")


def _apply_grads(mdl, grads, lr):
    gw, gb, ga, gp = grads
    mdl.weight = sgd_step(mdl.weight, gw, lr)
    mdl.bias = sgd_step(mdl.bias, gb, lr)
    mdl.mlr_a = sgd_step(mdl.mlr_a, ga, lr)
    if mdl.config.space == "hyperbolic":
        # the mlr offsets are ball points and move by Riemannian steps
        mdl.mlr_p = rsgd_step(mdl.mlr_p, gp, lr, mdl.config.curvature)
    else:
        mdl.mlr_p = sgd_step(mdl.mlr_p, gp, lr)


def train(
    dataset,
    config,
    schedule=None,
    epochs=1,
    seed=0,
    lr=0.001,
    batch_size=32,
    sim_cfg=None,
    triplets_per_item=50,
):
    """Minibatch RSGD under a loss-weight schedule; deterministic per seed.

    Returns the final TrainState with one (mean) loss per epoch; aborts
    with the offending epoch if the loss diverges.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if dataset.n_trials < 1:
        raise ValueError("dataset is empty")
    if schedule is None:
        schedule = Schedule()
    if sim_cfg is None:
        sim_cfg = cluster.SimilarityConfig()
    rng = np.random.default_rng(seed)
    mdl = model_mod.Model.initialize(config, seed=seed)
    x_all = dataset.features
    y_all = dataset.labels
    history = []
    for epoch in range(epochs):
        weights = schedule.weights_at(epoch)
        epoch_losses = []
        for idx in _batches(dataset.n_trials, batch_size, rng):
            params = [tp.Var(v) for v in mdl.params]
            loss = joint_loss(
                x_all[idx],
                y_all[idx],
                config,
                *params,
                weights,
                sim_cfg,
                rng=rng,
                triplets_per_item=triplets_per_item,
            )
            value = float(tp.value(loss))
            _check_finite(value, epoch)
            epoch_losses.append(value)
            if lr > 0:
                _apply_grads(mdl, tp.grad(loss, params), lr)
        history.append(float(np.mean(epoch_losses)))
    return TrainState(mdl, epochs, seed, lr if lr > 0 else 0.001, history)


def _constraint_groups(constraint, classes):
    """Class label -> group id under a Taxonomy, a label->group mapping, or
    an iterable of label groups; unmentioned classes become singletons."""
    if isinstance(constraint, Taxonomy):
        mapping = dict(constraint.group_of)
    elif isinstance(constraint, dict):
        mapping = dict(constraint)
    else:
        mapping = {}
        for g, members in enumerate(constraint):
            for label in members:
                mapping[label] = f"group{g}"
    unknown = set(mapping) - set(classes)
    if unknown:
        raise ValueError(f"constraint mentions unknown classes: {sorted(unknown)}")
    for label in classes:
        mapping.setdefault(label, f"singleton:{label}")
    return mapping


def train_with_constraint(
    dataset,
    config,
    constraint,
    epochs=1,
    seed=0,
    lr=0.001,
    batch_size=32,
    sim_cfg=None,
    lam=1.0,
    mu=0.01,
):
    """Classification training with a same-group distance penalty instead
    of the clustering loss: lam * L_cls + mu * sum of same-group distances
    between similarity-source points.

    ``constraint`` is a Taxonomy, a class->group mapping, or an iterable of
    class groups (e.g. mined substructures); singleton groups add nothing.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if sim_cfg is None:
        sim_cfg = cluster.SimilarityConfig()
    mapping = _constraint_groups(constraint, dataset.classes)
    group_names = sorted(set(mapping.values()))
    group_index = {g: i for i, g in enumerate(group_names)}
    trial_groups = np.array(
        [group_index[mapping[dataset.classes[y]]] for y in dataset.labels]
    )
    rng = np.random.default_rng(seed)
    mdl = model_mod.Model.initialize(config, seed=seed)
    history = []
    for epoch in range(epochs):
        epoch_losses = []
        for idx in _batches(dataset.n_trials, batch_size, rng, min_last=1):
            params = [tp.Var(v) for v in mdl.params]
            latent, logits = _forward_parts(config, *params, dataset.features[idx])
            loss = tp.mul(model_mod.cross_entropy(logits, dataset.labels[idx]), lam)
            if mu > 0:
                points, geom = _similarity_points(
                    config, sim_cfg, dataset.features[idx], latent, logits
                )
                # pull together different classes sharing a constraint
                # group; same-class pairs are excluded (singleton groups
                # reduce to pure classification)
                ii, jj = np.triu_indices(len(idx), k=1)
                mask = (trial_groups[idx][ii] == trial_groups[idx][jj]) & (
                    dataset.labels[idx][ii] != dataset.labels[idx][jj]
                )
                if mask.any():
                    d = geom.dist(
                        tp.take(points, ii[mask], axis=0),
                        tp.take(points, jj[mask], axis=0),
                    )
                    loss = loss + tp.mul(tp.vsum(d), mu)
            value = float(tp.value(loss))
            _check_finite(value, epoch)
            epoch_losses.append(value)
            if lr > 0:
                _apply_grads(mdl, tp.grad(loss, params), lr)
        history.append(float(np.mean(epoch_losses)))
    return TrainState(mdl, epochs, seed, lr if lr > 0 else 0.001, history)
