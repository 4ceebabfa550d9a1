"""Toy training loop for the pyramid classifier.

One run = seeded shuffles, per-sample augmentation from a single stream,
mini-batch BCE steps under Nadam, and a holdout AUC per epoch. Everything
is derived from explicit seeds, so a repeated run is bit-identical.
"""

import numpy as np

from ..evalkit import ScoreTable, roc_curve
from . import graph as graphmod
from .augment import augment, policy_rng
from .checkpoint import load_checkpoint, save_checkpoint
from .config import GraphConfig
from .optim import NadamConfig, init_state, nadam_step


def predict_scores(graph, dataset, batch_size=32):
    """Inference-mode normalcy scores for a list of (image, label) pairs."""
    scores = []
    for start in range(0, len(dataset), batch_size):
        chunk = dataset[start:start + batch_size]
        batch = np.stack([image for image, _ in chunk])
        scores.append(graphmod.forward(graph, batch, mode="infer"))
    return np.concatenate(scores) if scores else np.zeros(0)


def holdout_auc(graph, dataset, batch_size=32):
    """AUC of the normalcy score on a labeled holdout (1 = normal)."""
    scores = predict_scores(graph, dataset, batch_size)
    labels = ["normal" if label == 1 else "abnormal" for _, label in dataset]
    ids = [f"holdout-{i:05d}" for i in range(len(dataset))]
    return roc_curve(ScoreTable.from_arrays(ids, scores, labels)).auc


def train_toy(graph, train_set, holdout_set, policy=None, hyper=None,
              epochs=20, batch_size=16, shuffle_seed=0):
    """Train in place; returns [(epoch, mean_loss, holdout_auc)] per epoch.

    The shuffle stream and the augmentation stream are seeded once and run
    across all epochs; augmentation is skipped when policy is None. A partial
    final batch is still trained on, and the epoch loss is the sample-count
    weighted mean of its batch losses. Zero epochs leaves the graph untouched
    and returns an empty log.
    """
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    if len(holdout_set) == 0:
        raise ValueError("holdout set is empty")
    if epochs < 0:
        raise ValueError(f"epochs must be non-negative, got {epochs}")
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    if hyper is None:
        hyper = NadamConfig()
    state = init_state(hyper)
    shuffle_rng = np.random.default_rng([shuffle_seed, 0])
    aug_rng = policy_rng(policy) if policy is not None else None

    log = []
    for epoch in range(1, epochs + 1):
        order = shuffle_rng.permutation(len(train_set))
        batch_losses = []
        batch_sizes = []
        for start in range(0, len(order), batch_size):
            indices = order[start:start + batch_size]
            images = []
            labels = []
            for i in indices:
                image, label = train_set[i]
                if policy is not None:
                    image = augment(image, policy, aug_rng)
                images.append(image)
                labels.append(float(label))
            loss, grads = graphmod.backward(
                graph, np.stack(images), np.asarray(labels))
            params, state = nadam_step(graph.get_parameters(), grads, state)
            graph.set_parameters(params)
            batch_losses.append(loss)
            batch_sizes.append(len(indices))
        mean_loss = float(np.average(batch_losses, weights=batch_sizes))
        log.append((epoch, mean_loss, holdout_auc(graph, holdout_set)))
    return log


def training_log_csv(log):
    """Render log rows to CSV text; repr keeps floats byte-exact."""
    lines = ["epoch,mean_loss,holdout_auc"]
    for epoch, mean_loss, auc in log:
        lines.append(f"{epoch},{float(mean_loss)!r},{float(auc)!r}")
    return "\n".join(lines) + "\n"


def save_model(path, graph):
    """Checkpoint a pyramid graph (config plus every parameter)."""
    if graph.config is None:
        raise ValueError("graph has no attached config to checkpoint")
    save_checkpoint(path, graph.config.to_dict(), graph.get_parameters())


def load_model(path):
    """Rebuild a pyramid graph from a checkpoint, bit-exact parameters."""
    config_dict, params = load_checkpoint(path)
    config = GraphConfig.from_dict(config_dict)
    graph = graphmod.build_pyramid_graph(config)
    graph.set_parameters(params)
    return graph
