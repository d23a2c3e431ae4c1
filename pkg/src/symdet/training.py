"""Desk-scale training of the EdgeConv scorer on synthetic scenes.

Stage lattices are centred on the ground truth (teacher forcing): stage 0 is
the full hemisphere, later stages are caps around the true normal. The
positive node of each stage is the lattice node nearest the ground truth.
Descriptors come from the head's frozen conv stack and are computed once.
"""
import numpy as np
import torch

from .featuremap import build_correlation, normalize
from .hemisphere import POLE, cap_lattice, knn_graph
from .scorer import StageLabels, descriptor, make_optimizer, train_step
from .search import KNN
from .volume import build_volume

BATCH_SIZE = 6


def stage_samples(scene, head, cfg):
    """``[(descriptors, graph, labels), ...]``, one entry per search stage."""
    corr = build_correlation(normalize(scene.features))
    gt = scene.gt_plane.normal
    out = []
    for i, (count, delta) in enumerate(zip(cfg.stage_counts, cfg.deltas)):
        lattice = cap_lattice(POLE if i == 0 else gt, delta, count, stage_index=i)
        desc = np.stack([
            descriptor(head, build_volume(corr, scene.intrinsics, n, cfg.sweep, cfg.exclude_self))
            for n in lattice.normals
        ])
        out.append((desc, knn_graph(lattice, KNN), StageLabels.nearest(lattice.normals, gt)))
    return out


def train(head, samples, epochs=50, batch_size=BATCH_SIZE, seed=0, optimizer=None):
    """Shuffled mini-batch training; returns the mean pre-update loss of each epoch."""
    optimizer = optimizer or make_optimizer(head)
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    history = []
    for _ in range(epochs):
        order = rng.permutation(len(samples))
        losses = []
        for start in range(0, len(order), batch_size):
            batch = [samples[j] for j in order[start:start + batch_size]]
            losses.append(train_step(head, batch, optimizer))
        history.append(float(np.mean(losses)))
    head.eval()
    return history
