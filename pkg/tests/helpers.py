"""Independent oracles and small utilities shared across the test suite.

The finite-difference and brute-force implementations here are written
against the math, not against the package internals, so they stay valid
oracles for the code paths they check.
"""

import numpy as np


def fd_grad(f, x0, h=1e-5):
    """Central finite differences of a scalar function of an array."""
    x0 = np.asarray(x0, dtype=np.float64)
    g = np.zeros_like(x0)
    flat = x0.copy().reshape(-1)
    out = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = f(flat.reshape(x0.shape))
        flat[i] = keep - h
        down = f(flat.reshape(x0.shape))
        flat[i] = keep
        out[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0), 1e-10)
    return float(np.max(np.abs(a - b), initial=0.0)) / scale


def pairwise_auroc(scores, labels):
    """O(n^2) oracle: 1 per correctly ordered positive/negative pair, 0.5 per tie."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def straight_line_barlow(zx, zm, lam):
    """Plain-numpy reimplementation of the alignment loss, from the formula."""
    def norm(z):
        mu = z.mean(axis=0)
        sigma = np.sqrt(((z - mu) ** 2).mean(axis=0) + 1e-12)
        return (z - mu) / sigma

    zx_hat, zm_hat = norm(np.asarray(zx, float)), norm(np.asarray(zm, float))
    n, e = zx_hat.shape
    corr = np.zeros((e, e))
    for i in range(e):
        for j in range(e):
            corr[i, j] = np.dot(zx_hat[:, i], zm_hat[:, j]) / n
    loss = 0.0
    for i in range(e):
        loss += (1.0 - corr[i, i]) ** 2
        for j in range(e):
            if j != i:
                loss += lam * corr[i, j] ** 2
    return loss


def shuffled_label_dataset(dataset, label_key, seed=0):
    """Copy of a dataset with one label family permuted across train+val."""
    from cardiofuse.synthdata import Dataset, Encounter

    rng = np.random.default_rng(seed)
    splits = {}
    for split, encounters in dataset.splits.items():
        if split == "test":
            splits[split] = list(encounters)
            continue
        labels = np.stack([getattr(e, label_key) for e in encounters])
        perm = rng.permutation(len(encounters))
        shuffled = labels[perm]
        splits[split] = [
            Encounter(
                signal=e.signal,
                tabular=e.tabular,
                labs=shuffled[i] if label_key == "labs" else e.labs,
                diagnoses=shuffled[i] if label_key == "diagnoses" else e.diagnoses,
            )
            for i, e in enumerate(encounters)
        ]
    return Dataset(config=dataset.config, world=dataset.world, splits=splits)
