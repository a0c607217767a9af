"""Sample generation, partitioning, and the optional CIFAR-10 binary loader."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .shuffling import PURPOSE_MC, keyed_rng

CIFAR_RECORD = 3073  # 1 label byte + 3072 pixel bytes
CIFAR_CLASS_POS = 0  # airplane -> label +1
CIFAR_CLASS_NEG = 9  # truck    -> label -1


def partition_data(samples: np.ndarray, labels: np.ndarray, n: int, m: int,
                   heterogeneous: bool, seed: int = 0) -> np.ndarray:
    """Assign n*m samples to agents; returns an (n, m) index array.

    Heterogeneous: stable sort by label, then contiguous blocks of m per
    agent, so each agent sees as few distinct labels as possible.
    Homogeneous: seeded shuffle followed by round-robin dealing.
    """
    count = len(labels)
    if samples.shape[0] != count:
        raise ValueError("samples and labels disagree in length")
    if n * m > count:
        raise ValueError(f"need {n * m} samples, only {count} available")
    if heterogeneous:
        order = np.argsort(labels, kind="stable")
        kept = order[: n * m]
        return kept.reshape(n, m)
    rng = keyed_rng(seed, PURPOSE_MC, agent=0, epoch=0)
    order = rng.permutation(count)
    return np.stack([order[i::n][:m] for i in range(n)])


def synthetic_classification(count: int, p: int, seed: int, scale: float = 1.0,
                             flip: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian features with a planted unit separator and label noise.

    Features are N(0, (scale^2/p) I) so that ||u||^2 concentrates at scale^2;
    labels are the sign of the margin against a planted unit vector, flipped
    with probability ``flip`` to keep the task nontrivial.
    """
    rng = keyed_rng(seed, PURPOSE_MC, agent=1, epoch=0)
    w = rng.normal(size=p)
    w /= np.linalg.norm(w)
    feats = rng.normal(size=(count, p)) * (scale / np.sqrt(p))
    margins = feats @ w
    labels = np.where(margins >= 0.0, 1.0, -1.0)
    flips = rng.random(count) < flip
    labels[flips] *= -1.0
    return feats, labels


def load_cifar10(directory, classes=(CIFAR_CLASS_POS, CIFAR_CLASS_NEG)):
    """Read standard CIFAR-10 binary batches and keep two classes.

    Pixels are scaled to [0,1]; the first class maps to label +1, the second
    to -1.  Returns (features, labels) with features of width 3072.
    """
    directory = Path(directory)
    batches = sorted(directory.glob("data_batch_*")) or sorted(directory.glob("*.bin"))
    if not batches:
        raise FileNotFoundError(f"no CIFAR-10 binary batches under {directory}")
    feats, labels = [], []
    pos, neg = classes
    for path in batches:
        raw = np.frombuffer(path.read_bytes(), dtype=np.uint8)
        if raw.size % CIFAR_RECORD:
            raise ValueError(f"{path} is not a CIFAR-10 binary batch")
        rec = raw.reshape(-1, CIFAR_RECORD)
        keep = (rec[:, 0] == pos) | (rec[:, 0] == neg)
        rec = rec[keep]
        feats.append(rec[:, 1:].astype(float) / 255.0)
        labels.append(np.where(rec[:, 0] == pos, 1.0, -1.0))
    return np.concatenate(feats), np.concatenate(labels)
