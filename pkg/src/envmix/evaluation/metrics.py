"""False/negative selection rates after matching estimated labels to the truth."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import linear_sum_assignment

from envmix.core.model import Labels, validate_labels

EXHAUSTIVE_MAX_M = 6


def confusion(est: Labels, truth: Labels, M: int) -> NDArray[np.int64]:
    """counts[j, t] = #{i : est_i = j and truth_i = t}."""
    counts = np.zeros((M, M), dtype=np.int64)
    np.add.at(counts, (est, truth), 1)
    return counts


def match_labels(est: Labels, truth: Labels, M: int) -> NDArray[np.int64]:
    """Permutation ``perm`` with ``perm[j]`` the true label matched to estimated label j.

    Maximizes agreements (equivalently minimizes misassignments): exhaustive search for
    M <= 6, the Hungarian method above. Exhaustive ties go to the first permutation in
    lexicographic order.
    """
    est = validate_labels(est, np.size(est), M)
    truth = validate_labels(truth, est.size, M)
    counts = confusion(est, truth, M)
    if M > EXHAUSTIVE_MAX_M:
        _, cols = linear_sum_assignment(-counts)
        return cols.astype(np.int64)
    rows = np.arange(M)
    best = max(
        itertools.permutations(range(M)),
        key=lambda perm: int(counts[rows, list(perm)].sum()),
    )
    return np.asarray(best, dtype=np.int64)


def relabel(est: Labels, perm: NDArray[np.int64]) -> Labels:
    return np.asarray(perm, dtype=np.int64)[np.asarray(est, dtype=np.int64)]


@dataclass(frozen=True)
class ClusterScore:
    fsr: float
    nsr: float
    permutation: NDArray[np.int64]
    # matched estimated clusters with no members; each contributed 1 to fsr
    empty_clusters: Tuple[int, ...] = field(default=())


def fsr_nsr(est: Labels, truth: Labels, M: int) -> ClusterScore:
    """fsr = mean_k |s^_k minus s_k| / |s^_k| and nsr = mean_k |s_k minus s^_k| / |s_k|.

    An empty estimated cluster contributes 1 to fsr; an empty true cluster contributes 0
    to nsr.
    """
    perm = match_labels(est, truth, M)
    matched = relabel(est, perm)
    truth = np.asarray(truth, dtype=np.int64)
    fsr_terms, nsr_terms, empty = [], [], []
    for k in range(M):
        s_hat = matched == k
        s = truth == k
        n_hat, n_true = int(s_hat.sum()), int(s.sum())
        if n_hat:
            fsr_terms.append(np.sum(s_hat & ~s) / n_hat)
        else:
            fsr_terms.append(1.0)
            empty.append(k)
        nsr_terms.append(np.sum(s & ~s_hat) / n_true if n_true else 0.0)
    return ClusterScore(
        fsr=float(np.mean(fsr_terms)),
        nsr=float(np.mean(nsr_terms)),
        permutation=perm,
        empty_clusters=tuple(empty),
    )
