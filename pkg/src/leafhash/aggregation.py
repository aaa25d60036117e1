"""Greedy information-theoretic selection of code blocks.

Given the M per-tree code blocks of a training set, select k of them to form
the final hash.  Three criteria are provided:

- unsupervised: a Gaussian model over blocks (covariance exp(-d_H/N)) scores a
  candidate by how unpredictable it is from the already selected blocks and
  how predictable the remaining blocks are from it;
- supervised: plug-in mutual information between the concatenated selected
  codes and the class labels;
- semi-supervised: the unsupervised gain plus lambda times the supervised
  gain, with lambda estimated as the ratio of the best single-block scores.

All selectors are deterministic: score ties resolve to the lowest block index.
The greedy objective has diminishing returns, which keeps the greedy choice
within (1 - 1/e) of the exhaustive optimum (checked against
:func:`exhaustive_select` in the tests).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

JITTER = 1e-8
_VAR_FLOOR = 1e-12
_EXHAUSTIVE_LIMIT = 100_000


@dataclass
class BlockSet:
    """M code blocks over the same N samples, with cached leaf indices."""

    blocks: list[np.ndarray]
    leaf_ids: np.ndarray  # (M, N) int32
    leaf_count: int

    @classmethod
    def from_blocks(cls, blocks) -> "BlockSet":
        blocks = [np.asarray(b) for b in blocks]
        if not blocks:
            raise InvalidInputError("no code blocks given")
        shape = blocks[0].shape
        for i, b in enumerate(blocks):
            if b.ndim != 2 or b.shape != shape:
                raise InvalidInputError(f"block {i} has shape {b.shape}, expected {shape}")
            if not np.all((b == 0) | (b == 1)):
                raise InvalidInputError(f"block {i} is not binary")
            if not np.all(b.sum(axis=0) == 1):
                raise InvalidInputError(f"block {i} has a column that is not 1-sparse")
        leaf_ids = np.stack([b.argmax(axis=0) for b in blocks]).astype(np.int32)
        return cls(blocks=[b.astype(np.uint8) for b in blocks], leaf_ids=leaf_ids,
                   leaf_count=shape[0])

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def n_samples(self) -> int:
        return self.leaf_ids.shape[1]


@dataclass
class BlockCovariance:
    """Similarity matrix Sigma_ij = exp(-d_H(B_i, B_j) / N)."""

    sigma: np.ndarray
    jitter: float = JITTER


@dataclass
class SelectionResult:
    chosen: list[int]
    gains: list[float]
    mode: str
    lam: float | None = None


def block_covariance(bs: BlockSet, samples=None) -> BlockCovariance:
    """Covariance from pairwise Hamming distances between whole blocks.

    ``samples`` optionally restricts the distance computation to a subset of
    columns (used by the semi-supervised split of labeled/unlabeled data).
    """
    if bs.n_blocks < 2:
        raise InvalidInputError("need at least two blocks")
    ids = bs.leaf_ids if samples is None else bs.leaf_ids[:, np.asarray(samples)]
    n = ids.shape[1]
    if n == 0:
        raise InvalidInputError("no samples selected")
    m = ids.shape[0]
    sigma = np.empty((m, m))
    for i in range(m):
        # one-hot columns differ in exactly two entries when leaves differ
        mismatches = (ids != ids[i]).sum(axis=1)
        sigma[i] = np.exp(-2.0 * mismatches / n)
    return BlockCovariance(sigma=0.5 * (sigma + sigma.T))


def conditional_variance(cov: BlockCovariance, y: int, conditioning) -> float:
    """Gaussian conditional variance of block ``y`` given a set of blocks.

    Jitter on the conditioning submatrix keeps duplicate blocks finite; an
    empty conditioning set returns the prior variance.
    """
    s = list(conditioning)
    if y in s:
        raise InvalidInputError(f"block {y} cannot condition itself")
    sigma = cov.sigma
    if not s:
        return float(sigma[y, y])
    a = sigma[np.ix_(s, s)] + cov.jitter * np.eye(len(s))
    b = sigma[s, y]
    return float(sigma[y, y] - b @ np.linalg.solve(a, b))


def unsupervised_gain(cov: BlockCovariance, y: int, selected) -> float:
    """Greedy step score of candidate ``y``: the Gaussian entropy difference

        1/2 ln( var(y | selected) / var(y | remaining) )

    where remaining excludes both the selected blocks and ``y``."""
    m = cov.sigma.shape[0]
    selected = list(selected)
    rest = [i for i in range(m) if i != y and i not in selected]
    v_sel = max(conditional_variance(cov, y, selected), _VAR_FLOOR)
    v_rest = max(conditional_variance(cov, y, rest), _VAR_FLOOR)
    return 0.5 * math.log(v_sel / v_rest)


def set_mutual_information(cov: BlockCovariance, subset) -> float:
    """Gaussian mutual information between a block subset and its complement.

    Evaluated as 1/2 (logdet Sigma_BB + logdet Sigma_RR - logdet Sigma) on the
    jittered covariance; the exhaustive objective for the unsupervised mode.
    """
    m = cov.sigma.shape[0]
    subset = sorted(set(int(i) for i in subset))
    rest = [i for i in range(m) if i not in subset]
    sigma = cov.sigma + cov.jitter * np.eye(m)

    def logdet(idx):
        if not idx:
            return 0.0
        sign, val = np.linalg.slogdet(sigma[np.ix_(idx, idx)])
        if sign <= 0:
            raise InvalidInputError("covariance submatrix is not positive definite")
        return float(val)

    return 0.5 * (logdet(subset) + logdet(rest) - logdet(list(range(m))))


def greedy_unsupervised(bs: BlockSet, k: int, samples=None) -> SelectionResult:
    """Pick k blocks greedily by the Gaussian entropy-difference score.

    Near-optimality needs the pool to be comfortably larger than the
    selection, hence the k <= M/2 precondition.
    """
    m = bs.n_blocks
    if not 0 <= k <= m // 2:
        raise InvalidInputError(f"k must be in [0, {m // 2}] for {m} blocks, got {k}")
    cov = block_covariance(bs, samples)
    chosen: list[int] = []
    gains: list[float] = []
    for _ in range(k):
        best_y, best_gain = -1, -np.inf
        for y in range(m):
            if y in chosen:
                continue
            g = unsupervised_gain(cov, y, chosen)
            if g > best_gain:
                best_y, best_gain = y, g
        chosen.append(best_y)
        gains.append(best_gain)
    return SelectionResult(chosen=chosen, gains=gains, mode="unsup")


def _fold_ids(ids, leaf_count, rows):
    """Joint code id per sample from the given block rows, densely relabeled."""
    joint = np.zeros(ids.shape[1], dtype=np.int64)
    for r in rows:
        joint = joint * leaf_count + ids[r]
        _, joint = np.unique(joint, return_inverse=True)
    return joint


def _entropy(counts) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log(p)).sum())


def _mi_ids_labels(ids, labels) -> float:
    h_b = _entropy(np.bincount(ids))
    h_cond = 0.0
    n = labels.shape[0]
    for c in np.unique(labels):
        mask = labels == c
        h_cond += (mask.sum() / n) * _entropy(np.bincount(ids[mask]))
    return h_b - h_cond


def label_mi(blocks_subset, bs: BlockSet, labels) -> float:
    """Plug-in mutual information (nats) between the concatenated codes of the
    selected blocks and the class labels; empty selection gives 0."""
    if labels is None:
        raise InvalidInputError("labels are required")
    labels = np.asarray(labels)
    if labels.shape[0] != bs.n_samples:
        raise InvalidInputError("labels length does not match the block columns")
    subset = list(blocks_subset)
    if not subset:
        return 0.0
    ids = _fold_ids(bs.leaf_ids, bs.leaf_count, subset)
    return _mi_ids_labels(ids, labels)


def greedy_supervised(bs: BlockSet, labels, k: int, samples=None) -> SelectionResult:
    """Pick k blocks greedily by label mutual-information gain."""
    if labels is None:
        raise InvalidInputError("labels are required for supervised selection")
    labels = np.asarray(labels)
    if labels.shape[0] != bs.n_samples:
        raise InvalidInputError("labels length does not match the block columns")
    if not 0 <= k <= bs.n_blocks:
        raise InvalidInputError(f"k must be in [0, {bs.n_blocks}], got {k}")
    ids_all = bs.leaf_ids if samples is None else bs.leaf_ids[:, np.asarray(samples)]
    lab = labels if samples is None else labels[np.asarray(samples)]

    chosen: list[int] = []
    gains: list[float] = []
    joint = np.zeros(ids_all.shape[1], dtype=np.int64)
    current_mi = 0.0
    for _ in range(k):
        best_y, best_gain, best_joint = -1, -np.inf, None
        for y in range(bs.n_blocks):
            if y in chosen:
                continue
            cand = joint * bs.leaf_count + ids_all[y]
            _, cand = np.unique(cand, return_inverse=True)
            gain = _mi_ids_labels(cand, lab) - current_mi
            if gain > best_gain:
                best_y, best_gain, best_joint = y, gain, cand
        chosen.append(best_y)
        gains.append(best_gain)
        joint = best_joint
        current_mi += best_gain
    return SelectionResult(chosen=chosen, gains=gains, mode="sup")


def estimate_lambda(bs: BlockSet, labels, unlabeled=None, labeled=None) -> float:
    """Mixing weight for the semi-supervised score: the ratio of the best
    single-block unsupervised information to the best single-block label
    information.  Falls back to 0 (pure unsupervised) when no block carries
    label information."""
    if labels is None:
        raise InvalidInputError("labels are required to estimate lambda")
    cov = block_covariance(bs, unlabeled)
    ids = bs.leaf_ids if labeled is None else bs.leaf_ids[:, np.asarray(labeled)]
    lab = np.asarray(labels) if labeled is None else np.asarray(labels)[np.asarray(labeled)]
    m = bs.n_blocks
    best_unsup = max(
        0.5 * math.log(
            max(conditional_variance(cov, y, []), _VAR_FLOOR)
            / max(conditional_variance(cov, y, [i for i in range(m) if i != y]), _VAR_FLOOR)
        )
        for y in range(m)
    )
    best_sup = max(_mi_ids_labels(ids[y], lab) for y in range(m))
    if best_sup <= 1e-12:
        return 0.0
    return max(best_unsup, 0.0) / best_sup


def greedy_semisupervised(
    bs: BlockSet,
    labels,
    k: int,
    lam: float | None = None,
    unlabeled=None,
    labeled=None,
) -> SelectionResult:
    """Blend of both criteria: per step, unsupervised gain + lambda x label
    gain.  The two terms may be evaluated on different sample subsets
    (``unlabeled``/``labeled`` column indices); both default to all samples.
    """
    m = bs.n_blocks
    if not 0 <= k <= m // 2:
        raise InvalidInputError(f"k must be in [0, {m // 2}] for {m} blocks, got {k}")
    if labels is None:
        raise InvalidInputError("labels are required for semi-supervised selection")
    if lam is None:
        lam = estimate_lambda(bs, labels, unlabeled, labeled)
    cov = block_covariance(bs, unlabeled)
    ids_all = bs.leaf_ids if labeled is None else bs.leaf_ids[:, np.asarray(labeled)]
    lab = np.asarray(labels) if labeled is None else np.asarray(labels)[np.asarray(labeled)]
    if lab.shape[0] != ids_all.shape[1]:
        raise InvalidInputError("labels length does not match the labeled columns")

    chosen: list[int] = []
    gains: list[float] = []
    joint = np.zeros(ids_all.shape[1], dtype=np.int64)
    current_mi = 0.0
    for _ in range(k):
        best = (-1, -np.inf, None, 0.0)
        for y in range(m):
            if y in chosen:
                continue
            cand = joint * bs.leaf_count + ids_all[y]
            _, cand = np.unique(cand, return_inverse=True)
            mi_gain = _mi_ids_labels(cand, lab) - current_mi
            score = unsupervised_gain(cov, y, chosen) + lam * mi_gain
            if score > best[1]:
                best = (y, score, cand, mi_gain)
        y, score, cand, mi_gain = best
        chosen.append(y)
        gains.append(score)
        joint = cand
        current_mi += mi_gain
    return SelectionResult(chosen=chosen, gains=gains, mode="semi", lam=float(lam))


def exhaustive_select(bs: BlockSet, labels, k: int, mode: str) -> SelectionResult:
    """Exact argmax over all k-subsets; the test oracle for the greedy modes.

    mode "unsup" maximizes the Gaussian subset/complement mutual information,
    mode "sup" the label mutual information.  Refuses instances with more than
    100k subsets.
    """
    m = bs.n_blocks
    if mode not in ("unsup", "sup"):
        raise InvalidInputError(f"unknown mode {mode!r}")
    if not 0 <= k <= m:
        raise InvalidInputError(f"k must be in [0, {m}], got {k}")
    n_subsets = math.comb(m, k)
    if n_subsets > _EXHAUSTIVE_LIMIT:
        raise InvalidInputError(
            f"{n_subsets} subsets exceed the exhaustive limit of {_EXHAUSTIVE_LIMIT}"
        )
    cov = block_covariance(bs) if mode == "unsup" else None
    best_subset, best_value = (), -np.inf
    for subset in itertools.combinations(range(m), k):
        if mode == "unsup":
            value = set_mutual_information(cov, subset)
        else:
            value = label_mi(subset, bs, labels)
        if value > best_value:
            best_subset, best_value = subset, value
    return SelectionResult(chosen=list(best_subset), gains=[best_value], mode=mode)


def select_blocks(bs: BlockSet, labels, k: int, mode: str, lam=None) -> SelectionResult:
    """Dispatch to the selector named by ``mode`` ("unsup", "sup", "semi")."""
    if mode == "unsup":
        return greedy_unsupervised(bs, k)
    if mode == "sup":
        return greedy_supervised(bs, labels, k)
    if mode == "semi":
        return greedy_semisupervised(bs, labels, k, lam)
    raise InvalidInputError(f"unknown aggregation mode {mode!r}")
