"""Per-node weak learners: class dictionaries, residual projectors, routing.

A trained split node holds one dictionary per pooled class group, fit with
k-SVD on the transformed samples.  A point is routed by comparing its
least-squares residuals against the two dictionary spans; the residuals are
evaluated through precomputed projector matrices so routing is two mat-vecs
and two norms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .lowrank import (
    KernelConfig,
    OptimizerConfig,
    Transform,
    _as_matrix,
    fit_transform,
    kernel_featurize,
)
from .network import DenseNet, NetConfig, net_fit, net_forward

# ridge on the Gram inversion; keeps rank-deficient dictionaries usable
RIDGE = 1e-8


@dataclass
class Dictionary:
    """k-SVD dictionary: unit-norm atoms plus the training sparsity bound."""

    atoms: np.ndarray  # (r, m)
    sparsity: int
    error_trace: np.ndarray | None = None

    def __array__(self, dtype=None, copy=None):
        a = np.asarray(self.atoms, dtype=dtype)
        return a.copy() if copy else a

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[1]


def omp(atoms, x, sparsity: int, tol: float = 1e-12) -> np.ndarray:
    """Orthogonal matching pursuit codes, column by column.

    Each code uses at most ``sparsity`` atoms; coding stops early once the
    residual falls below ``tol`` relative to the column norm.  Ties in atom
    selection resolve to the lowest index.
    """
    d = np.asarray(atoms, dtype=np.float64)
    x = _as_matrix(x, "x")
    m = d.shape[1]
    if sparsity < 1:
        raise InvalidInputError("sparsity must be >= 1")
    z = np.zeros((m, x.shape[1]))
    for col in range(x.shape[1]):
        y = x[:, col]
        ynorm = np.linalg.norm(y)
        if ynorm == 0.0:
            continue
        resid = y.copy()
        support: list[int] = []
        coef = None
        for _ in range(min(sparsity, m)):
            if np.linalg.norm(resid) <= tol * ynorm:
                break
            scores = np.abs(d.T @ resid)
            scores[support] = -1.0
            j = int(np.argmax(scores))
            support.append(j)
            coef, *_ = np.linalg.lstsq(d[:, support], y, rcond=None)
            resid = y - d[:, support] @ coef
        if coef is not None:
            z[support, col] = coef
    return z


def ksvd_fit(x, atom_count: int, sparsity: int, iters: int = 10, rng=None) -> Dictionary:
    """Fit a dictionary by alternating OMP coding and atom-wise SVD updates.

    ``atom_count`` is clamped to the number of samples.  The recorded
    reconstruction error is non-increasing: an iteration that would raise it
    (OMP re-coding carries no guarantee) is rolled back and fitting stops.
    Atoms that fall out of use are re-seeded with the worst-reconstructed
    sample.
    """
    x = _as_matrix(x, "x")
    if atom_count < 1:
        raise InvalidInputError("atom_count must be >= 1")
    if sparsity < 1:
        raise InvalidInputError("sparsity must be >= 1")
    if iters < 1:
        raise InvalidInputError("iters must be >= 1")
    col_norms = np.linalg.norm(x, axis=0)
    nonzero_cols = np.flatnonzero(col_norms > 0)
    if nonzero_cols.size == 0:
        raise InvalidInputError("all sample columns are zero")
    rng = np.random.default_rng(rng)

    m = min(atom_count, x.shape[1])
    l = min(sparsity, m)
    picks = rng.choice(nonzero_cols, size=min(m, nonzero_cols.size), replace=False)
    d = x[:, picks].copy()
    while d.shape[1] < m:  # fewer nonzero samples than atoms: pad randomly
        extra = rng.normal(size=(x.shape[0], m - d.shape[1]))
        d = np.concatenate([d, extra], axis=1)
    d /= np.linalg.norm(d, axis=0, keepdims=True)

    z = omp(d, x, l)
    err = float(np.linalg.norm(x - d @ z))
    trace = [err]
    for _ in range(iters):
        d_new, z_new = d.copy(), z.copy()
        for j in range(m):
            used = np.flatnonzero(z_new[j, :])
            if used.size == 0:
                resid_norms = np.linalg.norm(x - d_new @ z_new, axis=0)
                worst = int(np.argmax(resid_norms))
                if resid_norms[worst] > 0:
                    d_new[:, j] = x[:, worst] / np.linalg.norm(x[:, worst])
                continue
            e = x[:, used] - d_new @ z_new[:, used] + np.outer(d_new[:, j], z_new[j, used])
            u, s, vt = np.linalg.svd(e, full_matrices=False)
            d_new[:, j] = u[:, 0]
            z_new[j, used] = s[0] * vt[0, :]
        z_new = omp(d_new, x, l)
        err_new = float(np.linalg.norm(x - d_new @ z_new))
        if err_new > err + 1e-9:
            break  # keep the previous (better) iterate
        d, z, err = d_new, z_new, err_new
        trace.append(err)
        if err <= 1e-12:
            break
    return Dictionary(atoms=d, sparsity=l, error_trace=np.asarray(trace))


def residual_projector(dictionary, w) -> np.ndarray:
    """Matrix P with ||P x|| = least-squares residual of fitting Wx in the
    dictionary span: P = (I - D (D'D + ridge I)^(-1) D') W."""
    d = np.asarray(dictionary, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if d.ndim != 2 or d.size == 0:
        raise InvalidInputError("dictionary must be a nonempty matrix")
    gram = d.T @ d + RIDGE * np.eye(d.shape[1])
    return w - d @ np.linalg.solve(gram, d.T @ w)


@dataclass
class SplitNode:
    """One trained routing node.

    ``proj_pos``/``proj_neg`` are the residual projectors of the two class
    groups (they already contain the learned transform); ``net`` is set
    instead of ``transform`` for neural nodes, where the projectors act on the
    net's output features.  A degenerate node routes everything left.
    """

    proj_pos: np.ndarray | None = None
    proj_neg: np.ndarray | None = None
    transform: Transform | None = None
    net: DenseNet | None = None
    class_partition: dict[int, str] = field(default_factory=dict)
    degenerate: bool = False


@dataclass(frozen=True)
class SplitConfig:
    """Weak-learner settings shared by every node of a tree."""

    learner: str = "linear"  # "linear" | "kernel" | "neural"
    atoms: int = 16
    sparsity: int = 4
    ksvd_iters: int = 10
    optimizer: OptimizerConfig = OptimizerConfig()
    net_hidden: tuple[int, ...] = (32,)
    net_output_dim: int | None = None
    net: NetConfig = NetConfig()

    def __post_init__(self):
        if self.learner not in ("linear", "kernel", "neural"):
            raise InvalidInputError(f"unknown learner {self.learner!r}")
        if self.atoms < 1 or self.sparsity < 1 or self.ksvd_iters < 1:
            raise InvalidInputError("atoms, sparsity and ksvd_iters must be >= 1")


def _node_features(node: SplitNode, x, kernel: KernelConfig | None):
    f = _as_matrix(x, "x")
    if kernel is not None:
        f = kernel_featurize(f, kernel)
    if node.net is not None:
        f = net_forward(node.net, f)
    return f


def node_residuals(node: SplitNode, x, kernel: KernelConfig | None = None):
    """Vectorized (e_neg, e_pos) for every column of ``x``."""
    if node.degenerate:
        raise InvalidInputError("degenerate node has no residuals")
    f = _node_features(node, x, kernel)
    e_neg = np.linalg.norm(node.proj_neg @ f, axis=0)
    e_pos = np.linalg.norm(node.proj_pos @ f, axis=0)
    return e_neg, e_pos


def node_route_many(node: SplitNode, x, kernel: KernelConfig | None = None) -> np.ndarray:
    """Boolean go-left mask for every column of ``x``.

    Left iff e_neg < e_pos; exact ties go right; degenerate nodes send
    everything left.
    """
    x = _as_matrix(x, "x")
    if node.degenerate:
        return np.ones(x.shape[1], dtype=bool)
    e_neg, e_pos = node_residuals(node, x, kernel)
    return e_neg < e_pos


def node_route(node: SplitNode, x, kernel: KernelConfig | None = None) -> str:
    """Route one point: returns "left" or "right"."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return "left" if node_route_many(node, x, kernel)[0] else "right"


def train_split_node(
    x_pos,
    x_neg,
    partition: dict[int, str],
    cfg: SplitConfig | None = None,
    kernel: KernelConfig | None = None,
    rng=None,
) -> SplitNode:
    """Train one routing node on the pooled class groups.

    Pipeline: optional kernel featurization, transform fitting (or net
    training for the neural learner), one k-SVD dictionary per group, residual
    projectors.  An empty group yields a degenerate node.
    """
    cfg = cfg or SplitConfig()
    rng = np.random.default_rng(rng)

    def _ncols(a):
        if a is None:
            return 0
        arr = np.asarray(a)
        if arr.size == 0:
            return 0
        return 1 if arr.ndim == 1 else arr.shape[1]

    n_pos, n_neg = _ncols(x_pos), _ncols(x_neg)
    if n_pos + n_neg == 0:
        raise InvalidInputError("no samples arrived at the node")
    if n_pos == 0 or n_neg == 0:
        return SplitNode(class_partition=dict(partition), degenerate=True)

    x_pos = _as_matrix(x_pos, "x_pos")
    x_neg = _as_matrix(x_neg, "x_neg")
    if kernel is not None:
        x_pos = kernel_featurize(x_pos, kernel)
        x_neg = kernel_featurize(x_neg, kernel)

    net = None
    if cfg.learner == "neural":
        net = net_fit(
            x_pos,
            x_neg,
            hidden=cfg.net_hidden,
            output_dim=cfg.net_output_dim,
            cfg=cfg.net,
            seed=int(rng.integers(0, 2**63 - 1)),
        )
        f_pos, f_neg = net_forward(net, x_pos), net_forward(net, x_neg)
        w = np.eye(net.output_dim)
        transform = None
    else:
        transform = fit_transform(x_pos, x_neg, cfg.optimizer)
        w = transform.w
        f_pos, f_neg = w @ x_pos, w @ x_neg

    seed_pos = int(rng.integers(0, 2**63 - 1))
    seed_neg = int(rng.integers(0, 2**63 - 1))
    # a dictionary wider than the feature space spans it entirely and kills
    # the residual signal, so clamp to the transformed dimension as well
    m_cap = max(1, f_pos.shape[0] // 2)
    m_pos = min(cfg.atoms, f_pos.shape[1], m_cap)
    m_neg = min(cfg.atoms, f_neg.shape[1], m_cap)
    d_pos = ksvd_fit(f_pos, m_pos, min(cfg.sparsity, m_pos), cfg.ksvd_iters, seed_pos)
    d_neg = ksvd_fit(f_neg, m_neg, min(cfg.sparsity, m_neg), cfg.ksvd_iters, seed_neg)

    return SplitNode(
        proj_pos=residual_projector(d_pos, w),
        proj_neg=residual_projector(d_neg, w),
        transform=transform,
        net=net,
        class_partition=dict(partition),
    )
