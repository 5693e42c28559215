"""Cross-instance adaptation of pooled embeddings.

Two stages operating on prototype and query vectors jointly:

* channel interaction (SCI): a bilinear channel-relation map re-weights an
  embedding's channels and adds the result back residually, diversifying
  channels within each instance;
* cross-instance fusion (CIF): each vector is stacked with its most
  cosine-similar vectors from the opposite set and recombined through a
  learned per-channel softmax over the stack slots, pulling the two sets'
  distributions together.

Both stages reduce to exact identities when disabled or given no
candidates, which the ablation tests rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LEAKY_SLOPE = 0.2


@dataclass
class SciParameters:
    w_query: Tensor
    w_key: Tensor


@dataclass
class CifBranch:
    """One fusion branch: slot mixing (K+1 -> h -> K+1), shared per channel."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @property
    def n_selected(self) -> int:
        return self.w1.shape[1] - 1


@dataclass
class CifParameters:
    proto: CifBranch
    query: CifBranch
    hidden: int
    k1: int
    k2: int


@dataclass
class CiaParameters:
    sci: SciParameters
    cif: CifParameters

    def named_tensors(self) -> dict:
        out = {"cia.sci.w_query": self.sci.w_query, "cia.sci.w_key": self.sci.w_key}
        for branch, name in ((self.cif.proto, "proto"), (self.cif.query, "query")):
            for attr in ("w1", "b1", "w2", "b2"):
                out[f"cia.cif.{name}.{attr}"] = getattr(branch, attr)
        return out


def _init_branch(rng, n_selected: int, hidden: int) -> CifBranch:
    slots = n_selected + 1
    return CifBranch(
        w1=ad.parameter(rng.uniform(-1, 1, size=(hidden, slots)) / np.sqrt(slots)),
        b1=ad.parameter(np.zeros(hidden)),
        w2=ad.parameter(rng.uniform(-1, 1, size=(slots, hidden)) / np.sqrt(hidden)),
        b2=ad.parameter(np.zeros(slots)),
    )


def init_cia(embed_dim: int, k1: int = 3, k2: int = 2, hidden: int = 32,
             seed: int = 0) -> CiaParameters:
    if embed_dim < 1:
        raise ValueError("embed_dim must be >= 1")
    if k1 < 0 or k2 < 0 or hidden < 1:
        raise ValueError("k1, k2 must be >= 0 and hidden >= 1")
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(embed_dim)
    sci = SciParameters(
        w_query=ad.parameter(rng.uniform(-bound, bound, size=(embed_dim, embed_dim))),
        w_key=ad.parameter(rng.uniform(-bound, bound, size=(embed_dim, embed_dim))),
    )
    cif = CifParameters(proto=_init_branch(rng, k1, hidden),
                        query=_init_branch(rng, k2, hidden),
                        hidden=hidden, k1=k1, k2=k2)
    return CiaParameters(sci=sci, cif=cif)


# ---------------------------------------------------------------------------
# Channel interaction


def sci_forward(f, params: SciParameters) -> Tensor:
    """Bilinear channel re-weighting with a residual: f' = f R' + f.

    The relation map R = q^T k is normalized per column with a softmax of
    -R, so each output channel mixes the input channels convexly.
    """
    f = ad.as_tensor(f)
    single = f.ndim == 1
    if single:
        f = ad.reshape(f, (1, -1))
    m, d = f.shape
    if params.w_query.shape != (d, d) or params.w_key.shape != (d, d):
        raise ValueError(f"SCI parameters expect dimension {params.w_query.shape[0]}, "
                         f"features have {d}")
    q = ad.matmul(f, params.w_query)
    k = ad.matmul(f, params.w_key)
    relation = ad.mul(ad.reshape(q, (m, d, 1)), ad.reshape(k, (m, 1, d)))
    weights = ad.softmax(ad.neg(relation), axis=1)
    v = ad.reshape(ad.matmul(ad.reshape(f, (m, 1, d)), weights), (m, d))
    out = ad.add(v, f)
    return ad.reshape(out, (d,)) if single else out


def relation_map(f, params: SciParameters):
    """(R, R') for a single embedding; exposed for inspection and tests."""
    f = np.asarray(f, dtype=np.float64).reshape(1, -1)
    q = f @ params.w_query.data
    k = f @ params.w_key.data
    r = q.T @ k
    shifted = np.exp(-(r - r.min(axis=0, keepdims=True)))
    return r, shifted / shifted.sum(axis=0, keepdims=True)


# ---------------------------------------------------------------------------
# Cross-instance fusion


def cosine_topk(anchor, candidates, k: int) -> np.ndarray:
    """Indices of the k most cosine-similar candidates, descending.

    Ties break toward the lowest index; zero vectors compare as similarity 0.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    anchor = np.asarray(anchor, dtype=np.float64).reshape(-1)
    cands = np.asarray(candidates, dtype=np.float64)
    if cands.ndim == 1:
        cands = cands.reshape(1, -1) if cands.size else cands.reshape(0, anchor.size)
    if cands.shape[0] == 0 or k == 0:
        return np.zeros(0, dtype=np.int64)
    sims = _cosine_matrix(anchor.reshape(1, -1), cands)[0]
    order = np.argsort(-sims, kind="stable")
    return order[:min(k, cands.shape[0])]


def _cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    sims = a @ b.T
    denom = na[:, None] * nb[None, :]
    return np.divide(sims, denom, out=np.zeros_like(sims), where=denom > 0)


def _slice_branch(branch: CifBranch, n_selected: int) -> CifBranch:
    if n_selected == branch.n_selected:
        return branch
    slots = n_selected + 1
    keep = np.arange(slots)
    w1 = ad.transpose(ad.take_rows(ad.transpose(branch.w1, (1, 0)), keep), (1, 0))
    return CifBranch(w1=w1, b1=branch.b1,
                     w2=ad.take_rows(branch.w2, keep),
                     b2=ad.take_rows(branch.b2, keep))


def _fuse_batch(anchors: Tensor, selected: Tensor, branch: CifBranch) -> Tensor:
    """Fuse (m, d) anchors with (m, K, d) selected features slot-wise."""
    m, d = anchors.shape
    z = ad.concat([ad.reshape(anchors, (m, 1, d)), selected], axis=1)
    hidden = ad.leaky_relu(ad.add(ad.matmul(branch.w1, z),
                                  ad.reshape(branch.b1, (1, -1, 1))), LEAKY_SLOPE)
    scores = ad.add(ad.matmul(branch.w2, hidden), ad.reshape(branch.b2, (1, -1, 1)))
    return ad.reduce_sum(ad.mul(ad.softmax(scores, axis=1), z), axis=1)


def cif_fuse(anchor, selected, branch: CifBranch) -> Tensor:
    """Fuse one anchor with its selected cross-set features.

    With no selected features this is the exact identity for any parameters.
    """
    anchor = ad.as_tensor(anchor)
    if len(selected) != branch.n_selected:
        raise ValueError(f"branch fuses {branch.n_selected} selected features, "
                         f"got {len(selected)}")
    if not selected:
        return anchor
    d = anchor.shape[0]
    rows = [ad.reshape(ad.as_tensor(s), (1, 1, d)) for s in selected]
    out = _fuse_batch(ad.reshape(anchor, (1, d)), ad.concat(rows, axis=1), branch)
    return ad.reshape(out, (d,))


# ---------------------------------------------------------------------------
# Full module


def cia_forward(prototypes, queries, params: CiaParameters,
                sci: bool = True, cif: bool = True):
    """Adapt prototypes and queries jointly; returns (P', Q').

    CIF selection runs on the post-SCI features for both sides, so the two
    updates are order-independent. Fusion counts clamp to the candidates
    actually available.
    """
    p = ad.as_tensor(prototypes)
    q = ad.as_tensor(queries)
    if p.ndim != 2 or q.ndim != 2 or p.shape[1] != q.shape[1]:
        raise ValueError("prototypes and queries must be 2-D with equal dim")
    if not sci and not cif:
        return p, q
    if sci:
        p = sci_forward(p, params.sci)
        if q.shape[0] > 0:
            q = sci_forward(q, params.sci)
    if not cif:
        return p, q
    n, nq = p.shape[0], q.shape[0]
    k1 = min(params.cif.k1, nq)
    k2 = min(params.cif.k2, n)
    p_out, q_out = p, q
    if k1 > 0:
        sims = _cosine_matrix(p.data, q.data)
        idx = np.argsort(-sims, axis=1, kind="stable")[:, :k1]
        p_out = _fuse_batch(p, ad.take_rows(q, idx), _slice_branch(params.cif.proto, k1))
    if k2 > 0 and nq > 0:
        sims = _cosine_matrix(q.data, p.data)
        idx = np.argsort(-sims, axis=1, kind="stable")[:, :k2]
        q_out = _fuse_batch(q, ad.take_rows(p, idx), _slice_branch(params.cif.query, k2))
    return p_out, q_out
