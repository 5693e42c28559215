"""N-way K-shot Q-query episode construction from a labeled pool.

Episode randomness is counter-based: episode i of a stream depends only on
(root seed, i), so streams can be regenerated or consumed out of order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EpisodeSpec:
    n_way: int
    k_shot: int
    q_query: int

    def __post_init__(self):
        if self.n_way < 2:
            raise ValueError("n_way must be >= 2")
        if self.k_shot < 1:
            raise ValueError("k_shot must be >= 1")
        if self.q_query < 0:
            raise ValueError("q_query must be >= 0")


@dataclass
class Episode:
    support: list
    query: list
    class_remap: dict

    @property
    def support_labels(self) -> np.ndarray:
        return np.array([self.class_remap[ex.class_id] for ex in self.support])

    @property
    def query_labels(self) -> np.ndarray:
        return np.array([self.class_remap[ex.class_id] for ex in self.query],
                        dtype=np.int64)


def episode_seed(root_seed: int, index) -> int:
    """Derive an independent stream seed from (root, index).

    `index` may be an int or a tuple of ints, so callers can carve out
    nested substreams (e.g. per-phase, per-episode) without collisions.
    """
    parts = tuple(index) if isinstance(index, tuple) else (index,)
    return int(np.random.SeedSequence((root_seed, *parts)).generate_state(1)[0])


def sample_episode(pool, spec: EpisodeSpec, seed: int) -> Episode:
    """One episode with classes and instances drawn uniformly w/o replacement.

    Episode-local labels 0..N-1 follow ascending original class_id.
    """
    by_class = {}
    for ex in pool:
        by_class.setdefault(ex.class_id, []).append(ex)
    classes = sorted(by_class)
    if len(classes) < spec.n_way:
        raise ValueError(f"pool has {len(classes)} classes; episode needs {spec.n_way}")
    need = spec.k_shot + spec.q_query
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(classes, size=spec.n_way, replace=False).tolist())
    remap = {cid: i for i, cid in enumerate(chosen)}
    support, query = [], []
    for cid in chosen:
        members = by_class[cid]
        if len(members) < need:
            raise ValueError(f"class {cid} has {len(members)} examples; "
                             f"episode needs {need}")
        picks = rng.choice(len(members), size=need, replace=False)
        support.extend(members[i] for i in picks[:spec.k_shot])
        query.extend(members[i] for i in picks[spec.k_shot:])
    return Episode(support=support, query=query, class_remap=remap)


def episode_stream(pool, spec: EpisodeSpec, count: int, seed: int):
    """Yield `count` episodes; episode i is a pure function of (seed, i)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    for i in range(count):
        yield sample_episode(pool, spec, episode_seed(seed, i))
