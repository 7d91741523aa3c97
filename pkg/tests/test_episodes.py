from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fcac.episodes import EpisodeConfig, LabeledSet, build_pseudo_episode, episode_pass
from fcac.errors import InvalidInputError, ShapeError


def labeled(sizes, start=0, dim=3, seed=0, prefix="s"):
    rng = np.random.default_rng(seed)
    ids, labels = [], []
    for c, n in enumerate(sizes):
        ids += [f"{prefix}{start + c}_{j}" for j in range(n)]
        labels += [start + c] * n
    return LabeledSet(ids, labels, rng.normal(size=(len(ids), dim)))


def check_pass(d01, d02, cfg, seed):
    """Shared structural checks; returns the list of episodes."""
    eps = list(episode_pass(d01, d02, cfg, np.random.default_rng(seed)))
    used = Counter()
    base_ids, novel_ids = set(d01.ids), set(d02.ids)
    for ep in eps:
        assert not set(ep.support_ids) & set(ep.query_ids)
        used.update(ep.support_ids)
        used.update(ep.query_ids)
        assert set(ep.base_classes) <= set(d01.classes)
        assert set(ep.novel_classes) <= set(d02.classes)
        assert ep.support_base.shape[1:] == (cfg.k_shot, d01.dim) or ep.support_base.shape[0] == 0
        assert ep.support_novel.shape[1:] == (cfg.k_shot, d01.dim) or ep.support_novel.shape[0] == 0
        assert len(ep.base_classes) <= cfg.n_way and len(ep.novel_classes) <= cfg.n_way
        # labels index base classes first, then novel
        classes = ep.base_classes + ep.novel_classes
        for qid, lab in zip(ep.query_ids, ep.query_labels):
            origin = d01 if qid in base_ids else d02
            assert origin.labels[origin.ids.index(qid)] == classes[lab]
            assert (qid in base_ids) == (lab < len(ep.base_classes))
        assert ep.query_counts().min() >= 1
    assert used == Counter(d01.ids + d02.ids)
    return eps


def test_full_episode_shapes():
    cfg = EpisodeConfig()
    d01, d02 = labeled([20] * 6), labeled([20] * 5, start=6)
    ep = build_pseudo_episode(d01, d02, cfg, np.random.default_rng(0))
    assert ep.support_base.shape == (5, 5, 3) and ep.support_novel.shape == (5, 5, 3)
    assert len(ep.support_ids) == 50
    assert ep.query.shape == (150, 3) and list(ep.query_counts()) == [15] * 10


def test_fixed_seed_same_episode():
    d01, d02 = labeled([20] * 6), labeled([20] * 5, start=6)
    a = build_pseudo_episode(d01, d02, EpisodeConfig(), np.random.default_rng(4))
    b = build_pseudo_episode(d01, d02, EpisodeConfig(), np.random.default_rng(4))
    assert a.support_ids == b.support_ids and a.query_ids == b.query_ids


def test_ten_classes_of_twenty_each_used_once():
    d01, d02 = labeled([20] * 6), labeled([20] * 4, start=6)
    eps = check_pass(d01, d02, EpisodeConfig(), seed=1)
    assert len(eps) == 2


def test_remainders_and_uneven_classes():
    # 27 samples: one K+K_q chunk plus 7 left, which is more than K -> a second, smaller chunk
    # 23 samples: 3 left over, appended to the first chunk's queries
    cfg = EpisodeConfig(n_way=2, k_shot=5, k_query=15)
    d01, d02 = labeled([27, 23, 40]), labeled([20, 61], start=3)
    check_pass(d01, d02, cfg, seed=3)


def test_too_few_samples_rejected():
    with pytest.raises(InvalidInputError):
        list(episode_pass(labeled([19]), labeled([20], start=1), EpisodeConfig(), np.random.default_rng(0)))
    with pytest.raises(ShapeError):
        list(episode_pass(labeled([20]), labeled([20], start=1, dim=4), EpisodeConfig(), np.random.default_rng(0)))
    with pytest.raises(InvalidInputError):
        EpisodeConfig(n_way=0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(6, 30), min_size=1, max_size=7), st.lists(st.integers(6, 30), min_size=1, max_size=7),
       st.integers(1, 4), st.integers(1, 3), st.integers(1, 3), st.integers(0, 2 ** 32 - 1))
def test_every_sample_used_once_property(base_sizes, novel_sizes, n_way, k, kq, seed):
    cfg = EpisodeConfig(n_way=n_way, k_shot=k, k_query=kq)
    check_pass(labeled(base_sizes), labeled(novel_sizes, start=len(base_sizes), prefix="n"), cfg, seed)
