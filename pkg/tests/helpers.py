"""Builders for tiny hand-made corpora used across the test suite."""

import numpy as np

from weakbias.corpus import Corpus, Sample, SideLabel, tokenize


def make_sample(sample_id, text, side, source="src", topics=(), feature=None, dim=4):
    if feature is None:
        rng = np.random.default_rng(sum(ord(c) for c in sample_id) % (2**32))
        feature = rng.normal(size=dim)
    vec = np.asarray(feature, dtype=np.float32)
    return Sample(
        id=sample_id,
        feature=vec,
        tokens=tokenize(text),
        side=side,
        source=source,
        topics=frozenset(topics),
        raw_text=text,
    )


def make_corpus(rows, dim=4):
    """rows: iterable of (id, text, side[, source])."""
    samples = []
    for row in rows:
        sample_id, text, side = row[0], row[1], row[2]
        source = row[3] if len(row) > 3 else "src"
        samples.append(make_sample(sample_id, text, side, source=source, dim=dim))
    return Corpus(dim, samples)


def preactivation_margin(model, x, e=None):
    """Smallest |pre-activation| any rectifier sees for this batch."""
    h1p = x @ model.trunk1.W + model.trunk1.b
    h2p = np.maximum(h1p, 0) @ model.trunk2.W + model.trunk2.b
    margins = [np.abs(h1p).min(), np.abs(h2p).min()]
    if e is not None:
        joint = np.concatenate([np.maximum(h2p, 0), e], axis=1)
        fp = joint @ model.fusion.W + model.fusion.b
        margins.append(np.abs(fp).min())
    return min(margins)


def clean_batch(model, rng, n, with_text=True, margin=1e-2):
    """Random batch whose rectifier inputs all sit clear of zero, so a
    1e-4 finite-difference probe cannot straddle a kink."""
    while True:
        x = rng.normal(size=(n, model.feature_dim))
        e = rng.normal(size=(n, model.text_dim)) if with_text else None
        if preactivation_margin(model, x, e) > margin:
            return x, e


def fd_check(loss_fn, params, grads, step=1e-4, rtol=1e-4, atol=1e-6):
    """Assert analytic gradients match central finite differences."""
    for name, grad in grads.items():
        flat = params[name].reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        for j in range(flat.size):
            saved = flat[j]
            flat[j] = saved + step
            up = loss_fn()
            flat[j] = saved - step
            down = loss_fn()
            flat[j] = saved
            fd = (up - down) / (2 * step)
            err = abs(fd - gflat[j])
            assert err <= atol + rtol * max(abs(fd), abs(gflat[j])), (
                f"{name}[{j}]: analytic {gflat[j]}, finite difference {fd}"
            )


def feature_corpus(vectors, sides=None, ids=None):
    """Corpus whose samples carry the given feature rows verbatim."""
    vectors = np.asarray(vectors, dtype=np.float32)
    n = vectors.shape[0]
    if ids is None:
        ids = [f"s{i:04d}" for i in range(n)]
    if sides is None:
        sides = [SideLabel.LEFT if i % 2 == 0 else SideLabel.RIGHT for i in range(n)]
    samples = [
        make_sample(ids[i], f"text {i}", sides[i], feature=vectors[i])
        for i in range(n)
    ]
    return Corpus(vectors.shape[1], samples)


def planted_duplicate_corpus(
    n_groups=10, group_size=3, n_singletons=60, dim=16, seed=0, jitter=0.2
):
    """Clusters of near-identical vectors dropped into a Gaussian background.

    Group members sit within `jitter` of a shared center, so squared
    pairwise distances stay under (2*jitter)^2; distinct centers are unit
    Gaussian and land far apart in this dimension. Returns (corpus, groups)
    where groups maps a frozenset of member ids to its planted center.
    """
    rng = np.random.default_rng(seed)
    vectors, ids, sides = [], [], []
    groups = {}
    for g in range(n_groups):
        center = rng.normal(size=dim)
        members = []
        for j in range(group_size):
            offset = rng.normal(size=dim)
            offset *= jitter * rng.random() / np.linalg.norm(offset)
            vectors.append(center + offset)
            sid = f"g{g:03d}m{j}"
            members.append(sid)
            ids.append(sid)
            sides.append(SideLabel.LEFT if (g + j) % 2 == 0 else SideLabel.RIGHT)
        groups[frozenset(members)] = center
    for i in range(n_singletons):
        vectors.append(rng.normal(size=dim))
        ids.append(f"x{i:04d}")
        sides.append(SideLabel.LEFT if i % 2 == 0 else SideLabel.RIGHT)
    corpus = feature_corpus(np.asarray(vectors), sides=sides, ids=ids)
    return corpus, groups


def two_topic_corpus(n_docs=40, words_per_topic=8, tokens_per_doc=20, seed=0, dim=4):
    """Documents drawn from one of two disjoint topic vocabularies.

    Topic 0 docs are LEFT from source 'sl', topic 1 docs RIGHT from 'sr';
    the topic name is stored in topics. Even ids get topic 0.
    """
    rng = np.random.default_rng(seed)
    vocab = {
        0: [f"red{i}" for i in range(words_per_topic)],
        1: [f"blue{i}" for i in range(words_per_topic)],
    }
    samples = []
    for d in range(n_docs):
        topic = d % 2
        words = rng.choice(vocab[topic], size=tokens_per_doc)
        text = " ".join(words)
        side = SideLabel.LEFT if topic == 0 else SideLabel.RIGHT
        samples.append(
            make_sample(
                f"d{d:04d}",
                text,
                side,
                source="sl" if topic == 0 else "sr",
                topics=(f"topic{topic}",),
                dim=dim,
            )
        )
    return Corpus(dim, samples)
