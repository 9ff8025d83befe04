import numpy as np
import pytest

from keaf.corpus import LabelCatalogEntry, Product, build_corpus
from keaf.synth import synth_corpus


def make_catalog(ids):
    return [LabelCatalogEntry(lid, f"attr_{lid}", f"val_{lid}", f"attr_{lid} is val_{lid}") for lid in ids]


def make_corpus(label_sets, catalog_ids=None, prefix="p"):
    """Corpus from a list of label tuples; product text is derived from the labels."""
    ids = catalog_ids or sorted({lid for s in label_sets for lid in s})
    products = [
        Product(f"{prefix}{i:04d}", "cat", " ".join(s) + " title", "desc " + " ".join(s), tuple(s))
        for i, s in enumerate(label_sets)
    ]
    return build_corpus(products, make_catalog(ids))


def random_corpus(rng, n_products=60, n_labels=8, max_labels=3):
    labels = [f"L{i}" for i in range(n_labels)]
    sets = []
    for _ in range(n_products):
        k = int(rng.integers(1, max_labels + 1))
        sets.append(tuple(rng.choice(labels, size=k, replace=False).tolist()))
    return make_corpus(sets, labels)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_synth():
    return synth_corpus(n_labels=12, n_products=300, dim=8, seed=5)


def fd_episode(data, n_way=3, k_support=2, k_query=2, seed=0):
    from keaf.sampler import EpisodeSpec, sample_episode

    return sample_episode(data.corpus, EpisodeSpec(n_way, k_support, k_query), np.random.default_rng(seed))


def fd_max_rel_error(params, provider, corpus, episode, flags, step=1e-4, loss_scale=1.0):
    """Largest per-tensor error of analytic vs central-difference gradients.

    Each tensor's error is ``max|analytic - numeric|`` over its entries divided by
    that tensor's largest gradient magnitude (floored at 1e-6 so an all-zero
    gradient is compared in absolute terms). Table entries are checked only on
    rows the episode touches.
    """
    from keaf.head import forward_episode, grad_episode

    _, grads = grad_episode(params, provider, corpus, episode, flags, loss_scale=loss_scale)
    tensors = dict(params.arrays())
    if grads.table is not None:
        tensors["table"] = provider.table
    worst = {}
    for name, arr in tensors.items():
        analytic = grads.arrays()[name]
        if name == "table":
            rows = sorted(set(np.nonzero(np.any(analytic != 0, axis=1))[0]))
            idx = [(r, c) for r in rows for c in range(arr.shape[1])]
        else:
            idx = list(np.ndindex(arr.shape))
        numeric = np.zeros(len(idx))
        for k, i in enumerate(idx):
            old = arr[i]
            arr[i] = old + step
            hi = forward_episode(params, provider, corpus, episode, flags).loss
            arr[i] = old - step
            lo = forward_episode(params, provider, corpus, episode, flags).loss
            arr[i] = old
            numeric[k] = loss_scale * (hi - lo) / (2 * step)
        a = np.array([analytic[i] for i in idx])
        denom = max(np.abs(a).max(), np.abs(numeric).max(), 1e-6)
        worst[name] = float(np.abs(a - numeric).max() / denom)
    return worst


def reference_forward(rs, rq, rl, ys, L, eta, cosine, scale, attention):
    """Loop-based oracle for the head on projected vectors; returns (distances, logits)."""
    import math

    def dot(u, v):
        return sum(a * b for a, b in zip(u, v))

    def norm(u):
        return math.sqrt(dot(u, u))

    n_way = len(rl)
    protos = []
    for j in range(n_way):
        members = [list(rs[i]) for i in range(len(rs)) if ys[i][j]]
        mean = [sum(col) / len(members) for col in zip(*members)]
        c = [eta * l + (1 - eta) * m for l, m in zip(rl[j], mean)]
        alpha = dot(c, rl[j]) / (norm(c) * norm(rl[j]))
        protos.append([alpha * x for x in c])
    dists, logits = [], []
    for q in rq:
        if attention:
            Lq = [dot(row, q) for row in L]
            scores = [dot([dot(row, p) for row in L], Lq) for p in protos]
            top = max(scores)
            ex = [math.exp(s - top) for s in scores]
            beta = [e / sum(ex) for e in ex]
        else:
            beta = [1.0] * n_way
        row_d = []
        for j, p in enumerate(protos):
            f = [beta[j] * x for x in p]
            if cosine:
                row_d.append(1 - dot(f, q) / (norm(f) * norm(q)))
            else:
                row_d.append(sum((a - b) ** 2 for a, b in zip(f, q)))
        dists.append(row_d)
        logits.append([-scale * d for d in row_d])
    return np.array(dists), np.array(logits)


_ACCEPTANCE = []


@pytest.fixture
def verdict(capsys):
    """Print one PASS/FAIL line for an acceptance criterion, then assert it."""

    def check(number, title, ok, detail=""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        _ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
