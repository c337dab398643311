"""Synthetic networks and pair sets shared by pipeline, CLI and acceptance tests."""

import numpy as np

from mobiface import graph, weights
from mobiface.pipeline import PairList

N_IDENTITIES = 8
SIZE = 112


def pixel_picker():
    """Flatten + FC network whose embedding coordinate j reads pixel ``j`` of channel 0.

    With the bias cancelling the preprocessing offset, a black image maps to
    zero and a face with only pixel ``j`` white maps to a multiple of e_j, so
    distinct one-hot faces have exactly orthogonal embeddings.
    """
    in_dim = 3 * SIZE * SIZE
    net = graph.NetworkSpec((3, SIZE, SIZE), (graph.LayerSpec("flatten", graph.FLATTEN),
                                              graph.fc_layer("fc", in_dim, N_IDENTITIES)), N_IDENTITIES)
    w = np.zeros((N_IDENTITIES, in_dim), np.float32)
    w[np.arange(N_IDENTITIES), np.arange(N_IDENTITIES)] = 1.0
    store = weights.WeightStore({"fc.weight": w, "fc.bias": np.full(N_IDENTITIES, 0.99609375, np.float32)})
    return net, store


def one_hot_face(identity):
    img = np.zeros((3, SIZE, SIZE), np.float32)
    img[0].flat[identity] = 255.0
    return img


def separable_pairs(n_pairs=1000, folds=10, seed=0):
    """Half same-pairs (one image reused), half different-pairs, identities 0..7."""
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(n_pairs):
        a = int(rng.integers(N_IDENTITIES))
        if i % 2 == 0:
            entries.append((f"id{a}", f"id{a}", 1))
        else:
            b = int((a + rng.integers(1, N_IDENTITIES)) % N_IDENTITIES)
            entries.append((f"id{a}", f"id{b}", 0))
    return PairList(entries, folds)


def in_memory_loader(ref):
    from mobiface.pipeline import preprocess

    return preprocess(one_hot_face(int(ref[2:])))
