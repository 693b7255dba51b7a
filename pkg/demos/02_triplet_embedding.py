"""
Shaping an embedding space with triplet loss
============================================

The labeler never sees raw pixels' feature vectors directly -- queries are
ranked in an embedding space. This demo trains a small embedding network
with the hinge triplet loss and random semi-hard negative mining, and
shows the effect it has on class geometry compared to the untouched
input space and a cross-entropy-trained embedding.
"""

import numpy as np

from camactive.embedding import (
    TripletConfig,
    count_possible_triplets,
    embed_batch,
    make_embedding_net,
    train_embedding_triplet,
    train_embedding_xent,
)
from camactive.pool import make_gaussian_pool

rng = np.random.default_rng(0)

# Three classes in 12 dimensions, means 2 sigma apart: enough overlap
# that the raw space is genuinely messy.
X, y = make_gaussian_pool([80, 80, 80], dim=12, separation=2.0, seed=0)

print(f"{len(y)} samples -> {count_possible_triplets([80, 80, 80]):,} possible triplets")


def geometry(emb, labels):
    """Mean within-class and between-class pairwise distance."""
    d = np.linalg.norm(emb[:, None, :] - emb[None, :, :], axis=-1)
    same = labels[:, None] == labels[None, :]
    off_diag = ~np.eye(len(labels), dtype=bool)
    return d[same & off_diag].mean(), d[~same].mean()


intra, inter = geometry(X, y)
print(f"raw space:      intra {intra:.2f}  inter {inter:.2f}  ratio {inter/intra:.2f}")

cfg = TripletConfig(margin=0.2, learning_rate=0.05, epochs=60, batch_size=32, seed=0)

net = make_embedding_net(12, embed_dim=4, hidden=(16,), seed=0)
tri_net = train_embedding_triplet(net, X, y, cfg)
intra, inter = geometry(embed_batch(tri_net, X), y)
print(f"triplet space:  intra {intra:.2f}  inter {inter:.2f}  ratio {inter/intra:.2f}")

xe_net = train_embedding_xent(net, X, y, cfg, n_classes=3)
intra, inter = geometry(embed_batch(xe_net, X), y)
print(f"xent space:     intra {intra:.2f}  inter {inter:.2f}  ratio {inter/intra:.2f}")

# A bigger inter/intra ratio means same-class samples sit closer together
# relative to other classes -- exactly what distance-based query strategies
# (k-Center, the clustering strategies) feed on.
