"""Hierarchical-clustering machinery: discrete Dasgupta cost with a
brute-force oracle, the continuous triplet clustering loss, geodesic LCA
depth, bottom-up tree decoding from embeddings, tree distortion against a
labeling, and the same-class distance constraint.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import geometry
from . import tape as tp

__all__ = [
    "ClusterTree",
    "SimilarityConfig",
    "dasgupta_cost",
    "best_tree_bruteforce",
    "random_binary_tree",
    "scaled_softmax",
    "lca_depth",
    "tree_loss",
    "sample_triplets",
    "decode_tree",
    "distortion",
    "distance_constraint",
    "tree_to_newick",
    "tree_to_json",
    "tree_from_json",
]

BRUTEFORCE_MAX_LEAVES = 8


class ClusterTree:
    """Rooted binary tree over items; leaves carry labels."""

    __slots__ = ("label", "children")

    def __init__(self, label=None, children=None):
        if (label is None) == (children is None):
            raise ValueError("a node is either a leaf (label) or internal (children)")
        if children is not None and len(children) != 2:
            raise ValueError("internal nodes have exactly 2 children")
        self.label = label
        self.children = tuple(children) if children is not None else None

    @classmethod
    def leaf(cls, label):
        return cls(label=label)

    @classmethod
    def merge(cls, left, right):
        return cls(children=(left, right))

    @property
    def is_leaf(self):
        return self.children is None

    def leaves(self):
        if self.is_leaf:
            return [self.label]
        return self.children[0].leaves() + self.children[1].leaves()

    @property
    def n_leaves(self):
        return len(self.leaves())

    def clades(self):
        """Set of leaf sets of all internal nodes; identifies the topology
        irrespective of sibling order."""
        out = set()

        def walk(node):
            if node.is_leaf:
                return frozenset([node.label])
            s = walk(node.children[0]) | walk(node.children[1])
            out.add(s)
            return s

        walk(self)
        return frozenset(out)

    def same_topology(self, other):
        return set(self.leaves()) == set(other.leaves()) and self.clades() == other.clades()

    def cherries(self):
        """Unordered sibling leaf pairs (binary clusters)."""
        out = []

        def walk(node):
            if node.is_leaf:
                return
            a, b = node.children
            if a.is_leaf and b.is_leaf:
                out.append(frozenset([a.label, b.label]))
            walk(a)
            walk(b)

        walk(self)
        return out

    def __repr__(self):
        return f"ClusterTree({tree_to_newick(self)})"


def _validate_tree(tree):
    leaves = tree.leaves()
    if len(set(leaves)) != len(leaves):
        raise ValueError("leaf labels must be unique")
    return leaves


def _validate_similarity(w, n):
    w = np.asarray(w, dtype=float)
    if w.shape != (n, n):
        raise ValueError("similarity matrix shape does not match leaf count")
    if not np.allclose(w, w.T):
        raise ValueError("similarity matrix must be symmetric")
    if np.any(w < 0):
        raise ValueError("similarities must be nonnegative")
    if np.any(np.diag(w) != 0):
        raise ValueError("similarity diagonal must be zero")
    return w


@dataclass(frozen=True)
class SimilarityConfig:
    tau: float = 0.1
    similarity_source: str = "logits"  # "logits" | "latent" | "input"
    literal_sign: bool = False  # similarity grows with distance if True
    lca_tol: float = 1e-8  # golden-section tolerance for lca depths

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.similarity_source not in ("logits", "latent", "input"):
            raise ValueError(f"unknown similarity source: {self.similarity_source!r}")
        if self.lca_tol <= 0:
            raise ValueError("lca_tol must be positive")


def dasgupta_cost(tree, w):
    """Sum over unordered leaf pairs of w_ij times |leaves(subtree at lca)|."""
    leaves = _validate_tree(tree)
    n = len(leaves)
    if sorted(leaves) != list(range(n)):
        raise ValueError("tree leaves must be the index set 0..n-1 of w")
    w = _validate_similarity(w, n)

    total = 0.0

    def walk(node):
        nonlocal total
        if node.is_leaf:
            return [node.label]
        left = walk(node.children[0])
        right = walk(node.children[1])
        size = len(left) + len(right)
        # pairs split between the children have their lca here
        total += w[np.ix_(left, right)].sum() * size
        return left + right

    walk(tree)
    return total


def _insertions(tree, new_leaf):
    """All trees obtained by attaching ``new_leaf`` on an edge of ``tree``
    (including above the root)."""
    yield ClusterTree.merge(tree, new_leaf)
    if not tree.is_leaf:
        a, b = tree.children
        for t in _insertions(a, new_leaf):
            yield ClusterTree.merge(t, b)
        for t in _insertions(b, new_leaf):
            yield ClusterTree.merge(a, t)


def _all_trees(n):
    if n == 1:
        yield ClusterTree.leaf(0)
        return
    for t in _all_trees(n - 1):
        yield from _insertions(t, ClusterTree.leaf(n - 1))


def best_tree_bruteforce(w):
    """Exhaustive minimizer of the Dasgupta cost; refuses n > 8 leaves."""
    w = np.asarray(w, dtype=float)
    n = w.shape[0]
    if n < 2:
        raise ValueError("need at least 2 items")
    if n > BRUTEFORCE_MAX_LEAVES:
        raise ValueError(f"brute force refused for n > {BRUTEFORCE_MAX_LEAVES} leaves")
    _validate_similarity(w, n)
    best, best_cost = None, math.inf
    for tree in _all_trees(n):
        cost = dasgupta_cost(tree, w)
        if cost < best_cost:
            best, best_cost = tree, cost
    return best, best_cost


def random_binary_tree(labels, rng):
    """Uniformly random labeled binary topology via sequential insertion at
    a uniformly chosen edge."""
    labels = list(labels)
    if len(labels) < 2:
        raise ValueError("need at least 2 labels")
    order = list(rng.permutation(len(labels)))
    tree = ClusterTree.leaf(labels[order[0]])
    for idx in order[1:]:
        slots = list(_insertions(tree, ClusterTree.leaf(labels[idx])))
        tree = slots[int(rng.integers(len(slots)))]
    return tree


def scaled_softmax(d, tau):
    """Componentwise e^{d_i/tau} normalized, max-subtracted for stability."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    d = np.asarray(d, dtype=float)
    z = d / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_min_t(x, y, geom, tol):
    """Per-row minimizing parameter of t -> d_o(geodesic(x, y, t)) on [0, 1].

    Distance to a point is convex along geodesics in both supported
    spaces, so golden-section search converges to the global minimum.
    """
    lead = np.asarray(x).shape[:-1]
    a = np.zeros(lead + (1,))
    b = np.ones(lead + (1,))

    def f(t):
        return geom.dist_to_origin(geom.geodesic(x, y, t))[..., None]

    c1 = b - _INVPHI * (b - a)
    c2 = a + _INVPHI * (b - a)
    f1, f2 = f(c1), f(c2)
    n_iter = int(math.ceil(math.log(tol) / math.log(_INVPHI))) + 1
    for _ in range(n_iter):
        # one interior point survives each shrink; only the other is new
        shrink_right = f1 < f2
        a = np.where(shrink_right, a, c1)
        b = np.where(shrink_right, c2, b)
        carried_t = np.where(shrink_right, c1, c2)
        carried_f = np.where(shrink_right, f1, f2)
        new_t = np.where(shrink_right, b - _INVPHI * (b - a), a + _INVPHI * (b - a))
        new_f = f(new_t)
        c1 = np.where(shrink_right, new_t, carried_t)
        f1 = np.where(shrink_right, new_f, carried_f)
        c2 = np.where(shrink_right, carried_t, new_t)
        f2 = np.where(shrink_right, carried_f, new_f)
    return (a + b) / 2.0


def lca_depth(x, y, c=1.0, space="hyperbolic", tol=1e-8):
    """Continuous LCA depth: minimum distance-to-origin over the geodesic
    segment between x and y (shape (..., d) supported)."""
    geom = geometry.of(space, c if space == "hyperbolic" else 1.0)
    xv, yv = tp.value(x), tp.value(y)
    t = _golden_min_t(xv, yv, geom, tol)
    return geom.dist_to_origin(geom.geodesic(xv, yv, t))


def sample_triplets(batch_size, count, rng):
    """Uniform random triples of distinct indices in [0, batch_size)."""
    if batch_size < 3:
        raise ValueError("need a batch of at least 3 items to sample triplets")
    if count < 1:
        raise ValueError("count must be >= 1")
    tri = rng.integers(0, batch_size, size=(count, 3))
    bad = (tri[:, 0] == tri[:, 1]) | (tri[:, 0] == tri[:, 2]) | (tri[:, 1] == tri[:, 2])
    while bad.any():
        tri[bad] = rng.integers(0, batch_size, size=(int(bad.sum()), 3))
        bad = (tri[:, 0] == tri[:, 1]) | (tri[:, 0] == tri[:, 2]) | (tri[:, 1] == tri[:, 2])
    return tri


def tree_loss(points, triplets, cfg, geom=None, similarities=None, lca_tol=None):
    """Continuous relaxation of the Dasgupta cost over sampled triplets.

    For each triplet (i, j, k) the pair similarities (w_ij, w_ik, w_jk) are
    the scaled softmax of the negated pairwise distances (or a per-triplet
    normalization of ``similarities`` when given), and

        w_ijk = (w_ij, w_ik, w_jk) . softmax_tau(d_o(lca(i,j)), ...)

    with the continuous LCA depth from ``lca_depth``.  The loss is
    sum_t (w_ij + w_ik + w_jk - w_ijk) + 2 sum over the triplets' pairs of
    w.  The minimizing geodesic parameter is held fixed in the backward
    pass (envelope differentiation), so the loss is differentiable in the
    points.
    """
    if geom is None:
        geom = geometry.hyperbolic(1.0)
    if lca_tol is None:
        lca_tol = cfg.lca_tol
    triplets = np.asarray(triplets, dtype=int)
    if triplets.ndim != 2 or triplets.shape[1] != 3 or triplets.shape[0] < 1:
        raise ValueError("triplets must be a nonempty (m, 3) index array")
    n = tp.value(points).shape[0]
    if triplets.min() < 0 or triplets.max() >= n:
        raise ValueError("triplet index out of range")
    m = triplets.shape[0]

    # all three pair distances / lca searches in one batched call: rows
    # 0..m-1 are (i,j), m..2m-1 are (i,k), 2m..3m-1 are (j,k)
    first = np.concatenate([triplets[:, 0], triplets[:, 0], triplets[:, 1]])
    second = np.concatenate([triplets[:, 1], triplets[:, 2], triplets[:, 2]])
    xa = tp.take(points, first, axis=0)
    xb = tp.take(points, second, axis=0)

    d = tp.transpose(tp.reshape(geom.dist(xa, xb), (3, m)), (1, 0))  # (m, 3)

    if similarities is None:
        sign = 1.0 if cfg.literal_sign else -1.0
        w = tp.softmax(tp.mul(d, sign / cfg.tau), axis=-1)
    else:
        similarities = np.asarray(similarities, dtype=float)
        s = np.stack(
            [
                similarities[triplets[:, 0], triplets[:, 1]],
                similarities[triplets[:, 0], triplets[:, 2]],
                similarities[triplets[:, 1], triplets[:, 2]],
            ],
            axis=1,
        )
        sums = s.sum(axis=1, keepdims=True)
        sums[sums == 0.0] = 1.0
        w = s / sums

    t = _golden_min_t(tp.value(xa), tp.value(xb), geom, lca_tol)
    depths = geom.dist_to_origin(geom.geodesic(xa, xb, t))
    d_lca = tp.transpose(tp.reshape(depths, (3, m)), (1, 0))  # (m, 3)
    wl = tp.softmax(tp.mul(d_lca, 1.0 / cfg.tau), axis=-1)

    w_ijk = tp.vsum(tp.mul(w, wl), axis=-1)
    w_sum = tp.vsum(w, axis=-1)
    return tp.vsum(tp.sub(w_sum, w_ijk)) + 2.0 * tp.vsum(w)


def decode_tree(points, labels, geom=None):
    """Bottom-up merge tree over per-label mean embeddings.

    Per label, embeddings are averaged in the tangent space and the mean is
    radially pushed to the safe-ball radius; clusters are then repeatedly
    merged by minimum distance between representatives, the merged
    representative being the tangent-space mean of all member leaves.
    """
    if geom is None:
        geom = geometry.hyperbolic(1.0)
    points = np.asarray(tp.value(points), dtype=float)
    labels = list(labels)
    if len(labels) != points.shape[0] or points.shape[0] < 2:
        raise ValueError("need >= 2 labeled points")
    uniq = sorted(set(labels), key=str)
    if len(uniq) < 2:
        raise ValueError("need at least 2 distinct labels")

    radius = geom.boundary_radius()
    reps, members, nodes = [], [], []
    for lab in uniq:
        idx = [i for i, x in enumerate(labels) if x == lab]
        mean_t = geom.decode(points[idx]).mean(axis=0)
        leaf_rep = geom.encode(mean_t)
        if radius is not None:
            nrm = np.linalg.norm(leaf_rep)
            leaf_rep = leaf_rep * (radius / nrm) if nrm > 0 else leaf_rep
        reps.append(leaf_rep)
        members.append([geom.decode(leaf_rep)])
        nodes.append(ClusterTree.leaf(lab))

    active = list(range(len(uniq)))
    while len(active) > 1:
        best = None
        for ai in range(len(active)):
            for bi in range(ai + 1, len(active)):
                i, j = active[ai], active[bi]
                dij = float(geom.dist(reps[i], reps[j]))
                if best is None or dij < best[0] - 1e-15:
                    best = (dij, ai, bi)
        _, ai, bi = best
        i, j = active[ai], active[bi]
        merged_members = members[i] + members[j]
        reps.append(geom.encode(np.mean(merged_members, axis=0)))
        members.append(merged_members)
        nodes.append(ClusterTree.merge(nodes[i], nodes[j]))
        active = [a for a in active if a not in (i, j)] + [len(nodes) - 1]
    return nodes[active[0]]


def _leaf_paths(tree):
    """Map leaf label -> tuple of node ids from root to the leaf."""
    paths = {}

    def walk(node, prefix):
        if node.is_leaf:
            paths[node.label] = prefix
            return
        walk(node.children[0], prefix + ((id(node), 0),))
        walk(node.children[1], prefix + ((id(node), 1),))

    walk(tree, ())
    return paths


def tree_hop_distance(tree):
    """Hop counts (unit edge weights) between all leaf pairs."""
    paths = _leaf_paths(tree)
    labels = list(paths)
    out = {}
    for i, la in enumerate(labels):
        for lb in labels[i + 1 :]:
            pa, pb = paths[la], paths[lb]
            common = 0
            for x, y in zip(pa, pb):
                if x != y:
                    break
                common += 1
            # one (node, side) entry per edge; hops = edges past the lca
            out[frozenset([la, lb])] = (len(pa) - common) + (len(pb) - common)
    return out


def distortion(tree, classes):
    """Ratio of same-class to different-class leaf path lengths.

    ``classes`` maps each leaf label to its class; lower means the tree
    matches the labeling better.
    """
    leaves = _validate_tree(tree)
    present = {classes[lab] for lab in leaves}
    if len(present) < 2:
        raise ValueError("distortion needs at least 2 classes among the leaves")
    hops = tree_hop_distance(tree)
    same = diff = 0.0
    for pair, s in hops.items():
        la, lb = tuple(pair)
        if classes[la] == classes[lb]:
            same += s
        else:
            diff += s
    return same / diff


def distance_constraint(points, class_ids, geom=None):
    """Sum of pairwise distances over same-class unordered pairs."""
    if geom is None:
        geom = geometry.hyperbolic(1.0)
    class_ids = np.asarray(class_ids)
    n = tp.value(points).shape[0]
    ii, jj = np.triu_indices(n, k=1)
    mask = class_ids[ii] == class_ids[jj]
    if not mask.any():
        return tp.mul(tp.vsum(points), 0.0) if isinstance(points, tp.Var) else 0.0
    d = geom.dist(tp.take(points, ii[mask], axis=0), tp.take(points, jj[mask], axis=0))
    return tp.vsum(d)


# -- export -------------------------------------------------------------


def _quote(label):
    return "'" + str(label).replace("'", "''") + "'"


def tree_to_newick(tree):
    """Newick text, labels quoted, no branch lengths."""

    def walk(node):
        if node.is_leaf:
            return _quote(node.label)
        return "(" + walk(node.children[0]) + "," + walk(node.children[1]) + ")"

    return walk(tree) + ";"


def tree_to_json(tree, groups=None):
    """JSON form: node ids, children, per-leaf label (and group if given)."""
    counter = {"next": 0}

    def walk(node):
        nid = counter["next"]
        counter["next"] += 1
        if node.is_leaf:
            doc = {"id": nid, "label": node.label}
            if groups is not None:
                doc["group"] = groups.get(node.label)
            return doc
        return {
            "id": nid,
            "children": [walk(node.children[0]), walk(node.children[1])],
        }

    return walk(tree)


def tree_from_json(doc):
    if "children" in doc:
        kids = doc["children"]
        return ClusterTree.merge(tree_from_json(kids[0]), tree_from_json(kids[1]))
    return ClusterTree.leaf(doc["label"])


def dump_tree_json(tree, path, groups=None):
    with open(path, "w") as f:
        json.dump(tree_to_json(tree, groups=groups), f, sort_keys=True, indent=2)
        f.write("\n")
