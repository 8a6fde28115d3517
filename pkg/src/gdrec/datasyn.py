"""Synthetic ground-truth worlds for desk-scale verification.

A world is a random Yule phylogeny, sequences evolved along it, the true
(patristic) distance matrix, and three feature "views" per specimen whose
prototypes are a classical-MDS embedding of the true distances.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .gendist import DistanceMatrix, read_distance_csv, write_distance_csv
from .neuralcore import make_rng
from .phylo import PhyloTree, patristic_matrix, read_newick, to_newick
from .seqio import AlignedSet, read_fasta, write_fasta

BASES = "ACGT"
# transition partner of each base index (A<->G, C<->T)
_TRANSITION = np.array([2, 3, 0, 1])


def gen_phylogeny(n_species: int, seed: int, scale: float = 0.05) -> PhyloTree:
    """Yule pure-birth topology with i.i.d. exponential branch lengths.

    Leaves are labelled ``S1..Sn``. The root is the highest-numbered node and
    has degree two, so the tree can be rooted again for simulation.
    """
    if n_species < 2:
        raise ValueError("need at least two species")
    rng = make_rng(seed)
    if n_species == 2:
        return PhyloTree(("S1", "S2"), [(0, 1, float(rng.exponential(scale)))])
    # provisional ids; node 0 is the root, open lineages await splitting
    children: dict[int, list[int]] = {0: [1, 2]}
    open_ = [1, 2]
    nxt = 3
    while len(open_) < n_species:
        k = open_.pop(int(rng.integers(len(open_))))
        children[k] = [nxt, nxt + 1]
        open_.extend([nxt, nxt + 1])
        nxt += 2
    leaves = sorted(open_)
    internal = sorted(k for k in children if k != 0)
    ids = {k: i for i, k in enumerate(leaves)}
    for j, k in enumerate(internal):
        ids[k] = n_species + j
    ids[0] = n_species + len(internal)
    edges = []
    for k in sorted(children):
        for ch in children[k]:
            edges.append((ids[k], ids[ch], float(rng.exponential(scale))))
    labels = tuple(f"S{i + 1}" for i in range(n_species))
    return PhyloTree(labels, edges)


def site_rates(length: int, conserved: tuple[int, int] | None = (9, 124),
               multiplier: float = 0.1) -> np.ndarray:
    """Per-site relative rates with mean 1.

    ``conserved`` is a 1-based inclusive span evolving ``multiplier`` times
    slower than the remaining sites.
    """
    rates = np.ones(length)
    if conserved is not None:
        lo, hi = conserved
        rates[max(lo - 1, 0):min(hi, length)] = multiplier
    return rates * length / rates.sum()


def evolve_sequences(
    tree: PhyloTree,
    length: int = 157,
    seed: int = 0,
    conserved: tuple[int, int] | None = (9, 124),
    conserved_multiplier: float = 0.1,
    kappa: float = 1.0,
    root: int | None = None,
    root_seq: str | None = None,
) -> AlignedSet:
    """Simulate substitutions down the tree.

    Each site receives ``Poisson(branch_length * rate)`` substitution
    events per branch; an event is a transition with probability
    ``kappa / (kappa + 2)`` and otherwise one of the two transversions.
    ``kappa=1`` gives Jukes-Cantor. Rates average to one, so branch
    lengths are expected substitutions per site.
    """
    rng = make_rng(seed)
    rates = site_rates(length, conserved, conserved_multiplier)
    if root_seq is None:
        state = rng.integers(0, 4, size=length)
    else:
        if len(root_seq) != length:
            raise ValueError("root sequence length mismatch")
        state = np.array([BASES.index(ch) for ch in root_seq.upper()])
    root = tree.n_nodes - 1 if root is None else root
    adj = tree.adjacency()
    p_ts = kappa / (kappa + 2.0)
    seqs = {root: state}
    stack = [(root, None)]
    while stack:
        u, parent = stack.pop()
        for v, blen in sorted(adj[u], reverse=True):
            if v == parent:
                continue
            s = seqs[u].copy()
            events = rng.poisson(blen * rates)
            for step in range(int(events.max()) if events.size else 0):
                sites = np.flatnonzero(events > step)
                ts = rng.random(len(sites)) < p_ts
                tv_pick = rng.integers(0, 2, size=len(sites))
                cur = s[sites]
                # transversion partners: purine -> C/T, pyrimidine -> A/G
                tv = np.where(cur % 2 == 0, 1 + 2 * tv_pick, 2 * tv_pick)
                s[sites] = np.where(ts, _TRANSITION[cur], tv)
            seqs[v] = s
            stack.append((v, u))
    n = tree.n_leaves
    out = tuple("".join(BASES[b] for b in seqs[i]) for i in range(n))
    return AlignedSet(tree.labels, out)


def classical_mds(dm: DistanceMatrix, dims: int | None = None) -> np.ndarray:
    """Torgerson MDS coordinates of a distance matrix (positive spectrum only)."""
    d = dm.values
    n = len(d)
    J = np.eye(n) - np.ones((n, n)) / n
    B = -0.5 * J @ (d * d) @ J
    w, V = np.linalg.eigh(B)
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    keep = w > 1e-12 * max(1.0, w[0])
    if dims is not None:
        keep &= np.arange(n) < dims
    X = V[:, keep] * np.sqrt(w[keep])
    # deterministic sign: largest-magnitude loading positive
    for k in range(X.shape[1]):
        if X[np.argmax(np.abs(X[:, k])), k] < 0:
            X[:, k] *= -1
    return X


@dataclass(eq=False)
class FeatureSet:
    labels: np.ndarray  # (n_samples,) species labels
    views: list  # n_views arrays of shape (n_samples, dim)
    prototypes: np.ndarray  # (n_views, n_species, dim)
    species: tuple[str, ...]
    sigma: float

    @property
    def n_samples(self) -> int:
        return len(self.labels)

    def take(self, idx) -> "FeatureSet":
        idx = np.asarray(idx, dtype=int)
        return FeatureSet(self.labels[idx], [v[idx] for v in self.views],
                          self.prototypes, self.species, self.sigma)


def gen_features(
    true_dm: DistanceMatrix,
    dim: int = 32,
    sigma: float = 0.1,
    samples_per_species: int = 30,
    seed: int = 0,
    n_views: int = 3,
    complementary: bool = True,
    leak: float = 0.0,
    separation: float = 1.0,
) -> FeatureSet:
    """Labelled multi-view feature vectors carrying genetic-distance geometry.

    Prototype coordinates come from classical MDS of ``true_dm`` rescaled so
    the closest pair of prototypes is ``separation`` apart. With
    ``complementary`` each view sees every ``n_views``-th MDS axis at full
    strength and the others scaled by ``leak``; each view then applies its
    own random orthogonal map. Samples add isotropic noise ``sigma``.
    """
    if dim < 2:
        raise ValueError("feature dimension must be >= 2")
    rng = make_rng(seed)
    X = classical_mds(true_dm, dims=dim)
    pd = np.sqrt(((X[:, None] - X[None]) ** 2).sum(-1))
    closest = pd[np.triu_indices(len(X), 1)].min() if len(X) > 1 else 0.0
    if closest > 0:
        X = X * (separation / closest)
    n_sp, k = X.shape
    base = np.zeros((n_sp, dim))
    base[:, :k] = X
    protos = np.empty((n_views, n_sp, dim))
    for v in range(n_views):
        weights = np.ones(dim)
        if complementary:
            weights = np.where(np.arange(dim) % n_views == v, 1.0, leak)
        Q, R = np.linalg.qr(rng.standard_normal((dim, dim)))
        Q = Q * np.sign(np.diag(R))
        protos[v] = (base * weights) @ Q.T
    labels = np.repeat(np.array(true_dm.labels, dtype=object), samples_per_species)
    sp_idx = np.repeat(np.arange(n_sp), samples_per_species)
    views = [protos[v][sp_idx] + sigma * rng.standard_normal((len(sp_idx), dim))
             for v in range(n_views)]
    return FeatureSet(labels, views, protos, true_dm.labels, sigma)


def as_toy_images(features: np.ndarray, shape=(2, 4, 4)) -> np.ndarray:
    """Reshape feature vectors into tiny (C, H, W) images for conv branches."""
    features = np.asarray(features)
    if int(np.prod(shape)) != features.shape[-1]:
        raise ValueError(f"cannot reshape width {features.shape[-1]} to {shape}")
    return features.reshape((-1,) + tuple(shape))


@dataclass(eq=False)
class SyntheticWorld:
    tree: PhyloTree
    sequences: AlignedSet
    true_dm: DistanceMatrix
    features: FeatureSet
    holdout: tuple[str, ...]
    params: dict = field(default_factory=dict)

    @property
    def species(self) -> tuple[str, ...]:
        return self.true_dm.labels

    @property
    def seen(self) -> tuple[str, ...]:
        return tuple(s for s in self.species if s not in self.holdout)

    def split(self, test_fraction: float = 1 / 3, seed: int = 0):
        """Per-species train/test split of seen samples; holdout samples apart.

        Returns ``(train_idx, test_idx, unseen_idx)`` index arrays.
        """
        rng = make_rng([seed, 7])
        labels = self.features.labels
        train, test = [], []
        for sp in self.seen:
            idx = np.flatnonzero(labels == sp)
            idx = idx[rng.permutation(len(idx))]
            n_test = int(round(test_fraction * len(idx)))
            test.extend(idx[:n_test])
            train.extend(idx[n_test:])
        unseen = np.flatnonzero(np.isin(labels, list(self.holdout)))
        return np.sort(train), np.sort(test), unseen


def make_world(
    n_species: int = 12,
    n_sites: int = 157,
    samples_per_species: int = 30,
    n_holdout: int = 2,
    seed: int = 0,
    scale: float = 0.05,
    dim: int = 32,
    sigma: float = 0.1,
    complementary: bool = True,
    leak: float = 0.0,
    separation: float = 1.0,
    conserved: tuple[int, int] | None = (9, 124),
    conserved_multiplier: float = 0.1,
    kappa: float = 1.0,
) -> SyntheticWorld:
    """Build a full world; every component derives deterministically from ``seed``."""
    tree = gen_phylogeny(n_species, seed=seed, scale=scale)
    seqs = evolve_sequences(tree, n_sites, seed=seed + 1, conserved=conserved,
                            conserved_multiplier=conserved_multiplier, kappa=kappa)
    true_dm = patristic_matrix(tree)
    feats = gen_features(true_dm, dim=dim, sigma=sigma, samples_per_species=samples_per_species,
                         seed=seed + 2, complementary=complementary, leak=leak,
                         separation=separation)
    rng = make_rng([seed, 3])
    picks = rng.choice(len(true_dm.labels), size=n_holdout, replace=False) if n_holdout else []
    holdout = tuple(true_dm.labels[i] for i in sorted(int(p) for p in picks))
    params = dict(n_species=n_species, n_sites=n_sites, samples_per_species=samples_per_species,
                  n_holdout=n_holdout, seed=seed, scale=scale, dim=dim, sigma=sigma,
                  complementary=complementary, leak=leak, separation=separation,
                  conserved=list(conserved) if conserved else None,
                  conserved_multiplier=conserved_multiplier, kappa=kappa)
    return SyntheticWorld(tree, seqs, true_dm, feats, holdout, params)


# --- serialization ----------------------------------------------------------

def write_features_csv(fs: FeatureSet, path) -> None:
    dim = fs.views[0].shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "sample", "view"] + [f"f{i}" for i in range(dim)])
        for s in range(fs.n_samples):
            for v, arr in enumerate(fs.views):
                w.writerow([fs.labels[s], s, v] + [repr(float(x)) for x in arr[s]])


def read_features_csv(path, species=None, sigma: float = float("nan")) -> FeatureSet:
    rows: dict[int, dict] = {}
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for row in r:
            s, v = int(row[1]), int(row[2])
            rows.setdefault(s, {"label": row[0], "views": {}})["views"][v] = \
                np.array([float(x) for x in row[3:]])
    order = sorted(rows)
    n_views = max(len(rows[s]["views"]) for s in order)
    labels = np.array([rows[s]["label"] for s in order], dtype=object)
    views = [np.vstack([rows[s]["views"][v] for s in order]) for v in range(n_views)]
    if species is None:
        species = tuple(dict.fromkeys(labels.tolist()))
    return FeatureSet(labels, views, np.empty((n_views, 0, views[0].shape[1])), tuple(species), sigma)


def write_world(world: SyntheticWorld, outdir) -> dict[str, str]:
    """Write Newick, FASTA, distance CSV, feature CSV and a JSON header."""
    os.makedirs(outdir, exist_ok=True)
    paths = {
        "tree": os.path.join(outdir, "tree.nwk"),
        "sequences": os.path.join(outdir, "sequences.fasta"),
        "distances": os.path.join(outdir, "true_distances.csv"),
        "features": os.path.join(outdir, "features.csv"),
        "world": os.path.join(outdir, "world.json"),
    }
    with open(paths["tree"], "w") as fh:
        fh.write(to_newick(world.tree, precision=None) + "\n")
    write_fasta(world.sequences, paths["sequences"])
    write_distance_csv(world.true_dm, paths["distances"])
    write_features_csv(world.features, paths["features"])
    with open(paths["world"], "w") as fh:
        json.dump({"holdout": list(world.holdout), "params": world.params,
                   "species": list(world.species)}, fh, indent=2, sort_keys=True)
    return paths


def read_world(indir) -> SyntheticWorld:
    with open(os.path.join(indir, "world.json")) as fh:
        header = json.load(fh)
    tree = read_newick(os.path.join(indir, "tree.nwk"))
    seqs = read_fasta(os.path.join(indir, "sequences.fasta"))
    dm = read_distance_csv(os.path.join(indir, "true_distances.csv"), "PATRISTIC")
    feats = read_features_csv(os.path.join(indir, "features.csv"), tuple(header["species"]),
                              header["params"].get("sigma", float("nan")))
    return SyntheticWorld(tree, seqs, dm, feats, tuple(header["holdout"]), header["params"])
