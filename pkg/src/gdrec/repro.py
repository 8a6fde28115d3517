"""End-to-end acceptance checks on closed-form oracles and synthetic worlds.

Each ``check_*`` function returns a :class:`CheckResult`. Oracles here are
coded independently of the library paths they verify (different algebra,
brute force, or forward simulation).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import dnadecode as dd
from . import recognet as rn
from .datasyn import make_world
from .embedspace import (
    EmbeddingMatrix,
    insert_predicted_row,
    kmeans_purity,
    metric_distances,
    zero_shot_classify,
)
from .errors import SaturationError
from .evalkit import classification_metrics, roc_auc_ovr
from .gendist import ModelTag, bootstrap_se, jc69, jc69_delta_se, k2p, tn93
from .neuralcore import (
    LSTM,
    Concat,
    Conv2D,
    Dense,
    ECABlock,
    GlobalAvgPool,
    ReLU,
    SEBlock,
    Sequential,
    Sigmoid,
    Softmax,
    grad_check,
    make_rng,
)
from .phylo import PhyloTree, neighbor_joining, patristic_matrix
from .seqio import AlignedSet


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0
    limit: float | None = None

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.metrics.items())
        return f"[{status}] {self.number:2d} {self.name} ({self.seconds:.1f}s) {shown}"

    def to_dict(self) -> dict:
        return {"number": self.number, "name": self.name, "passed": self.passed,
                "metrics": _jsonable(self.metrics), "seconds": self.seconds, "limit": self.limit}


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


@dataclass(frozen=True)
class AcceptanceConfig:
    """Training budget for the synthetic-world checks."""

    world_seed: int = 0
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    lr: float = 1e-3
    branch_epochs: int = 60
    fusion_epochs: int = 300
    decoder_epochs: int = 800
    decoder_lr: float = 1e-2
    decoder_noise: float = 0.05
    short_length: int = 4


def _timed(number, name, limit, fn: Callable[[], tuple[bool, dict]]) -> CheckResult:
    t0 = time.perf_counter()
    passed, metrics = fn()
    dt = time.perf_counter() - t0
    if limit is not None and dt > limit:
        metrics["over_time_limit"] = True
        passed = False
    return CheckResult(number, name, bool(passed), metrics, dt, limit)


# --- 1: distance oracles ----------------------------------------------------

def _oracle_jc69(p):
    # inverse of p(d) = 3/4 (1 - exp(-4d/3))
    return -0.75 * np.log1p(-4.0 * p / 3.0)


def _oracle_k2p(P, Q):
    # transition and transversion rate components summed
    s = -0.5 * np.log(1 - 2 * P - Q) + 0.25 * np.log(1 - 2 * Q)
    v = -0.5 * np.log(1 - 2 * Q)
    return s + v


def _oracle_tn93(P1, P2, Q, pi):
    # rate-parameter form: purine/pyrimidine transition and transversion components
    pa, pc, pg, pt = pi
    pr, py = pa + pg, pc + pt
    a1 = -np.log(1 - pr * P1 / (2 * pa * pg) - Q / (2 * pr))
    a2 = -np.log(1 - py * P2 / (2 * pc * pt) - Q / (2 * py))
    b = -np.log(1 - Q / (2 * pr * py))
    return (2 * pa * pg / pr * (a1 - py * b) + 2 * pc * pt / py * (a2 - pr * b)
            + 2 * pr * py * b)


def _tn93_expected(d, pi, k1, k2):
    """Expected (P1, P2, Q) after distance ``d`` under a TN93 rate matrix."""
    from scipy.linalg import expm

    pa, pc, pg, pt = pi
    R = np.zeros((4, 4))
    R[0, 2] = R[2, 0] = k1
    R[1, 3] = R[3, 1] = k2
    for i in (0, 2):
        for j in (1, 3):
            R[i, j] = R[j, i] = 1.0
    Qm = R * np.asarray(pi)[None, :]
    np.fill_diagonal(Qm, -Qm.sum(axis=1))
    rate = -np.dot(pi, np.diag(Qm))
    Pt = expm(Qm * d / rate)
    F = np.asarray(pi)[:, None] * Pt
    P1 = F[0, 2] + F[2, 0]
    P2 = F[1, 3] + F[3, 1]
    Qv = F[[0, 0, 2, 2, 1, 1, 3, 3], [1, 3, 1, 3, 0, 2, 0, 2]].sum()
    return P1, P2, Qv


def check_distance_oracles(n_tuples: int = 1000, seed: int = 0) -> CheckResult:
    def run():
        rng = make_rng(seed)
        worst = 0.0
        n_ok = 0
        for _ in range(n_tuples):
            n = int(rng.integers(50, 2000))
            cnt = rng.multinomial(n, rng.dirichlet([8, 1, 1, 2]))
            same, ag, ct, tv = cnt
            pi = rng.dirichlet([4, 4, 4, 4])
            P1, P2, Q = ag / n, ct / n, tv / n
            p = (ag + ct + tv) / n
            pairs = [(jc69, (p,), _oracle_jc69, (p,)),
                     (k2p, (P1 + P2, Q), _oracle_k2p, (P1 + P2, Q)),
                     (tn93, (P1, P2, Q, tuple(pi)), _oracle_tn93, (P1, P2, Q, pi))]
            for lib, largs, ora, oargs in pairs:
                try:
                    a = lib(*largs)
                except SaturationError:
                    with np.errstate(all="ignore"):
                        b = ora(*oargs)
                    if np.isfinite(b):
                        return False, {"saturation_mismatch": True}
                    continue
                b = float(ora(*oargs))
                worst = max(worst, abs(a - b))
                n_ok += 1
        roundtrip = 0.0
        for _ in range(20):
            pi = rng.dirichlet([5, 5, 5, 5])
            d = float(rng.uniform(0.01, 0.8))
            P1, P2, Q = _tn93_expected(d, pi, rng.uniform(1, 6), rng.uniform(1, 6))
            roundtrip = max(roundtrip, abs(tn93(P1, P2, Q, tuple(pi)) - d))
        jc_point = jc69(0.1)
        ok = worst <= 1e-9 and roundtrip <= 1e-9 and abs(jc_point - 0.107326) <= 1e-6
        return ok, {"max_abs_diff": worst, "evaluated": n_ok, "tn93_roundtrip": roundtrip,
                    "jc69(0.1)": jc_point}

    return _timed(1, "distance oracles", 5.0, run)


# --- 2: NJ exactness --------------------------------------------------------

def random_additive_tree(n_leaves: int, rng) -> PhyloTree:
    """Random unrooted binary tree by repeated edge subdivision."""
    labels = tuple(f"t{i}" for i in range(n_leaves))
    edges = {(0, 1): rng.uniform(0.01, 1.0)}
    next_internal = n_leaves
    for leaf in range(2, n_leaves):
        keys = sorted(edges)
        u, v = keys[int(rng.integers(len(keys)))]
        length = edges.pop((u, v))
        w = next_internal
        next_internal += 1
        cut = rng.uniform(0.1, 0.9)
        edges[(u, w)] = length * cut
        edges[(w, v)] = length * (1 - cut)
        edges[(leaf, w)] = rng.uniform(0.01, 1.0)
    return PhyloTree(labels, [(u, v, float(x)) for (u, v), x in edges.items()])


def check_nj_exactness(n_trees: int = 100, seed: int = 0) -> CheckResult:
    def run():
        rng = make_rng(seed)
        worst, topo_ok = 0.0, 0
        for _ in range(n_trees):
            tree = random_additive_tree(int(rng.integers(4, 13)), rng)
            dm = patristic_matrix(tree)
            nj = neighbor_joining(dm)
            topo_ok += nj.splits() == tree.splits()
            worst = max(worst, float(np.abs(patristic_matrix(nj).values - dm.values).max()))
        return topo_ok == n_trees and worst <= 1e-9, {"topologies_recovered": topo_ok,
                                                      "max_patristic_err": worst}

    return _timed(2, "NJ exactness", 10.0, run)


# --- 3: gradient checks -----------------------------------------------------

def gradient_check_cases(seed: int = 0) -> dict:
    """Small instances of every layer kind plus the two composed graphs."""
    rng = make_rng(seed)
    away = lambda shape: rng.uniform(0.2, 1.0, shape) * rng.choice([-1, 1], shape)  # noqa: E731
    cases = {
        "DENSE": (Dense(4, 3, rng), rng.standard_normal((2, 4))),
        "RELU": (ReLU(), away((3, 5))),
        "SIGMOID": (Sigmoid(), rng.standard_normal((3, 4))),
        "SOFTMAX": (Softmax(), rng.standard_normal((3, 4))),
        "GLOBAL_AVG_POOL": (GlobalAvgPool(), rng.standard_normal((2, 3, 2, 2))),
        "CONCAT": (Concat(), (rng.standard_normal((2, 3)), rng.standard_normal((2, 2)))),
        "CONV2D": (Conv2D(2, 3, 3, rng), rng.standard_normal((2, 2, 4, 4))),
        "SE_BLOCK": (SEBlock(8, 2, rng), rng.standard_normal((2, 8))),
        "SE_BLOCK_SPATIAL": (SEBlock(4, 2, rng), rng.standard_normal((2, 4, 2, 2))),
        "ECA_BLOCK": (ECABlock(6, 3, rng), rng.standard_normal((2, 6))),
        "LSTM": (LSTM(3, 4, rng), rng.standard_normal((2, 3, 3))),
        "LSTM_STATEFUL": (LSTM(2, 3, rng), (rng.standard_normal((2, 3, 2)),
                                             rng.standard_normal((2, 3)), rng.standard_normal((2, 3)))),
        "SEQUENTIAL": (Sequential([Dense(5, 4, rng), Sigmoid(), Dense(4, 2, rng)]),
                       rng.standard_normal((3, 5))),
    }
    # composed three-branch + fusion graph; sigmoid bodies keep it smooth
    bodies = [Sequential([Dense(3, 4, rng), Sigmoid()]) for _ in range(3)]
    net = rn.FusionNet(bodies, rn.build_fusion(4, 3, 5, seed=seed))
    cases["FUSION_GRAPH"] = (net, tuple(rng.standard_normal((2, 3)) for _ in range(3)))
    s2s = dd.Seq2Seq(dd.DecoderConfig(hidden=4, embed=3), seed=seed)
    s2s.in_mean, s2s.in_scale = 0.2, 0.5
    tin = np.array([[dd.START, 0, 2, 3], [dd.START, 1, 1, 5]])
    cases["ENCODER_DECODER"] = (s2s, (rng.uniform(0, 1, (2, 3)), tin))
    return cases


def check_gradients(tol: float = 1e-4, seed: int = 0) -> CheckResult:
    def run():
        errs = {name: grad_check(frag, inp, seed=seed) for name, (frag, inp) in
                gradient_check_cases(seed).items()}
        worst = max(errs.values())
        return worst <= tol, {"max_rel_err": worst, "worst_case": max(errs, key=errs.get)}

    return _timed(3, "gradient checks", 60.0, run)


# --- synthetic world experiments ------------------------------------------

class WorldRun:
    """Trains and caches the models shared by several checks."""

    def __init__(self, config: AcceptanceConfig = AcceptanceConfig()):
        self.config = config
        self._cache = {}

    def _fit(self, seed, n_holdout, length, head=rn.HeadKind.MSE_SUM):
        key = (seed, n_holdout, length, head)
        if key in self._cache:
            return self._cache[key]
        c = self.config
        world = make_world(seed=seed, n_holdout=n_holdout)
        train, test, unseen = world.split(seed=seed)
        full = EmbeddingMatrix.from_distance_matrix(world.true_dm)
        if length < len(world.species):
            pick = make_rng([seed, 19]).choice(len(world.species), size=length, replace=False)
            full = full.columns([world.species[i] for i in sorted(pick)])
        targets = full.rows(world.seen)
        views = [v[train] for v in world.features.views]
        labels = world.features.labels[train]
        base_key = (seed, n_holdout, length, rn.HeadKind.MSE_SUM)
        if head is rn.HeadKind.MSE_SUM:
            model = rn.new_model(world.seen, targets, rn.HeadVariant(head, full.length), seed=seed)
            rn.fit_model(model, views, labels, c.branch_epochs, c.fusion_epochs, lr=c.lr, seed=seed)
        else:
            base = self._fit(*base_key)["model"]
            model = rn.with_head(base, rn.HeadVariant(head, full.length), seed=seed)
            rn.train_fusion(model, views, labels, c.fusion_epochs, lr=c.lr, seed=seed)
        out = {"world": world, "train": train, "test": test, "unseen": unseen,
               "full": full, "targets": targets, "model": model}
        self._cache[key] = out
        return out

    def default(self, head=rn.HeadKind.MSE_SUM):
        return self._fit(self.config.world_seed, 0, 12, head)

    def fit(self, seed, n_holdout=0, length=12, head=rn.HeadKind.MSE_SUM):
        return self._fit(seed, n_holdout, length, head)


def _views(run, idx):
    return [v[idx] for v in run["world"].features.views]


def _accuracy(pred, truth) -> float:
    return float(np.mean([a == b for a, b in zip(pred, truth)]))


def _eval_fusion(run):
    test = run["test"]
    truth = list(run["world"].features.labels[test])
    model = run["model"]
    pred = rn.classify_samples(model, _views(run, test))
    emb = rn.predict_embedding(model, _views(run, test))
    rows = np.vstack([run["full"].row(lab) for lab in truth])
    rmse = float(np.sqrt(np.mean((emb - rows) ** 2)))
    return _accuracy(pred, truth), rmse


def check_end_to_end(wr: WorldRun) -> CheckResult:
    def run():
        acc, rmse = _eval_fusion(wr.default())
        return rmse <= 0.05 and acc >= 0.90, {"test_rmse": rmse, "accuracy": acc}

    return _timed(4, "end-to-end regression (MSE_SUM)", 300.0, run)


def check_head_tradeoff(wr: WorldRun) -> CheckResult:
    def run():
        acc_m, rmse_m = _eval_fusion(wr.default(rn.HeadKind.MSE_SUM))
        acc_n, rmse_n = _eval_fusion(wr.default(rn.HeadKind.SOFTMAX_NEG1))
        ok = acc_n >= acc_m and rmse_n >= 2 * rmse_m
        return ok, {"acc_mse_sum": acc_m, "acc_softmax_neg1": acc_n,
                    "rmse_mse_sum": rmse_m, "rmse_softmax_neg1": rmse_n}

    return _timed(5, "head trade-off", None, run)


def check_fusion_benefit(wr: WorldRun) -> CheckResult:
    def run():
        r = wr.default()
        test = r["test"]
        truth = list(r["world"].features.labels[test])
        views = _views(r, test)
        fusion = _accuracy(rn.classify_samples(r["model"], views), truth)
        singles = [_accuracy(rn.classify_samples(r["model"], views, "SINGLE_BRANCH", branch=i), truth)
                   for i in range(3)]
        avg = _accuracy(rn.classify_samples(r["model"], views, "AVG_ENSEMBLE"), truth)
        ok = fusion >= max(singles) + 0.02 and fusion >= avg
        return ok, {"fusion": fusion, "single": singles, "avg_ensemble": avg}

    return _timed(6, "fusion benefit", None, run)


def check_embedding_length(wr: WorldRun) -> CheckResult:
    def run():
        short, full = [], []
        for seed in wr.config.seeds:
            for L, store in ((wr.config.short_length, short), (12, full)):
                acc, _ = _eval_fusion(wr.fit(seed, 0, L))
                store.append(acc)
        ms, mf = float(np.median(short)), float(np.median(full))
        return ms < mf, {"median_acc_short": ms, "median_acc_full": mf,
                         "acc_short": short, "acc_full": full}

    return _timed(7, "embedding length effect", None, run)


def check_zero_shot(wr: WorldRun) -> CheckResult:
    def run():
        zsl, best_auc, aucs = [], [], []
        for seed in wr.config.seeds:
            r = wr.fit(seed, 2, 12)
            world, full = r["world"], r["full"]
            seen_m, unseen_m = full.rows(world.seen), full.rows(world.holdout)
            labels = world.features.labels
            pred_u = rn.predict_embedding(r["model"], _views(r, r["unseen"]))
            truth_u = list(labels[r["unseen"]])
            zsl.append(_accuracy([zero_shot_classify(p, seen_m, unseen_m, "ZSL") for p in pred_u],
                                 truth_u))
            idx = np.concatenate([r["test"], r["unseen"]])
            emb = rn.predict_embedding(r["model"], _views(r, idx))
            scores = -np.vstack([metric_distances(e, full.values, "COSINE") for e in emb])
            rep = roc_auc_ovr(list(labels[idx]), scores, full.row_labels)
            per = [rep.per_class[h] for h in world.holdout]
            aucs.append(per)
            best_auc.append(max(per))
        med = float(np.median(zsl))
        ok = med >= 0.75 and min(best_auc) >= 0.8
        return ok, {"zsl_median": med, "zsl": zsl, "unseen_auc": aucs}

    return _timed(8, "zero-shot (ZSL/GZSL)", None, run)


def check_joint_tree(n_trees: int = 20, seed: int = 0) -> CheckResult:
    def run():
        rng = make_rng([seed, 23])
        worst = 0.0
        for _ in range(n_trees):
            tree = random_additive_tree(6, rng)
            truth = patristic_matrix(tree)
            q = truth.labels[int(rng.integers(6))]
            rest = [lab for lab in truth.labels if lab != q]
            species = truth.subset(rest)
            row = np.array([truth.get(q, lab) for lab in rest])
            joint = insert_predicted_row(species, row, rest, q)
            got = patristic_matrix(neighbor_joining(joint)).subset(truth.labels)
            worst = max(worst, float(np.abs(got.values - truth.values).max()))
        return worst <= 1e-9, {"max_err": worst, "trees": n_trees}

    return _timed(9, "joint tree insertion", None, run)


def check_dna_decoding(wr: WorldRun) -> CheckResult:
    def run():
        c = wr.config
        r = wr.default()
        world, full = r["world"], r["full"]
        seqs = dict(zip(world.sequences.labels, world.sequences.sequences))
        pairs = [(full.row(s), seqs[s]) for s in world.species]
        cfg = dd.DecoderConfig(noise_std=c.decoder_noise)
        dec, _ = dd.train_decoder(pairs, cfg, epochs=c.decoder_epochs, lr=c.decoder_lr,
                                  seed=c.world_seed)
        regions = dd.RegionSpec()
        train_acc = dd.pooled_accuracy(dd.decode_batch(dec, [p[0] for p in pairs]),
                                       [p[1] for p in pairs], regions)
        test = r["test"]
        truth = list(world.features.labels[test])
        emb = rn.predict_embedding(r["model"], _views(r, test))
        held = dd.pooled_accuracy(dd.decode_batch(dec, emb), [seqs[t] for t in truth], regions)
        n_nc = len(regions.positions("nonconserved")) * len(truth)
        floor = dd.random_floor(n_nc)
        ok = (train_acc.overall >= 0.95 and held.overall >= 0.75
              and held.regions["conserved"] >= held.regions["nonconserved"]
              and held.regions["nonconserved"] > floor)
        return ok, {"train_acc": train_acc.overall, "heldout_acc": held.overall,
                    "conserved": held.regions["conserved"],
                    "nonconserved": held.regions["nonconserved"], "floor": floor}

    return _timed(10, "DNA decoding", 600.0, run)


def jc_pair(n_sites: int, p_sub: float, seed: int) -> AlignedSet:
    """Two sequences differing by JC substitutions at rate ``p_sub`` per site."""
    rng = make_rng(seed)
    a = rng.integers(0, 4, n_sites)
    hit = rng.random(n_sites) < p_sub
    b = a.copy()
    b[hit] = (a[hit] + rng.integers(1, 4, int(hit.sum()))) % 4
    to_str = lambda x: "".join("ACGT"[i] for i in x)  # noqa: E731
    return AlignedSet(("x", "y"), (to_str(a), to_str(b)))


def check_bootstrap(seed: int = 0) -> CheckResult:
    def run():
        aln = jc_pair(1000, 0.2, seed)
        res = bootstrap_se(aln, ModelTag.JC69, B=100, seed=seed)
        again = bootstrap_se(aln, ModelTag.JC69, B=100, seed=seed)
        p = sum(x != y for x, y in zip(*aln.sequences)) / aln.length
        analytic = jc69_delta_se(p, aln.length)
        boot = float(res.matrix.stderr[0, 1])
        rel = abs(boot - analytic) / analytic
        identical = bool(np.array_equal(res.replicates, again.replicates, equal_nan=True)
                         and np.array_equal(res.matrix.stderr, again.matrix.stderr))
        return rel <= 0.2 and identical, {"bootstrap_se": boot, "delta_se": analytic,
                                          "rel_diff": rel, "bit_identical": identical}

    return _timed(11, "bootstrap SE", None, run)


def _pair_count_auc(scores, pos):
    wins = 0.0
    for s_p in scores[pos]:
        for s_n in scores[~pos]:
            wins += 1.0 if s_p > s_n else 0.5 if s_p == s_n else 0.0
    return wins / (pos.sum() * (~pos).sum())


def check_metric_oracles(n_instances: int = 100, seed: int = 0) -> CheckResult:
    def run():
        rng = make_rng([seed, 29])
        auc_ok = acc_ok = 0
        for _ in range(n_instances):
            k = int(rng.integers(2, 5))
            n = int(rng.integers(k + 2, 25))
            classes = [f"c{i}" for i in range(k)]
            y = [classes[i] for i in rng.integers(0, k, n)]
            scores = rng.integers(0, 5, (n, k)).astype(float)  # coarse grid forces ties
            rep = roc_auc_ovr(y, scores, classes)
            good = True
            for j, c in enumerate(classes):
                pos = np.array([lab == c for lab in y])
                if pos.all() or not pos.any():
                    good &= c in rep.skipped
                    continue
                good &= rep.per_class[c] == _pair_count_auc(scores[:, j], pos)
            auc_ok += good
            pred = [classes[i] for i in rng.integers(0, k, n)]
            cm = np.zeros((k, k), dtype=int)
            for t, p in zip(y, pred):
                cm[classes.index(t), classes.index(p)] += 1
            acc_ok += classification_metrics(y, pred, classes).accuracy == np.trace(cm) / n
        centers = np.array([[0, 0], [10, 0], [0, 10], [10, 10], [5, 20]], dtype=float)
        lab = np.repeat(np.arange(5), 20)
        pts = centers[lab] + make_rng([seed, 31]).normal(0, 0.5, (100, 2))
        purity = kmeans_purity(pts, lab, 5, seed=seed).purity
        ok = auc_ok == n_instances and acc_ok == n_instances and purity == 1.0
        return ok, {"auc_exact": auc_ok, "accuracy_exact": acc_ok, "kmeans_purity": purity}

    return _timed(12, "metric oracles", None, run)


def run_all(config: AcceptanceConfig = AcceptanceConfig(), log=None) -> list[CheckResult]:
    """Run all twelve checks in order; ``log`` receives each result line."""
    wr = WorldRun(config)
    checks = [
        check_distance_oracles,
        check_nj_exactness,
        check_gradients,
        lambda: check_end_to_end(wr),
        lambda: check_head_tradeoff(wr),
        lambda: check_fusion_benefit(wr),
        lambda: check_embedding_length(wr),
        lambda: check_zero_shot(wr),
        check_joint_tree,
        lambda: check_dna_decoding(wr),
        check_bootstrap,
        check_metric_oracles,
    ]
    out = []
    for fn in checks:
        res = fn()
        out.append(res)
        if log is not None:
            log(res.line())
    return out
