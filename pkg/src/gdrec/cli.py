"""Command-line pipeline: ``gdrec <subcommand> --config run.json --out DIR``.

Every run writes ``manifest.json`` (config echo, versions, seed, wall time,
artifact list) next to its artifacts. Validation failures exit with 1,
runtime failures with 2; both write ``error.json``, and artifacts from a
failed run are moved to ``DIR/quarantine``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import inspect
import json
import os
import platform
import shutil
import sys
import time
from dataclasses import asdict, fields
from typing import Callable

import numpy as np

from . import __version__
from . import _backend
from . import dnadecode as dd
from . import recognet as rn
from .datasyn import make_world, read_world, write_world
from .embedspace import EmbeddingMatrix, MetricTag, insert_predicted_row, metric_distances, zero_shot_classify
from .errors import ConfigError, GdrecError
from .evalkit import classification_metrics, regression_metrics, roc_auc_ovr
from .gendist import ModelTag, bootstrap_se, complete_deletion_mask, distance_matrix, read_distance_csv
from .phylo import neighbor_joining, patristic_matrix, to_newick
from .seqio import AlignedSet, TrimParams, format_fasta, read_fasta, trim_conserved_blocks

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class Run:
    """Collects artifacts in a staging directory until the run succeeds."""

    def __init__(self, out_dir: str, config: dict):
        self.out_dir = out_dir
        self.config = config
        self.stage = os.path.join(out_dir, ".staging")
        self.artifacts: list[str] = []
        self.summary: dict = {}
        if os.path.exists(self.stage):
            shutil.rmtree(self.stage)
        os.makedirs(self.stage)

    def path(self, name: str) -> str:
        self.artifacts.append(name)
        full = os.path.join(self.stage, name)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        return full

    def write_text(self, name: str, text: str) -> None:
        with open(self.path(name), "w") as fh:
            fh.write(text)

    def write_json(self, name: str, obj) -> None:
        self.write_text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def commit(self) -> None:
        for name in self.artifacts:
            dest = os.path.join(self.out_dir, name)
            os.makedirs(os.path.dirname(dest), exist_ok=True)
            os.replace(os.path.join(self.stage, name), dest)
        shutil.rmtree(self.stage)

    def quarantine(self) -> str:
        dest = os.path.join(self.out_dir, "quarantine")
        if os.path.exists(dest):
            shutil.rmtree(dest)
        os.replace(self.stage, dest)
        return dest


# --- config helpers -------------------------------------------------------

def _require(cfg: dict, key: str, kind=None):
    if key not in cfg:
        raise ConfigError(f"missing config key {key!r}")
    value = cfg[key]
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(f"config key {key!r} must be {getattr(kind, '__name__', kind)}")
    return value


def _existing(cfg: dict, key: str, directory: bool = False) -> str:
    path = _require(cfg, key, str)
    ok = os.path.isdir(path) if directory else os.path.isfile(path)
    if not ok:
        raise ConfigError(f"{key}: {'directory' if directory else 'file'} {path!r} does not exist")
    return path


def _enum(cfg: dict, key: str, enum_cls, default):
    value = cfg.get(key, default)
    try:
        return enum_cls(value)
    except ValueError:
        choices = ", ".join(m.value for m in enum_cls)
        raise ConfigError(f"{key} must be one of {choices}") from None


def _dataclass_opts(cls, opts: dict, key: str):
    if not isinstance(opts, dict):
        raise ConfigError(f"{key} must be an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(opts) - names)
    if unknown:
        raise ConfigError(f"{key}: unknown option(s) {unknown}")
    try:
        return cls(**opts)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}") from None


def _read_rank_map(path: str) -> dict[str, str]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or [c.strip().lower() for c in rows[0][:2]] != ["species", "group"]:
        raise ConfigError("rank_map CSV needs a 'species,group' header")
    return {r[0]: r[1] for r in rows[1:]}


def _split(world, cfg):
    return world.split(test_fraction=float(cfg.get("test_fraction", 1 / 3)), seed=cfg["seed"])


def _views(world, idx):
    return [v[idx] for v in world.features.views]


# --- subcommands ----------------------------------------------------------
# Each validator returns a zero-argument job; jobs only run after every
# config check passed.

def _v_trim(cfg):
    src = _existing(cfg, "input")
    params = _dataclass_opts(TrimParams, cfg.get("trim", {}), "trim")

    def job(run: Run):
        aln = read_fasta(src)
        trimmed, report = trim_conserved_blocks(aln, params)
        run.write_text("trimmed.fasta", format_fasta(trimmed))
        run.write_json("trim_report.json", report.to_dict())
        run.summary["kept_fraction"] = report.kept_fraction
    return job


def _distance_inputs(cfg):
    src = _existing(cfg, "input")
    model = _enum(cfg, "model", ModelTag, "TN93_MCL")
    deletion = cfg.get("deletion", "pairwise")
    if deletion not in ("pairwise", "complete"):
        raise ConfigError("deletion must be 'pairwise' or 'complete'")
    return src, model, deletion


def _v_dist(cfg):
    src, model, deletion = _distance_inputs(cfg)

    def job(run: Run):
        aln = read_fasta(src)
        mask = complete_deletion_mask(aln) if deletion == "complete" else None
        dm = distance_matrix(aln, model, mask)
        run.write_text("distances.csv", dm.to_csv())
    return job


def _v_bootstrap(cfg):
    src, model, deletion = _distance_inputs(cfg)
    B = cfg.get("B", 100)
    if not isinstance(B, int) or B < 2:
        raise ConfigError("B must be an integer >= 2")

    def job(run: Run):
        aln = read_fasta(src)
        mask = complete_deletion_mask(aln) if deletion == "complete" else None
        res = bootstrap_se(aln, model, B=B, seed=cfg["seed"], mask=mask)
        m = res.matrix
        run.write_text("distances.csv", m.to_csv())
        for name, arr in (("stderr", m.stderr), ("ci_low", m.ci_low), ("ci_high", m.ci_high)):
            run.write_text(f"{name}.csv", EmbeddingMatrix(m.labels, m.labels, arr, True).to_csv())
        run.summary["max_skips"] = int(np.max(res.skips))
    return job


def _v_nj(cfg):
    src = _existing(cfg, "distances")
    precision = cfg.get("precision", 6)

    def job(run: Run):
        tree = neighbor_joining(read_distance_csv(src))
        run.write_text("tree.nwk", to_newick(tree, precision) + "\n")
        run.summary["warnings"] = tree.warnings
    return job


def _v_synth(cfg):
    opts = cfg.get("world", {})
    if not isinstance(opts, dict):
        raise ConfigError("world must be an object")
    opts = dict(opts, seed=cfg["seed"])
    if "conserved" in opts and opts["conserved"] is not None:
        opts["conserved"] = tuple(opts["conserved"])
    try:
        inspect.signature(make_world).bind(**opts)
    except TypeError as exc:
        raise ConfigError(f"world: {exc}") from None

    def job(run: Run):
        world = make_world(**opts)
        paths = write_world(world, run.stage)
        for p in paths.values():
            run.artifacts.append(os.path.basename(p))
        run.summary["holdout"] = list(world.holdout)
    return job


def _target_matrix(world, cfg) -> EmbeddingMatrix:
    full = EmbeddingMatrix.from_distance_matrix(world.true_dm)
    cols = cfg.get("columns")
    if cols is None:
        return full
    missing = [c for c in cols if c not in world.species]
    if missing:
        raise ConfigError(f"columns not in world: {missing}")
    return full.columns(cols)


def _v_train(cfg):
    wdir = _existing(cfg, "world", directory=True)
    head_opts = cfg.get("head", {})
    kind = _enum(head_opts, "kind", rn.HeadKind, "MSE_SUM")
    tau = float(head_opts.get("tau", 0.05))
    if tau <= 0:
        raise ConfigError("head.tau must be > 0")
    epochs = {k: int(cfg.get(k, d)) for k, d in (("branch_epochs", 60), ("fusion_epochs", 300))}
    lr = float(cfg.get("lr", 1e-4))
    fusion_lr = cfg.get("fusion_lr")

    def job(run: Run):
        world = read_world(wdir)
        targets = _target_matrix(world, cfg)
        train, _, _ = _split(world, cfg)
        model = rn.new_model(world.seen, targets.rows(world.seen),
                             rn.HeadVariant(kind, targets.length, tau), seed=cfg["seed"])
        _, report = rn.fit_model(model, _views(world, train), world.features.labels[train],
                                 epochs["branch_epochs"], epochs["fusion_epochs"], lr=lr,
                                 fusion_lr=fusion_lr, seed=cfg["seed"],
                                 batch_size=int(cfg.get("batch_size", 16)))
        rn.save_model(model, run.path("model.npz"))
        run.write_json("train_report.json", report)
        run.summary["final_fusion_loss"] = report["fusion"][-1]["loss"] if report["fusion"] else None
    return job


def _v_classify(cfg):
    wdir = _existing(cfg, "world", directory=True)
    mpath = _existing(cfg, "model")
    metric = _enum(cfg, "metric", MetricTag, "COSINE")
    split = cfg.get("split", "test")
    if split not in ("train", "test"):
        raise ConfigError("split must be 'train' or 'test'")
    mode = _enum(cfg, "mode", rn.PredictMode, "FUSION")
    branch = cfg.get("branch")
    if mode is rn.PredictMode.SINGLE_BRANCH and branch not in (0, 1, 2):
        raise ConfigError("SINGLE_BRANCH mode needs branch 0, 1 or 2")
    rank_map = _read_rank_map(_existing(cfg, "rank_map")) if "rank_map" in cfg else None

    def job(run: Run):
        world = read_world(wdir)
        model = rn.load_model(mpath)
        train, test, _ = _split(world, cfg)
        idx = test if split == "test" else train
        truth = list(world.features.labels[idx])
        pred = rn.classify_samples(model, _views(world, idx), mode, branch, metric=metric)
        emb = rn.predict_embedding(model, _views(world, idx), mode, branch)
        if rank_map is not None:
            unknown = sorted({s for s in truth + pred if s not in rank_map})
            if unknown:
                raise GdrecError(f"rank_map lacks {unknown}")
            truth = [rank_map[s] for s in truth]
            pred = [rank_map[s] for s in pred]
        report = classification_metrics(truth, pred)
        rows = np.vstack([model.targets.row(s) for s in world.features.labels[idx]])
        reg = regression_metrics(emb, rows, seed=cfg["seed"])
        with open(run.path("predictions.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample", "true", "pred"])
            for i, t, p in zip(idx, truth, pred):
                w.writerow([int(i), t, p])
        run.write_text("embeddings.csv", EmbeddingMatrix(
            tuple(str(int(i)) for i in idx), model.targets.col_labels, emb, True).to_csv())
        run.write_json("classification.json", report.to_dict())
        run.write_text("confusion.csv", report.confusion_csv())
        out = reg.to_dict()
        out.pop("error_matrix")
        run.write_json("regression.json", out)
        run.summary.update(accuracy=report.accuracy, rmse=reg.rmse)
    return job


def _v_zeroshot(cfg):
    wdir = _existing(cfg, "world", directory=True)
    mpath = _existing(cfg, "model")
    metric = _enum(cfg, "metric", MetricTag, "COSINE")
    mode = str(cfg.get("mode", "GZSL")).upper()
    if mode not in ("ZSL", "GZSL"):
        raise ConfigError("mode must be ZSL or GZSL")

    def job(run: Run):
        world = read_world(wdir)
        if not world.holdout:
            raise GdrecError("world has no holdout species")
        model = rn.load_model(mpath)
        full = EmbeddingMatrix.from_distance_matrix(world.true_dm).columns(model.targets.col_labels)
        seen, unseen = full.rows(world.seen), full.rows(world.holdout)
        _, test, unseen_idx = _split(world, cfg)
        labels = world.features.labels
        emb = rn.predict_embedding(model, _views(world, unseen_idx))
        truth = list(labels[unseen_idx])
        pred = [zero_shot_classify(e, seen, unseen, mode, metric) for e in emb]
        idx = np.concatenate([test, unseen_idx])
        all_emb = rn.predict_embedding(model, _views(world, idx))
        scores = -np.vstack([metric_distances(e, full.values, metric) for e in all_emb])
        auc = roc_auc_ovr(list(labels[idx]), scores, full.row_labels)
        with open(run.path("zeroshot_predictions.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample", "true", "pred"])
            for i, t, p in zip(unseen_idx, truth, pred):
                w.writerow([int(i), t, p])
        acc = float(np.mean([a == b for a, b in zip(pred, truth)]))
        run.write_json("zeroshot.json", {
            "mode": mode, "metric": metric.value, "accuracy": acc,
            "unseen_auc": {h: auc.per_class.get(h) for h in world.holdout},
            "macro_auc": auc.macro, "skipped_classes": auc.skipped})
        run.summary.update(accuracy=acc)
    return job


def _v_joint_tree(cfg):
    dpath = _existing(cfg, "distances")
    ppath = _existing(cfg, "prediction")
    query = _require(cfg, "query", str)

    def job(run: Run):
        species = read_distance_csv(dpath)
        with open(ppath, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
        if [c.strip().lower() for c in rows[0][:2]] != ["column", "value"]:
            raise GdrecError("prediction CSV needs a 'column,value' header")
        col_map = [r[0] or None for r in rows[1:]]
        values = np.array([float(r[1]) for r in rows[1:]])
        joint = insert_predicted_row(species, values, col_map, query)
        tree = neighbor_joining(joint)
        run.write_text("joint_distances.csv", joint.to_csv())
        run.write_text("joint_tree.nwk", to_newick(tree, cfg.get("precision", 6)) + "\n")
        run.write_text("joint_patristic.csv", patristic_matrix(tree).to_csv())
    return job


def _v_decode_dna(cfg):
    wdir = _existing(cfg, "world", directory=True)
    mpath = _existing(cfg, "model")
    dec_cfg = _dataclass_opts(dd.DecoderConfig, cfg.get("decoder", {}), "decoder")
    epochs = int(cfg.get("epochs", 800))
    lr = float(cfg.get("lr", 1e-2))
    region_opts = cfg.get("regions", {})
    if not isinstance(region_opts, dict) or set(region_opts) - {"conserved", "nonconserved"}:
        raise ConfigError("regions may only set 'conserved' and 'nonconserved' spans")

    def job(run: Run):
        world = read_world(wdir)
        model = rn.load_model(mpath)
        full = EmbeddingMatrix.from_distance_matrix(world.true_dm).columns(model.targets.col_labels)
        seqs = dict(zip(world.sequences.labels, world.sequences.sequences))
        species = list(model.classes)
        pairs = [(full.row(s), seqs[s]) for s in species]
        dec, hist = dd.train_decoder(pairs, dec_cfg, epochs=epochs, lr=lr, seed=cfg["seed"])
        dd.save_decoder(dec, run.path("decoder.npz"))
        _, test, _ = _split(world, cfg)
        truth = list(world.features.labels[test])
        emb = rn.predict_embedding(model, _views(world, test))
        decoded = dd.decode_batch(dec, emb)
        names = tuple(f"sample{int(i)}_{t}" for i, t in zip(test, truth))
        width = max(len(s) for s in decoded) if decoded else 1
        padded = tuple(s.ljust(width, "-") for s in decoded)
        run.write_text("decoded.fasta", format_fasta(AlignedSet(names, padded)))
        labels = [seqs[t] for t in truth]
        regions = dd.RegionSpec(**{k: tuple(map(tuple, v)) for k, v in region_opts.items()})
        try:
            for lab in labels:
                regions.validate(len(lab))
        except GdrecError:
            regions = None  # region spans only apply to sequences they partition
        acc = dd.pooled_accuracy(decoded, labels, regions)
        train_acc = dd.pooled_accuracy(dd.decode_batch(dec, [p[0] for p in pairs]),
                                       [p[1] for p in pairs], regions)
        run.write_json("dna_accuracy.json", {
            "heldout": {"overall": acc.overall, **acc.regions},
            "train": {"overall": train_acc.overall, **train_acc.regions},
            "final_loss": hist[-1]["loss"] if hist else None})
        run.summary.update(heldout_accuracy=acc.overall)
    return job


def _v_eval(cfg):
    kind = cfg.get("kind", "classification")
    if kind == "classification":
        src = _existing(cfg, "predictions")

        def job(run: Run):
            with open(src, newline="") as fh:
                rows = list(csv.DictReader(fh))
            if not rows or "true" not in rows[0] or "pred" not in rows[0]:
                raise GdrecError("predictions CSV needs 'true' and 'pred' columns")
            rep = classification_metrics([r["true"] for r in rows], [r["pred"] for r in rows])
            run.write_json("classification.json", rep.to_dict())
            run.write_text("confusion.csv", rep.confusion_csv())
            run.summary["accuracy"] = rep.accuracy
        return job
    if kind == "regression":
        pred_path, truth_path = _existing(cfg, "pred"), _existing(cfg, "truth")

        def job(run: Run):
            read = lambda p: EmbeddingMatrix.from_csv(open(p).read())  # noqa: E731
            pred, truth = read(pred_path), read(truth_path)
            rep = regression_metrics(pred.values, truth.values, B=int(cfg.get("B", 100)),
                                     seed=cfg["seed"])
            out = rep.to_dict()
            run.write_json("regression.json", out)
            run.summary["rmse"] = rep.rmse
        return job
    raise ConfigError("eval kind must be 'classification' or 'regression'")


def _v_repro(cfg):
    from .repro import AcceptanceConfig, run_all

    opts = dict(cfg.get("acceptance", {}))
    if "seeds" in opts:
        opts["seeds"] = tuple(opts["seeds"])
    acc_cfg = _dataclass_opts(AcceptanceConfig, opts, "acceptance")

    def job(run: Run):
        results = run_all(acc_cfg, log=lambda line: print(line, flush=True))
        run.write_json("acceptance.json", {"config": asdict(acc_cfg),
                                           "results": [r.to_dict() for r in results]})
        failed = [r.number for r in results if not r.passed]
        run.summary.update(passed=len(results) - len(failed), failed=failed)
        if failed:
            raise GdrecError(f"acceptance checks failed: {failed}")
    return job


SUBCOMMANDS: dict[str, Callable] = {
    "trim": _v_trim,
    "dist": _v_dist,
    "bootstrap": _v_bootstrap,
    "nj": _v_nj,
    "synth": _v_synth,
    "train": _v_train,
    "classify": _v_classify,
    "zeroshot": _v_zeroshot,
    "joint-tree": _v_joint_tree,
    "decode-dna": _v_decode_dna,
    "eval": _v_eval,
    "repro": _v_repro,
}


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    return {"gdrec": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "kernel_backend": _backend.BACKEND}


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def execute(subcommand: str, config_path: str, out_dir: str) -> int:
    """Validate, run and record one subcommand; returns the exit status."""
    os.makedirs(out_dir, exist_ok=True)
    started = time.time()
    error_path = os.path.join(out_dir, "error.json")
    if os.path.exists(error_path):
        os.remove(error_path)

    def fail(code, stage, exc):
        _write_json(error_path, {"subcommand": subcommand, "stage": stage, "exit_code": code,
                                 "error": type(exc).__name__, "message": str(exc)})
        print(f"gdrec {subcommand}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code

    try:
        if subcommand not in SUBCOMMANDS:
            raise ConfigError(f"unknown subcommand {subcommand!r}")
        try:
            with open(config_path) as fh:
                config_text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        try:
            cfg = json.loads(config_text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        seed = _require(cfg, "seed")
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        job = SUBCOMMANDS[subcommand](cfg)
    except ConfigError as exc:
        return fail(EXIT_VALIDATION, "validation", exc)

    run = Run(out_dir, cfg)
    try:
        job(run)
    except Exception as exc:  # every runtime failure is recorded, not raised
        qdir = run.quarantine()
        code = fail(EXIT_RUNTIME, "runtime", exc)
        _write_json(os.path.join(qdir, "manifest.json"),
                    _manifest(subcommand, cfg, config_text, started, run, qdir, "failed"))
        return code
    run.commit()
    _write_json(os.path.join(out_dir, "manifest.json"),
                _manifest(subcommand, cfg, config_text, started, run, out_dir, "ok"))
    return EXIT_OK


def _manifest(subcommand, cfg, config_text, started, run, where, status):
    arts = []
    for name in run.artifacts:
        p = os.path.join(where, name)
        if os.path.exists(p):
            arts.append({"path": name, "sha256": _sha256(p)})
    return {
        "subcommand": subcommand,
        "status": status,
        "seed": cfg["seed"],
        "config": cfg,
        "config_text": config_text,
        "versions": _versions(),
        "started": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
        "wall_seconds": round(time.time() - started, 3),
        "artifacts": arts,
        "summary": _clean(run.summary),
    }


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.generic,)):
        return obj.item()
    return obj


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gdrec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gdrec {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="SUBCOMMAND")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", "-c", required=True, help="JSON run configuration")
        p.add_argument("--out", "-o", required=True, help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return execute(args.subcommand, args.config, args.out)


if __name__ == "__main__":
    sys.exit(main())
