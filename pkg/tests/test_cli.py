import json
import os
import subprocess
import sys

import numpy as np
import pytest

from gdrec.cli import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, main
from gdrec.gendist import DistanceMatrix, read_distance_csv
from gdrec.phylo import parse_newick, patristic_matrix
from gdrec.seqio import read_fasta


def _run(tmp_path, sub, cfg, out="out"):
    cpath = tmp_path / f"{sub}-{out}.json"
    cpath.write_text(json.dumps(cfg))
    odir = tmp_path / out
    code = main([sub, "--config", str(cpath), "--out", str(odir)])
    return code, odir


def _manifest(odir):
    return json.loads((odir / "manifest.json").read_text())


def _numeric_artifacts(odir):
    return {a["path"]: a["sha256"] for a in _manifest(odir)["artifacts"]}


@pytest.fixture
def three_taxa(tmp_path):
    dm = DistanceMatrix(("a", "b", "c"), [[0, 0.3, 0.4], [0.3, 0, 0.5], [0.4, 0.5, 0]])
    path = tmp_path / "three.csv"
    path.write_text(dm.to_csv())
    return path


def test_nj_three_taxa(tmp_path, three_taxa):
    code, odir = _run(tmp_path, "nj", {"seed": 0, "distances": str(three_taxa)})
    assert code == EXIT_OK
    assert (odir / "tree.nwk").read_text().strip() == "(a:0.1,b:0.2,c:0.3);"
    man = _manifest(odir)
    assert man["status"] == "ok" and man["seed"] == 0
    assert man["config"]["distances"] == str(three_taxa)
    assert {"gdrec", "python", "numpy", "kernel_backend"} <= set(man["versions"])
    assert [a["path"] for a in man["artifacts"]] == ["tree.nwk"]


def test_trim_conserved_fasta(tmp_path):
    src = tmp_path / "in.fasta"
    src.write_text(">a\nACGTACGTACGTACGT\n>b\nACGTACGTACGTACGT\n>c\nACGTACGTACGTACGT\n")
    code, odir = _run(tmp_path, "trim", {"seed": 0, "input": str(src)})
    assert code == EXIT_OK
    assert read_fasta(odir / "trimmed.fasta") == read_fasta(src)
    assert _manifest(odir)["summary"]["kept_fraction"] == 1.0


def test_dist_and_bootstrap(tmp_path):
    src = tmp_path / "in.fasta"
    src.write_text(">a\nACGTACGTACGTACGTACGT\n>b\nACGTACGTACGAACGTACGT\n>c\nACGTTCGTACGAACGTACCT\n")
    code, odir = _run(tmp_path, "dist", {"seed": 0, "input": str(src), "model": "JC69"})
    assert code == EXIT_OK
    dm = read_distance_csv(odir / "distances.csv")
    assert dm.get("a", "b") == pytest.approx(-0.75 * np.log(1 - 4 / 3 * 0.05))
    code, odir = _run(tmp_path, "bootstrap", {"seed": 1, "input": str(src), "model": "K2P", "B": 20},
                      out="boot")
    assert code == EXIT_OK
    assert {"distances.csv", "stderr.csv", "ci_low.csv", "ci_high.csv"} <= set(_numeric_artifacts(odir))


def test_validation_errors_exit_1(tmp_path, three_taxa):
    code, odir = _run(tmp_path, "nj", {"distances": str(three_taxa)})
    assert code == EXIT_VALIDATION
    err = json.loads((odir / "error.json").read_text())
    assert err["stage"] == "validation" and "seed" in err["message"]
    code, odir = _run(tmp_path, "nj", {"seed": 0, "distances": "/nonexistent.csv"}, out="o2")
    assert code == EXIT_VALIDATION
    code, odir = _run(tmp_path, "dist", {"seed": -1, "input": str(three_taxa)}, out="o3")
    assert code == EXIT_VALIDATION
    code, odir = _run(tmp_path, "trim", {"seed": 0, "input": str(three_taxa),
                                         "trim": {"bogus": 1}}, out="o4")
    assert code == EXIT_VALIDATION
    assert not (odir / "manifest.json").exists()


def test_runtime_error_exit_2_and_quarantine(tmp_path):
    src = tmp_path / "bad.fasta"
    src.write_text(">a\nACGT\n>b\nCATG\n")
    code, odir = _run(tmp_path, "dist", {"seed": 0, "input": str(src), "model": "JC69"})
    assert code == EXIT_RUNTIME
    err = json.loads((odir / "error.json").read_text())
    assert err["error"] == "SaturationError" and err["exit_code"] == 2
    assert (odir / "quarantine" / "manifest.json").exists()
    assert not (odir / "manifest.json").exists()
    assert not (odir / "distances.csv").exists()


def test_rerun_byte_identical(tmp_path):
    src = tmp_path / "in.fasta"
    src.write_text(">a\nACGTACGTACGTACGTACGT\n>b\nACGTACGTACGAACGTACGT\n>c\nACGTTCGTACGAACGTACCT\n")
    cfg = {"seed": 3, "input": str(src), "model": "TN93_MCL", "B": 10}
    _, o1 = _run(tmp_path, "bootstrap", cfg, out="r1")
    _, o2 = _run(tmp_path, "bootstrap", cfg, out="r2")
    assert _numeric_artifacts(o1) == _numeric_artifacts(o2)


def test_joint_tree(tmp_path):
    full = DistanceMatrix(("a", "b", "c", "q"),
                          [[0, 0.3, 0.4, 0.35], [0.3, 0, 0.5, 0.45], [0.4, 0.5, 0, 0.35],
                           [0.35, 0.45, 0.35, 0]])
    species = tmp_path / "species.csv"
    species.write_text(full.subset(("a", "b", "c")).to_csv())
    pred = tmp_path / "pred.csv"
    pred.write_text("column,value\na,0.35\nb,0.45\nc,0.35\n,9.0\n")
    code, odir = _run(tmp_path, "joint-tree", {"seed": 0, "distances": str(species),
                                               "prediction": str(pred), "query": "q",
                                               "precision": None})
    assert code == EXIT_OK
    tree = parse_newick((odir / "joint_tree.nwk").read_text())
    assert np.allclose(patristic_matrix(tree).subset(full.labels).values, full.values, atol=1e-9)


def test_eval_classification(tmp_path):
    src = tmp_path / "pred.csv"
    src.write_text("true,pred\na,a\na,b\nb,b\nb,b\n")
    code, odir = _run(tmp_path, "eval", {"seed": 0, "kind": "classification", "predictions": str(src)})
    assert code == EXIT_OK
    assert json.loads((odir / "classification.json").read_text())["accuracy"] == 0.75


def test_unknown_subcommand_rejected():
    with pytest.raises(SystemExit):
        main(["nope", "-c", "x", "-o", "y"])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    base = tmp_path_factory.mktemp("pipe")
    world_cfg = {"n_species": 5, "samples_per_species": 6, "n_holdout": 1, "n_sites": 40,
                 "conserved": [5, 30]}
    code, wdir = _run(base, "synth", {"seed": 0, "world": world_cfg}, out="world")
    assert code == EXIT_OK
    train_cfg = {"seed": 0, "world": str(wdir), "branch_epochs": 3, "fusion_epochs": 5,
                 "lr": 1e-3}
    code, mdir = _run(base, "train", train_cfg, out="model")
    assert code == EXIT_OK
    return base, wdir, mdir, train_cfg


def test_pipeline_synth_train(pipeline):
    base, wdir, mdir, train_cfg = pipeline
    assert {"tree.nwk", "sequences.fasta", "true_distances.csv", "features.csv", "world.json"} \
        <= set(_numeric_artifacts(wdir))
    report = json.loads((mdir / "train_report.json").read_text())
    assert len(report["fusion"]) == 5
    _, again = _run(base, "train", train_cfg, out="model2")
    assert _numeric_artifacts(again) == _numeric_artifacts(mdir)


def test_pipeline_classify_with_rank_map(pipeline):
    base, wdir, mdir, _ = pipeline
    code, odir = _run(base, "classify", {"seed": 0, "world": str(wdir),
                                         "model": str(mdir / "model.npz")}, out="cls")
    assert code == EXIT_OK
    rep = json.loads((odir / "classification.json").read_text())
    assert 0.0 <= rep["accuracy"] <= 1.0
    rank = base / "rank.csv"
    rank.write_text("species,group\n" + "".join(f"S{i},G{i % 2}\n" for i in range(1, 6)))
    code, odir = _run(base, "classify", {"seed": 0, "world": str(wdir), "rank_map": str(rank),
                                         "model": str(mdir / "model.npz")}, out="cls_genus")
    assert code == EXIT_OK
    rep = json.loads((odir / "classification.json").read_text())
    assert set(rep["classes"]) <= {"G0", "G1"}


def test_pipeline_zeroshot_and_decode(pipeline):
    base, wdir, mdir, _ = pipeline
    code, odir = _run(base, "zeroshot", {"seed": 0, "world": str(wdir), "mode": "ZSL",
                                         "model": str(mdir / "model.npz")}, out="zs")
    assert code == EXIT_OK
    # a single unseen species: ZSL has only one candidate
    assert json.loads((odir / "zeroshot.json").read_text())["accuracy"] == 1.0
    code, odir = _run(base, "decode-dna", {"seed": 0, "world": str(wdir), "epochs": 5,
                                           "model": str(mdir / "model.npz"),
                                           "decoder": {"hidden": 8, "embed": 4, "max_len": 50},
                                           "regions": {"conserved": [[5, 30]],
                                                       "nonconserved": [[1, 4], [31, 40]]}},
                      out="dna")
    assert code == EXIT_OK
    acc = json.loads((odir / "dna_accuracy.json").read_text())
    assert {"overall", "conserved", "nonconserved"} <= set(acc["heldout"])


def test_console_entry_point(tmp_path, three_taxa):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 0, "distances": str(three_taxa)}))
    proc = subprocess.run([sys.executable, "-m", "gdrec.cli", "nj", "-c", str(cfg),
                           "-o", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert os.path.exists(tmp_path / "o" / "tree.nwk")
