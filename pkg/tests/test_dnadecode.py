import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gdrec import dnadecode as dd
from gdrec.errors import DataError
from gdrec.neuralcore import grad_check


def test_vocab_round_trip():
    assert dd.TOKENS.index("<START>") == dd.START == 6
    assert dd.END == 7
    ids = dd.encode_dna("AC-GTN")
    assert ids[0] == dd.START and ids[-1] == dd.END
    assert dd.decode_tokens(ids) == "AC-GTN"
    with pytest.raises(DataError):
        dd.encode_dna("ACX")


def test_per_base_examples():
    assert dd.per_base_accuracy("ACGT", "ACGT").overall == 1.0
    assert dd.per_base_accuracy("ACGT", "ACGA").overall == 0.75
    assert dd.per_base_accuracy("AC", "ACGT").overall == 0.5
    assert dd.per_base_accuracy("ACGTAAAA", "ACGT").overall == 1.0
    with pytest.raises(DataError):
        dd.per_base_accuracy("A", "")


def test_per_base_regions():
    regions = dd.RegionSpec(conserved=((3, 4),), nonconserved=((1, 2),))
    acc = dd.per_base_accuracy("AAGT", "ACGT", regions)
    assert acc.regions == {"conserved": 1.0, "nonconserved": 0.5}
    with pytest.raises(DataError):
        dd.per_base_accuracy("AAGT", "ACGTA", regions)


def test_default_regions_partition_157():
    regions = dd.RegionSpec()
    regions.validate(157)
    assert len(regions.positions("conserved")) == 116
    assert len(regions.positions("nonconserved")) == 41


def test_baseline_similarity():
    assert dd.baseline_similarity("ACGT", ["ACGT"]) == 1.0
    assert dd.baseline_similarity("ACGT", ["ACTA", "ACGT"]) == 0.75
    with pytest.raises(DataError):
        dd.baseline_similarity("ACGT", [])


def test_random_floor():
    assert dd.random_floor(48) == pytest.approx(0.25 + 3 * np.sqrt(0.1875 / 48))


@given(st.text(alphabet="ACGT-N", max_size=30), st.text(alphabet="ACGT-N", min_size=1, max_size=30))
def test_accuracy_bounds(pred, label):
    acc = dd.per_base_accuracy(pred, label)
    assert 0.0 <= acc.overall <= 1.0
    assert acc.matches <= min(len(pred), len(label))


def test_masked_token_ce_ignores_padding():
    logits = np.zeros((1, 3, 8))
    targets = np.array([[0, 1, dd.PAD]])
    value, grad = dd.masked_token_ce(logits, targets)
    assert value == pytest.approx(np.log(8))
    assert np.all(grad[0, 2] == 0)


def test_encoder_decoder_gradients():
    model = dd.Seq2Seq(dd.DecoderConfig(hidden=4, embed=3), seed=1)
    rng = np.random.default_rng(0)
    tin = np.array([[dd.START, 0, 3], [dd.START, 2, 1]])
    assert grad_check(model, (rng.uniform(0, 1, (2, 4)), tin)) <= 1e-4


def test_train_epochs_zero_unchanged():
    model = dd.Seq2Seq(dd.DecoderConfig(hidden=4, embed=3), seed=0)
    before = {k: v.copy() for k, v in model.parameters().items()}
    _, hist = dd.train_decoder([(np.ones(3), "ACGT")], epochs=0, model=model)
    assert hist == []
    assert all(np.array_equal(before[k], v) for k, v in model.parameters().items())


def test_inconsistent_embedding_lengths():
    with pytest.raises(DataError):
        dd.train_decoder([(np.ones(3), "AC"), (np.ones(4), "GT")], epochs=1)
    with pytest.raises(DataError):
        dd.train_decoder([], epochs=1)


@pytest.fixture(scope="module")
def memorized():
    rng = np.random.default_rng(0)
    pairs = [(rng.uniform(0, 1, 6), "".join(rng.choice(list("ACGT"), 30))) for _ in range(6)]
    cfg = dd.DecoderConfig(hidden=32, embed=8, max_len=60)
    model, hist = dd.train_decoder(pairs, cfg, epochs=800, lr=1e-2, seed=0)
    return pairs, model, hist


def test_memorization(memorized):
    pairs, model, hist = memorized
    assert hist[-1]["token_accuracy"] >= 0.99
    preds = dd.decode_batch(model, np.vstack([e for e, _ in pairs]))
    acc = dd.pooled_accuracy(preds, [s for _, s in pairs]).overall
    assert acc >= 0.95


def test_memorization_loss_trend(memorized):
    losses = np.array([h["loss"] for h in memorized[2]])
    # 50-epoch window means; a transient rise may not exceed 10% of the starting loss
    windows = losses.reshape(-1, 50).mean(axis=1)
    assert all(b - a <= 0.1 * windows[0] for a, b in zip(windows, windows[1:]))
    assert windows[-1] < 0.05 * windows[0]


def test_decode_deterministic_and_clean(memorized):
    pairs, model, _ = memorized
    a = dd.decode_greedy(pairs[0][0], model)
    assert a == dd.decode_greedy(pairs[0][0], model)
    junk = dd.decode_batch(model, np.random.default_rng(1).normal(0, 5, (4, 6)))
    for s in junk + [a]:
        assert set(s) <= set("ACGTN-")
        assert len(s) <= model.config.max_len


def test_decoder_save_load(memorized, tmp_path):
    pairs, model, _ = memorized
    path = tmp_path / "dec.npz"
    dd.save_decoder(model, path)
    back = dd.load_decoder(path)
    emb = np.vstack([e for e, _ in pairs])
    assert dd.decode_batch(back, emb) == dd.decode_batch(model, emb)
