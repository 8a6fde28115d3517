"""Decode a DNA sequence from a genetic-distance embedding.

A two-layer LSTM encoder reads the embedding one scalar per step; its final
states seed a two-layer LSTM decoder that emits bases token by token from a
START token until END.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError
from .neuralcore import (
    LSTM,
    AdamState,
    Dense,
    Tape,
    adam_step,
    clip_grad_norm,
    load_checkpoint,
    log_softmax,
    make_rng,
    save_checkpoint,
    softmax,
)

TOKENS = ("A", "C", "G", "T", "N", "-", "<START>", "<END>")
TOKEN_ID = {t: i for i, t in enumerate(TOKENS)}
START = TOKEN_ID["<START>"]
END = TOKEN_ID["<END>"]
PAD = -1
N_TOKENS = len(TOKENS)
_BASES = "ACGTN-"


def encode_dna(seq: str) -> list[int]:
    """START + bases + END as token ids."""
    seq = seq.upper().replace("U", "T")
    bad = [ch for ch in seq if ch not in _BASES]
    if bad:
        raise DataError(f"symbol {bad[0]!r} is not a DNA token")
    return [START] + [TOKEN_ID[ch] for ch in seq] + [END]


def decode_tokens(ids) -> str:
    out = []
    for i in ids:
        i = int(i)
        if i == END:
            break
        if i != START:
            out.append(TOKENS[i])
    return "".join(out)


@dataclass(frozen=True)
class DecoderConfig:
    """Layer sizes and training knobs.

    ``feed_context`` additionally feeds the encoder's final top-layer hidden
    state to the decoder at every step. ``noise_std`` jitters standardized
    encoder inputs during training so nearby embeddings decode alike.
    """

    hidden: int = 64
    embed: int = 16
    max_len: int = 200
    feed_context: bool = True
    noise_std: float = 0.0
    clip_norm: float = 5.0

    def to_dict(self) -> dict:
        return {"hidden": self.hidden, "embed": self.embed, "max_len": self.max_len,
                "feed_context": self.feed_context, "noise_std": self.noise_std,
                "clip_norm": self.clip_norm}


class Seq2Seq:
    """Encoder-decoder following the container protocol.

    ``forward((embeddings, tokens_in))`` maps ``(B, L)`` embeddings and
    ``(B, T)`` teacher-forcing token ids to ``(B, T, 8)`` logits.
    ``backward`` returns ``((d_embeddings, None), grads)``.
    """

    def __init__(self, config: DecoderConfig = DecoderConfig(), seed: int = 0):
        self.config = config
        rng = make_rng(seed)
        H, E = config.hidden, config.embed
        self.enc = [LSTM(1, H, rng), LSTM(H, H, rng)]
        self.embed = rng.normal(0.0, 0.1, size=(N_TOKENS, E))
        self.dec = [LSTM(E + (H if config.feed_context else 0), H, rng), LSTM(H, H, rng)]
        self.out = Dense(H, N_TOKENS, rng)
        self.in_mean = 0.0
        self.in_scale = 1.0

    def _modules(self):
        return {"enc0": self.enc[0], "enc1": self.enc[1], "dec0": self.dec[0],
                "dec1": self.dec[1], "out": self.out}

    def parameters(self) -> dict[str, np.ndarray]:
        out = {"embed": self.embed}
        for name, mod in self._modules().items():
            out.update({f"{name}.{k}": v for k, v in mod.params.items()})
        return out

    def load_parameters(self, params: dict) -> None:
        mods = self._modules()
        for key, value in params.items():
            if key == "embed":
                if np.shape(value) != self.embed.shape:
                    raise ValueError("token embedding shape mismatch")
                self.embed = np.array(value, dtype=np.float64)
            else:
                name, rest = key.split(".", 1)
                mods[name].load_parameters({rest: value})

    def standardize(self, emb) -> np.ndarray:
        return (np.asarray(emb, dtype=np.float64) - self.in_mean) / self.in_scale

    def encode(self, emb, mode: str = "eval", noise=None):
        x = self.standardize(emb)
        if noise is not None:
            x = x + noise
        B = x.shape[0]
        H = self.config.hidden
        zeros = np.zeros((B, H))
        (hs0, h0, c0), e0 = self.enc[0].forward((x[:, :, None], zeros, zeros), mode)
        (_, h1, c1), e1 = self.enc[1].forward((hs0, zeros, zeros), mode)
        return [(h0, c0), (h1, c1)], (e0, e1)

    def _decoder_input(self, tokens, ctx):
        e = self.embed[tokens]
        if not self.config.feed_context:
            return e
        return np.concatenate([e, np.broadcast_to(ctx[:, None, :], e.shape[:2] + ctx.shape[1:])], axis=2)

    def forward(self, inputs, mode: str = "train", noise=None):
        emb, tokens = inputs
        tokens = np.asarray(tokens, dtype=int)
        states, enc_entries = self.encode(emb, mode, noise)
        (h0, c0), (h1, c1) = states
        din = self._decoder_input(np.maximum(tokens, 0), h1)
        (ds0, _, _), d0 = self.dec[0].forward((din, h0, c0), mode)
        (ds1, _, _), d1 = self.dec[1].forward((ds0, h1, c1), mode)
        logits, oe = self.out.forward(ds1, mode)
        tape = Tape(entries=[*enc_entries, d0, d1, oe], extra={"tokens": tokens})
        return logits, tape

    def backward(self, tape: Tape, dlogits):
        tape.consume()
        e0, e1, d0, d1, oe = tape.entries
        tokens = tape.extra["tokens"]
        H, E = self.config.hidden, self.config.embed
        grads = {}

        def put(name, g):
            grads.update({f"{name}.{k}": v for k, v in g.items()})

        dds1, g = self.out.backward(oe, dlogits)
        put("out", g)
        B = dds1.shape[0]
        zero = np.zeros((B, H))
        (dds0, dh1, dc1), g = self.dec[1].backward(d1, (dds1, zero, zero))
        put("dec1", g)
        (ddin, dh0, dc0), g = self.dec[0].backward(d0, (dds0, zero, zero))
        put("dec0", g)
        dtok = ddin[:, :, :E]
        if self.config.feed_context:
            dh1 = dh1 + ddin[:, :, E:].sum(axis=1)
        gE = np.zeros_like(self.embed)
        valid = tokens >= 0
        np.add.at(gE, tokens[valid], dtok[valid])
        grads["embed"] = gE
        T_enc = e1.out_shape[0][1]
        (dhs0, _, _), g = self.enc[1].backward(e1, (np.zeros((B, T_enc, H)), dh1, dc1))
        put("enc1", g)
        (dx, _, _), g = self.enc[0].backward(e0, (dhs0, dh0, dc0))
        put("enc0", g)
        return (dx[:, :, 0] / self.in_scale, None), grads


def masked_token_ce(logits, targets) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over non-padding target tokens, and its gradient."""
    targets = np.asarray(targets, dtype=int)
    mask = targets >= 0
    n = int(mask.sum())
    if n == 0:
        raise DataError("no target tokens")
    lp = log_softmax(logits)
    safe = np.where(mask, targets, 0)
    picked = np.take_along_axis(lp, safe[..., None], axis=-1)[..., 0]
    value = -float(picked[mask].sum()) / n
    grad = softmax(logits)
    np.put_along_axis(grad, safe[..., None], np.take_along_axis(grad, safe[..., None], -1) - 1.0, -1)
    grad = grad * mask[..., None] / n
    return value, grad


def _teacher_batch(seqs: Sequence[str]):
    ids = [encode_dna(s) for s in seqs]
    T = max(len(x) for x in ids) - 1
    tin = np.full((len(ids), T), PAD, dtype=int)
    tout = np.full((len(ids), T), PAD, dtype=int)
    for k, x in enumerate(ids):
        tin[k, :len(x) - 1] = x[:-1]
        tout[k, :len(x) - 1] = x[1:]
    return tin, tout


def _check_pairs(pairs):
    if not pairs:
        raise DataError("no training pairs")
    embs = [np.asarray(e, dtype=np.float64) for e, _ in pairs]
    if len({e.shape for e in embs}) != 1 or embs[0].ndim != 1:
        raise DataError("embeddings must share one length")
    return np.vstack(embs), [s for _, s in pairs]


def train_decoder(
    pairs: Sequence[tuple],
    config: DecoderConfig = DecoderConfig(),
    epochs: int = 100,
    lr: float = 1e-4,
    seed: int = 0,
    model: Seq2Seq | None = None,
) -> tuple[Seq2Seq, list[dict]]:
    """Teacher-forced training on (embedding, DNA string) pairs.

    The full pair set forms one batch per epoch. Returns the model and
    per-epoch ``{"epoch", "loss", "token_accuracy"}`` records.
    """
    emb, seqs = _check_pairs(pairs)
    tin, tout = _teacher_batch(seqs)
    if model is None:
        model = Seq2Seq(config, seed)
        model.in_mean = float(emb.mean())
        model.in_scale = float(emb.std()) or 1.0
    config = model.config
    rng = make_rng([seed, 17])
    state = AdamState(lr=lr)
    history = []
    for epoch in range(epochs):
        noise = rng.normal(0.0, config.noise_std, size=emb.shape) if config.noise_std > 0 else None
        logits, tape = model.forward((emb, tin), "train", noise=noise)
        value, dlogits = masked_token_ce(logits, tout)
        _, grads = model.backward(tape, dlogits)
        if config.clip_norm > 0:
            clip_grad_norm(grads, config.clip_norm)
        params, state = adam_step(model.parameters(), grads, state)
        model.load_parameters(params)
        mask = tout >= 0
        acc = float((logits.argmax(-1) == tout)[mask].mean())
        history.append({"epoch": epoch + 1, "loss": value, "token_accuracy": acc})
    return model, history


def decode_batch(model: Seq2Seq, embeddings) -> list[str]:
    """Greedy decoding of several embeddings at once."""
    emb = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    states, _ = model.encode(emb)
    (h0, c0), (h1, c1) = states
    ctx = h1
    B = len(emb)
    tok = np.full(B, START)
    out = np.zeros((B, model.config.max_len), dtype=int)
    done = np.zeros(B, dtype=bool)
    length = np.full(B, model.config.max_len)
    for t in range(model.config.max_len):
        din = model._decoder_input(tok[:, None], ctx)
        (_, h0, c0), _ = model.dec[0].forward((din, h0, c0), "eval")
        (_, h1, c1), _ = model.dec[1].forward((h0[:, None, :], h1, c1), "eval")
        logits, _ = model.out.forward(h1, "eval")
        # START is never emitted
        logits[:, START] = -np.inf
        tok = logits.argmax(axis=1)
        out[:, t] = tok
        newly = (~done) & (tok == END)
        length[newly] = t
        done |= newly
        if done.all():
            break
    return [decode_tokens(out[b, :length[b]]) for b in range(B)]


def decode_greedy(embedding, model: Seq2Seq) -> str:
    """Decode one embedding: argmax token per step until END or ``max_len``."""
    return decode_batch(model, np.asarray(embedding, dtype=np.float64)[None])[0]


def save_decoder(model: Seq2Seq, path) -> None:
    meta = {"kind": "dnadecode", "config": model.config.to_dict(),
            "in_mean": model.in_mean, "in_scale": model.in_scale}
    save_checkpoint(path, model.parameters(), meta)


def load_decoder(path) -> Seq2Seq:
    params, meta = load_checkpoint(path)
    if meta.get("kind") != "dnadecode":
        raise ValueError("checkpoint does not hold a DNA decoder")
    model = Seq2Seq(DecoderConfig(**meta["config"]))
    model.load_parameters(params)
    model.in_mean, model.in_scale = meta["in_mean"], meta["in_scale"]
    return model


# --- accuracy ---------------------------------------------------------------

@dataclass(frozen=True)
class RegionSpec:
    """Conserved and non-conserved spans, 1-based and inclusive."""

    conserved: tuple[tuple[int, int], ...] = ((9, 124),)
    nonconserved: tuple[tuple[int, int], ...] = ((1, 8), (125, 157))

    def validate(self, length: int) -> None:
        covered = []
        for a, b in self.conserved + self.nonconserved:
            if a < 1 or b < a:
                raise DataError(f"bad span ({a}, {b})")
            covered.extend(range(a, b + 1))
        if sorted(covered) != list(range(1, length + 1)):
            raise DataError(f"region spans do not partition positions 1..{length}")

    def positions(self, which: str) -> np.ndarray:
        spans = self.conserved if which == "conserved" else self.nonconserved
        return np.concatenate([np.arange(a - 1, b) for a, b in spans])


@dataclass(frozen=True)
class BaseAccuracy:
    overall: float
    regions: dict = field(default_factory=dict)
    matches: int = 0
    length: int = 0


def _match_vector(pred: str, label: str) -> np.ndarray:
    n = len(label)
    m = min(len(pred), n)
    hits = np.zeros(n, dtype=bool)
    hits[:m] = np.frombuffer(pred[:m].encode(), np.uint8) == np.frombuffer(label[:m].encode(), np.uint8)
    return hits


def per_base_accuracy(pred: str, label: str, regions: RegionSpec | None = None) -> BaseAccuracy:
    """Matches over the label length; label positions the prediction lacks are misses."""
    if not label:
        raise DataError("empty label sequence")
    hits = _match_vector(pred.upper(), label.upper())
    out = {}
    if regions is not None:
        regions.validate(len(label))
        for which in ("conserved", "nonconserved"):
            out[which] = float(hits[regions.positions(which)].mean())
    return BaseAccuracy(float(hits.mean()), out, int(hits.sum()), len(label))


def pooled_accuracy(preds: Sequence[str], labels: Sequence[str], regions: RegionSpec | None = None) -> BaseAccuracy:
    """Position-pooled accuracy over several (prediction, label) pairs."""
    if not labels or len(preds) != len(labels):
        raise DataError("need equally many predictions and labels")
    all_hits = [_match_vector(p.upper(), lab.upper()) for p, lab in zip(preds, labels)]
    hits = np.concatenate(all_hits)
    out = {}
    if regions is not None:
        for which in ("conserved", "nonconserved"):
            sel = []
            for h in all_hits:
                regions.validate(len(h))
                sel.append(h[regions.positions(which)])
            out[which] = float(np.concatenate(sel).mean())
    return BaseAccuracy(float(hits.mean()), out, int(hits.sum()), len(hits))


def baseline_similarity(reference: str, others: Sequence[str]) -> float:
    """Mean per-base accuracy of ``reference`` against each of ``others``."""
    if not others:
        raise DataError("no sequences to compare against")
    return float(np.mean([per_base_accuracy(reference, o).overall for o in others]))


def random_floor(n_positions: int, p: float = 0.25, n_sigma: float = 3.0) -> float:
    """Chance accuracy plus ``n_sigma`` binomial standard deviations."""
    if n_positions < 1:
        raise DataError("need at least one position")
    return p + n_sigma * float(np.sqrt(p * (1 - p) / n_positions))
