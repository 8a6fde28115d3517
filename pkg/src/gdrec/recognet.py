"""Three-branch recognition model regressing genetic-distance rows.

Training runs in two stages. Each branch is first trained on its own view
with a temporary softmax classifier over the training species. The branches
are then frozen and a fusion classifier (concat -> SE -> ECA -> dense) learns
to output a species' genetic-distance row, under one of four head variants.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .embedspace import EmbeddingMatrix, MetricTag, metric_distances
from .errors import DataError, StageError, TargetError
from .neuralcore import (
    AdamState,
    Concat,
    Conv2D,
    Dense,
    ECABlock,
    GlobalAvgPool,
    LossKind,
    ReLU,
    SEBlock,
    Sequential,
    Tape,
    adam_step,
    load_checkpoint,
    loss,
    make_rng,
    save_checkpoint,
    softmax,
)


class InputKind(str, enum.Enum):
    FEATURE_VECTOR = "FEATURE_VECTOR"
    TOY_IMAGE = "TOY_IMAGE"


class HeadKind(str, enum.Enum):
    MSE_SUM = "MSE_SUM"
    MSE_MEAN = "MSE_MEAN"
    SOFTMAX = "SOFTMAX"
    SOFTMAX_NEG1 = "SOFTMAX_NEG1"

    @property
    def is_softmax(self) -> bool:
        return self in (HeadKind.SOFTMAX, HeadKind.SOFTMAX_NEG1)


class PredictMode(str, enum.Enum):
    FUSION = "FUSION"
    AVG_ENSEMBLE = "AVG_ENSEMBLE"
    SINGLE_BRANCH = "SINGLE_BRANCH"


@dataclass(frozen=True)
class BranchConfig:
    """Pluggable feature extractor for one view.

    Feature vectors go through two DENSE+RELU layers; toy images through
    CONV2D+RELU, global average pooling and a dense layer to ``out_width``.
    """

    input_kind: InputKind = InputKind.FEATURE_VECTOR
    input_dim: int = 32
    hidden: int = 64
    out_width: int = 64
    image_shape: tuple[int, int, int] = (2, 4, 4)
    conv_channels: int = 8

    def build(self, rng) -> Sequential:
        kind = InputKind(self.input_kind)
        if kind is InputKind.FEATURE_VECTOR:
            return Sequential([Dense(self.input_dim, self.hidden, rng), ReLU(),
                               Dense(self.hidden, self.out_width, rng), ReLU()])
        c = self.image_shape[0]
        return Sequential([Conv2D(c, self.conv_channels, 3, rng), ReLU(), GlobalAvgPool(),
                           Dense(self.conv_channels, self.out_width, rng)])

    def to_dict(self) -> dict:
        return {"input_kind": InputKind(self.input_kind).value, "input_dim": self.input_dim,
                "hidden": self.hidden, "out_width": self.out_width,
                "image_shape": list(self.image_shape), "conv_channels": self.conv_channels}

    @classmethod
    def from_dict(cls, d: dict) -> "BranchConfig":
        d = dict(d)
        d["input_kind"] = InputKind(d["input_kind"])
        d["image_shape"] = tuple(d["image_shape"])
        return cls(**d)


@dataclass(frozen=True)
class HeadVariant:
    kind: HeadKind = HeadKind.MSE_SUM
    length: int = 12
    tau: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "kind", HeadKind(self.kind))
        if not self.tau > 0:
            raise ValueError("temperature must be > 0")
        if self.length < 1:
            raise ValueError("embedding length must be >= 1")


def make_head_target(species_row, variant: HeadVariant, self_index: int | None = None) -> np.ndarray:
    """Training target for one sample of a species.

    MSE kinds return the row unchanged. SOFTMAX returns ``softmax(-row/tau)``;
    SOFTMAX_NEG1 first sets the species' own entry to -1.
    """
    row = np.asarray(species_row, dtype=np.float64)
    if not variant.kind.is_softmax:
        return row.copy()
    if self_index is None or not 0 <= self_index < len(row):
        raise TargetError("softmax heads need the species' own column")
    work = row.copy()
    if variant.kind is HeadKind.SOFTMAX_NEG1:
        work[self_index] = -1.0
    return softmax(-work / variant.tau)


# --- branches ---------------------------------------------------------------

@dataclass(eq=False)
class Branch:
    """A view encoder plus its temporary species classifier."""

    config: BranchConfig
    body: Sequential
    head: Dense
    classes: tuple[str, ...]
    frozen: bool = False

    @classmethod
    def create(cls, config: BranchConfig, classes: Sequence[str], seed: int = 0) -> "Branch":
        rng = make_rng(seed)
        body = config.build(rng)
        return cls(config, body, Dense(config.out_width, len(classes), rng), tuple(classes))

    def features(self, x) -> np.ndarray:
        return self.body(x, "eval")

    def class_probs(self, x) -> np.ndarray:
        return softmax(self.head.forward(self.features(x), "eval")[0])

    def parameters(self) -> dict[str, np.ndarray]:
        out = {f"body.{k}": v for k, v in self.body.parameters().items()}
        out.update({f"head.{k}": v for k, v in self.head.params.items()})
        return out

    def load_parameters(self, params: dict) -> None:
        body = {k[5:]: v for k, v in params.items() if k.startswith("body.")}
        head = {k[5:]: v for k, v in params.items() if k.startswith("head.")}
        self.body.load_parameters(body)
        self.head.load_parameters(head)


def _batches(n: int, batch_size: int, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _label_index(labels, classes) -> np.ndarray:
    pos = {c: i for i, c in enumerate(classes)}
    try:
        return np.array([pos[lab] for lab in labels], dtype=int)
    except KeyError as exc:
        raise DataError(f"label {exc.args[0]!r} not among the branch classes") from None


def train_branch(
    branch: Branch,
    x,
    labels: Sequence[str],
    epochs: int,
    lr: float = 1e-4,
    seed: int = 0,
    batch_size: int = 16,
    init_checkpoint=None,
) -> tuple[Branch, list[dict]]:
    """Fine-tune one branch with its temporary softmax classifier.

    ``init_checkpoint`` optionally loads starting weights (transfer
    initialisation); otherwise the seeded random init is used. Returns the
    branch and one ``{"epoch", "loss", "accuracy"}`` record per epoch.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = list(labels)
    if len(x) == 0 or len(labels) == 0:
        raise DataError("empty training set")
    if len(x) != len(labels):
        raise DataError("features and labels differ in length")
    if branch.frozen:
        raise StageError("cannot train a frozen branch")
    if init_checkpoint is not None:
        params, _ = load_checkpoint(init_checkpoint)
        branch.load_parameters(params)
    y = _label_index(labels, branch.classes)
    n_cls = len(branch.classes)
    onehot = np.eye(n_cls)[y]
    rng = make_rng([seed, 11])
    state = AdamState(lr=lr)
    history = []
    for epoch in range(epochs):
        total, correct = 0.0, 0
        for idx in _batches(len(x), batch_size, rng):
            feats, tape = branch.body.forward(x[idx], "train")
            logits, entry = branch.head.forward(feats, "train")
            value, dlogits = loss(LossKind.SOFT_CE, logits, onehot[idx])
            total += value * len(idx)
            correct += int((logits.argmax(axis=1) == y[idx]).sum())
            dfeat, head_grads = branch.head.backward(entry, dlogits)
            _, body_grads = branch.body.backward(tape, dfeat)
            grads = {f"body.{k}": v for k, v in body_grads.items()}
            grads.update({f"head.{k}": v for k, v in head_grads.items()})
            params, state = adam_step(branch.parameters(), grads, state)
            branch.load_parameters(params)
        history.append({"epoch": epoch + 1, "loss": total / len(x), "accuracy": correct / len(x)})
    return branch, history


# --- fused model ------------------------------------------------------------

class FusionNet:
    """Three branch bodies feeding concat -> SE -> ECA -> dense(L).

    Follows the container protocol: ``forward(views)`` takes a tuple of
    three arrays and returns ``(output, tape)``; ``backward(tape, dy)``
    returns ``(dviews, grads)``. Gradients of frozen branches are zero.
    """

    def __init__(self, bodies: Sequence[Sequential], fusion: Sequential):
        self.bodies = list(bodies)
        self.concat = Concat(axis=1)
        self.fusion = fusion
        self.frozen = [False] * len(self.bodies)

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for i, body in enumerate(self.bodies):
            out.update({f"branch{i}.{k}": v for k, v in body.parameters().items()})
        out.update({f"fusion.{k}": v for k, v in self.fusion.parameters().items()})
        return out

    def load_parameters(self, params: dict) -> None:
        for key, value in params.items():
            head, rest = key.split(".", 1)
            if head == "fusion":
                self.fusion.load_parameters({rest: value})
            else:
                self.bodies[int(head[len("branch"):])].load_parameters({rest: value})

    def branch_features(self, views, mode: str = "eval"):
        if len(views) != len(self.bodies) or any(v is None for v in views):
            raise DataError(f"expected {len(self.bodies)} views")
        return tuple(body.forward(v, mode) for body, v in zip(self.bodies, views))

    def forward(self, views, mode: str = "train"):
        outs = self.branch_features(views, mode)
        joined, centry = self.concat.forward(tuple(o[0] for o in outs), mode)
        y, ftape = self.fusion.forward(joined, mode)
        tape = Tape(entries=[centry], extra={"branch_tapes": [o[1] for o in outs], "fusion": ftape})
        return y, tape

    def backward(self, tape: Tape, dy):
        tape.consume()
        djoined, fgrads = self.fusion.backward(tape.extra["fusion"], dy)
        dfeats, _ = self.concat.backward(tape.entries[0], djoined)
        grads = {f"fusion.{k}": v for k, v in fgrads.items()}
        dviews = []
        for i, (body, btape, dfeat) in enumerate(zip(self.bodies, tape.extra["branch_tapes"], dfeats)):
            dx, bgrads = body.backward(btape, dfeat)
            for k, v in bgrads.items():
                grads[f"branch{i}.{k}"] = np.zeros_like(v) if self.frozen[i] else v
            dviews.append(dx)
        return tuple(dviews), grads

    def __call__(self, views, mode: str = "eval"):
        return self.forward(views, mode)[0]


def build_fusion(width: int, n_branches: int, length: int, seed: int = 0,
                 reduction: int = 4, eca_kernel: int = 3) -> Sequential:
    rng = make_rng([seed, 5])
    c = width * n_branches
    return Sequential([SEBlock(c, reduction, rng), ECABlock(c, eca_kernel, rng), Dense(c, length, rng)])


@dataclass(eq=False)
class ModelState:
    """Trained branches, fusion classifier and the reference embedding.

    ``targets`` holds the training species' genetic-distance rows; its
    columns are the embedding reference columns (length L).
    """

    branches: list[Branch]
    fusion: Sequential
    head: HeadVariant
    targets: EmbeddingMatrix
    freeze: dict = field(default_factory=lambda: {"branches": False})

    @property
    def classes(self) -> tuple[str, ...]:
        return self.branches[0].classes

    def net(self) -> FusionNet:
        net = FusionNet([b.body for b in self.branches], self.fusion)
        net.frozen = [b.frozen for b in self.branches]
        return net

    def freeze_branches(self) -> None:
        for b in self.branches:
            b.frozen = True
        self.freeze["branches"] = True

    def class_rows(self) -> np.ndarray:
        return np.vstack([self.targets.row(c) for c in self.classes])

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for i, b in enumerate(self.branches):
            out.update({f"branch{i}.{k}": v for k, v in b.parameters().items()})
        out.update({f"fusion.{k}": v for k, v in self.fusion.parameters().items()})
        return out


def new_model(
    classes: Sequence[str],
    targets: EmbeddingMatrix,
    head: HeadVariant | None = None,
    branch_configs: Sequence[BranchConfig] | None = None,
    seed: int = 0,
) -> ModelState:
    """Randomly initialised three-branch model over the given training classes."""
    configs = list(branch_configs or [BranchConfig()] * 3)
    widths = {c.out_width for c in configs}
    if len(widths) != 1:
        raise ValueError("all branches must share one output width")
    head = head or HeadVariant(HeadKind.MSE_SUM, targets.length)
    if head.length != targets.length:
        raise ValueError(f"head length {head.length} != target columns {targets.length}")
    missing = [c for c in classes if c not in targets.row_labels]
    if missing:
        raise DataError(f"no target row for {missing}")
    branches = [Branch.create(cfg, classes, seed=seed * 10 + i) for i, cfg in enumerate(configs)]
    fusion = build_fusion(widths.pop(), len(configs), targets.length, seed=seed)
    return ModelState(branches, fusion, head, targets)


def sample_targets(model: ModelState, labels: Sequence[str]) -> np.ndarray:
    rows = []
    for lab in labels:
        if lab not in model.targets.row_labels:
            raise DataError(f"no target row for {lab!r}")
        rows.append(make_head_target(model.targets.row(lab), model.head,
                                     model.targets.self_column(lab)))
    return np.vstack(rows)


def train_fusion(
    model: ModelState,
    views: Sequence,
    labels: Sequence[str],
    epochs: int,
    lr: float = 1e-4,
    seed: int = 0,
    batch_size: int = 16,
) -> tuple[ModelState, list[dict]]:
    """Train the fusion classifier on frozen branch features.

    Branch outputs are computed once and cached since frozen branches do
    not change. Returns the model and per-epoch ``{"epoch", "loss"}``.
    """
    if not model.freeze.get("branches") or not all(b.frozen for b in model.branches):
        raise StageError("branches must be frozen before fusion training")
    if len(views) != len(model.branches) or any(v is None for v in views):
        raise DataError(f"expected {len(model.branches)} views")
    labels = list(labels)
    if not labels:
        raise DataError("empty training set")
    if any(len(v) != len(labels) for v in views):
        raise DataError("views and labels differ in length")
    feats = np.concatenate([b.features(v) for b, v in zip(model.branches, views)], axis=1)
    targets = sample_targets(model, labels)
    loss_kind = {
        HeadKind.MSE_SUM: LossKind.MSE_SUM,
        HeadKind.MSE_MEAN: LossKind.MSE_MEAN,
    }.get(model.head.kind, LossKind.SOFT_CE)
    rng = make_rng([seed, 13])
    state = AdamState(lr=lr)
    history = []
    for epoch in range(epochs):
        total = 0.0
        for idx in _batches(len(labels), batch_size, rng):
            out, tape = model.fusion.forward(feats[idx], "train")
            value, dout = loss(loss_kind, out, targets[idx])
            total += value * len(idx)
            _, grads = model.fusion.backward(tape, dout)
            params, state = adam_step(model.fusion.parameters(), grads, state)
            model.fusion.load_parameters(params)
        history.append({"epoch": epoch + 1, "loss": total / len(labels)})
    return model, history


def fit_model(
    model: ModelState,
    views: Sequence,
    labels: Sequence[str],
    branch_epochs: int,
    fusion_epochs: int,
    lr: float = 1e-4,
    fusion_lr: float | None = None,
    seed: int = 0,
    batch_size: int = 16,
) -> tuple[ModelState, dict]:
    """Run both stages: per-branch training, freezing, then fusion training."""
    report = {"branches": []}
    for i, (branch, view) in enumerate(zip(model.branches, views)):
        _, hist = train_branch(branch, view, labels, branch_epochs, lr=lr,
                               seed=seed * 10 + i, batch_size=batch_size)
        report["branches"].append(hist)
    model.freeze_branches()
    _, report["fusion"] = train_fusion(model, views, labels, fusion_epochs,
                                       lr=fusion_lr if fusion_lr is not None else lr,
                                       seed=seed, batch_size=batch_size)
    return model, report


# --- prediction -------------------------------------------------------------

def _as_batch(model: ModelState, views):
    if views is None or len(views) != len(model.branches) or any(v is None for v in views):
        raise DataError(f"a sample needs all {len(model.branches)} views")
    arrs = [np.asarray(v, dtype=np.float64) for v in views]
    base = 1 if model.branches[0].config.input_kind is InputKind.FEATURE_VECTOR else 3
    single = arrs[0].ndim == base
    if single:
        arrs = [a[None] for a in arrs]
    return arrs, single


def decode_softmax_logits(logits, tau: float) -> np.ndarray:
    """Distances implied by logits under the soft-target construction."""
    logits = np.asarray(logits, dtype=np.float64)
    return tau * (logits.max(axis=-1, keepdims=True) - logits)


def raw_outputs(model: ModelState, views, mode=PredictMode.FUSION, branch: int | None = None):
    """Mode-native outputs: fusion head values, or averaged/single class posteriors."""
    mode = PredictMode(mode)
    arrs, single = _as_batch(model, views)
    if mode is PredictMode.FUSION:
        out = model.net()(tuple(arrs))
    elif mode is PredictMode.AVG_ENSEMBLE:
        out = np.mean([b.class_probs(a) for b, a in zip(model.branches, arrs)], axis=0)
    else:
        if branch is None or not 0 <= branch < len(model.branches):
            raise ValueError("SINGLE_BRANCH needs a branch index")
        out = model.branches[branch].class_probs(arrs[branch])
    return out[0] if single else out


def predict_embedding(model: ModelState, views, mode=PredictMode.FUSION,
                      branch: int | None = None) -> np.ndarray:
    """Predicted genetic-distance vector(s) of length L.

    FUSION returns the fusion head output (softmax heads decoded back to
    distances). Branch-classifier modes return the posterior-weighted mean
    of the training species' rows.
    """
    mode = PredictMode(mode)
    out = raw_outputs(model, views, mode, branch)
    if mode is PredictMode.FUSION:
        if model.head.kind.is_softmax:
            return decode_softmax_logits(out, model.head.tau)
        return out
    return out @ model.class_rows()


def classify_samples(
    model: ModelState,
    views,
    mode=PredictMode.FUSION,
    branch: int | None = None,
    refmat: EmbeddingMatrix | None = None,
    metric=MetricTag.COSINE,
) -> list[str]:
    """Species predictions for a batch of samples.

    Branch-classifier modes take the argmax posterior. FUSION with an MSE
    head maps the predicted row to the nearest ``refmat`` row under
    ``metric``; with a softmax head it picks the reference species whose own
    column has the largest logit.
    """
    mode = PredictMode(mode)
    out = np.atleast_2d(raw_outputs(model, views, mode, branch))
    if mode is not PredictMode.FUSION:
        return [model.classes[i] for i in out.argmax(axis=1)]
    refmat = refmat if refmat is not None else model.targets
    if model.head.kind.is_softmax:
        cols = [refmat.self_column(r) for r in refmat.row_labels]
        if all(c is not None for c in cols):
            return [refmat.row_labels[int(np.argmax(o[cols]))] for o in out]
        out = decode_softmax_logits(out, model.head.tau)
    return [refmat.row_labels[int(np.argmin(metric_distances(o, refmat.values, metric)))]
            for o in out]


# --- persistence ------------------------------------------------------------

def save_model(model: ModelState, path) -> None:
    params = model.parameters()
    meta = {
        "kind": "recognet",
        "classes": list(model.classes),
        "branch_configs": [b.config.to_dict() for b in model.branches],
        "head": {"kind": model.head.kind.value, "length": model.head.length, "tau": model.head.tau},
        "freeze": {"branches": bool(model.freeze.get("branches"))},
        "targets": {"rows": list(model.targets.row_labels), "cols": list(model.targets.col_labels),
                    "values": model.targets.values.tolist()},
    }
    save_checkpoint(path, params, meta)


def load_model(path) -> ModelState:
    params, meta = load_checkpoint(path)
    if meta.get("kind") != "recognet":
        raise ValueError("checkpoint does not hold a recognition model")
    t = meta["targets"]
    targets = EmbeddingMatrix(tuple(t["rows"]), tuple(t["cols"]), np.array(t["values"]))
    head = HeadVariant(HeadKind(meta["head"]["kind"]), meta["head"]["length"], meta["head"]["tau"])
    configs = [BranchConfig.from_dict(d) for d in meta["branch_configs"]]
    model = new_model(meta["classes"], targets, head, configs)
    for i, b in enumerate(model.branches):
        prefix = f"branch{i}."
        b.load_parameters({k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)})
    model.fusion.load_parameters({k[7:]: v for k, v in params.items() if k.startswith("fusion.")})
    if meta["freeze"]["branches"]:
        model.freeze_branches()
    return model


def with_head(model: ModelState, head: HeadVariant, seed: int = 0) -> ModelState:
    """Copy sharing the trained branches but with a fresh fusion classifier."""
    fusion = build_fusion(model.branches[0].config.out_width, len(model.branches), head.length, seed)
    return replace(model, fusion=fusion, head=head, freeze=dict(model.freeze))
