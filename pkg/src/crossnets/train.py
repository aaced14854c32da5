"""Training loop (Adam on binary cross-entropy), rank-based AUC, and
checkpointing.

Runs are deterministic for fixed seeds: initialisation, shuffling and
optimizer state are all driven by explicit RNG streams, and summaries
carry no volatile fields (wall time is logged, not embedded), so repeated
runs produce byte-identical artifacts.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import configio as cio
from .analysis import flops_report, param_count
from .blocks import Model, ModelConfig, model_from_dict, model_to_dict
from .data import Dataset
from .engine import Node, Param, Tape, rng_from_seed, stable_sigmoid
from .errors import (
    ConfigError,
    ContractError,
    CorruptionError,
    MetricError,
    TrainingError,
)

log = logging.getLogger(__name__)

EVAL_BATCH = 8192


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    batch_size: int = 512
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_every: int = 0  # 0: evaluate only at the end
    seed: int = 0

    def validate(self) -> None:
        if self.steps < 1:
            raise ConfigError(f"train.steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0.0:
            raise ConfigError(f"train.learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ConfigError("train.beta1/beta2 must be in [0, 1)")
        if self.eval_every < 0:
            raise ConfigError(f"train.eval_every must be >= 0, got {self.eval_every}")


def train_from_dict(d: dict, path: str = "train") -> TrainConfig:
    cio.check_keys(
        d,
        {"steps", "batch_size", "learning_rate", "beta1", "beta2", "eps", "eval_every", "seed"},
        path,
    )
    cfg = TrainConfig(
        steps=cio.as_int(cio.take(d, "steps", path), f"{path}.steps"),
        batch_size=cio.as_int(d.get("batch_size", 512), f"{path}.batch_size"),
        learning_rate=cio.as_float(d.get("learning_rate", 1e-3), f"{path}.learning_rate"),
        beta1=cio.as_float(d.get("beta1", 0.9), f"{path}.beta1"),
        beta2=cio.as_float(d.get("beta2", 0.999), f"{path}.beta2"),
        eps=cio.as_float(d.get("eps", 1e-8), f"{path}.eps"),
        eval_every=cio.as_int(d.get("eval_every", 0), f"{path}.eval_every"),
        seed=cio.as_int(d.get("seed", 0), f"{path}.seed"),
    )
    cfg.validate()
    return cfg


def train_to_dict(cfg: TrainConfig) -> dict:
    return {
        "steps": cfg.steps,
        "batch_size": cfg.batch_size,
        "learning_rate": cfg.learning_rate,
        "beta1": cfg.beta1,
        "beta2": cfg.beta2,
        "eps": cfg.eps,
        "eval_every": cfg.eval_every,
        "seed": cfg.seed,
    }


# ---------------------------------------------------------------------------
# loss and metric


def bce_loss(tape: Tape, logits: Node, labels: np.ndarray) -> Node:
    """Mean softplus-stabilised binary cross-entropy (see Tape.bce_with_logits)."""
    return tape.bce_with_logits(logits, np.asarray(labels, dtype=np.float64).reshape(-1, 1))


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with tie-group average ranks:
    (wins + 0.5 * ties) / (n_pos * n_neg), computed by sorting."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if s.shape != y.shape:
        raise MetricError(f"auc: {s.shape[0]} scores vs {y.shape[0]} labels")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise MetricError("auc: labels must be exactly 0 or 1")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("auc: needs both classes present")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    _, starts, counts = np.unique(sorted_s, return_index=True, return_counts=True)
    # 1-based average rank of each tie group; exact in float64 (half-integers)
    group_ranks = starts + (counts + 1) / 2.0
    ranks = np.empty(s.size)
    ranks[order] = np.repeat(group_ranks, counts)
    rank_sum_pos = ranks[y == 1.0].sum()
    return float((rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Standard Adam with bias correction; state persists across steps."""

    def __init__(self, params: list[Param], config: TrainConfig):
        self.config = config
        self.params = params
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]

    def step(self, step_index: int) -> None:
        c = self.config
        bc1 = 1.0 - c.beta1**step_index
        bc2 = 1.0 - c.beta2**step_index
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p.value -= c.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


def adam_step(params: list[Param], state: "Adam", step_index: int) -> None:
    state.step(step_index)


# ---------------------------------------------------------------------------
# inference and the run loop


def predict_scores(model: Model, dataset: Dataset, batch: int = EVAL_BATCH) -> np.ndarray:
    """Sigmoid click scores for every row, evaluated in chunks."""
    out = np.empty(len(dataset))
    for at in range(0, len(dataset), batch):
        idx = slice(at, min(at + batch, len(dataset)))
        tape = Tape()
        logits = model.forward(tape, dataset.dense[idx], dataset.cat_ids[idx])
        out[idx] = stable_sigmoid(logits.value).ravel()
    return out


@dataclass
class TrainingSummary:
    final_train_loss: float
    test_auc: float
    teacher_auc: float | None
    flops_per_inference: int
    param_count: int
    wall_s: float  # kept at 0.0 so summaries are byte-reproducible
    history: list[dict] = field(default_factory=list)  # {"step", "test_auc"}

    def to_dict(self) -> dict:
        return {
            "final_train_loss": self.final_train_loss,
            "test_auc": self.test_auc,
            "teacher_auc": self.teacher_auc,
            "flops_per_inference": self.flops_per_inference,
            "param_count": self.param_count,
            "wall_s": self.wall_s,
            "history": self.history,
        }


def train_run(
    model_config: ModelConfig,
    train_config: TrainConfig,
    train_ds: Dataset,
    test_ds: Dataset,
    checkpoint_path: str | None = None,
) -> TrainingSummary:
    """Train a fresh model on the train split, evaluating AUC on the test
    split every eval_every steps and at the end. Aborts with TrainingError
    at the first non-finite loss. If checkpoint_path is given, the trained
    model is saved there."""
    train_config.validate()
    started = time.perf_counter()
    model = Model(model_config)
    optimizer = Adam(model.parameters(), train_config)
    rng = rng_from_seed(train_config.seed)

    n = len(train_ds)
    perm = rng.permutation(n)
    cursor = 0
    history: list[dict] = []
    loss_value = float("nan")
    for step in range(1, train_config.steps + 1):
        if cursor + train_config.batch_size > n:
            perm = rng.permutation(n)
            cursor = 0
        idx = perm[cursor : cursor + train_config.batch_size]
        cursor += train_config.batch_size

        tape = Tape()
        logits = model.forward(tape, train_ds.dense[idx], train_ds.cat_ids[idx])
        loss = bce_loss(tape, logits, train_ds.labels[idx])
        loss_value = float(loss.value[0, 0])
        if not np.isfinite(loss_value):
            raise TrainingError(f"training diverged: loss is not finite at step {step}", step=step)
        model.zero_grads()
        tape.backward(loss)
        optimizer.step(step)

        if train_config.eval_every and step % train_config.eval_every == 0:
            history.append(
                {"step": step, "test_auc": auc(predict_scores(model, test_ds), test_ds.labels)}
            )

    test_auc = (
        history[-1]["test_auc"]
        if history and history[-1]["step"] == train_config.steps
        else auc(predict_scores(model, test_ds), test_ds.labels)
    )
    t_auc = None
    if test_ds.teacher_probs is not None:
        t_auc = auc(test_ds.teacher_probs, test_ds.labels)
    elapsed = time.perf_counter() - started
    log.info("train_run finished in %.2fs (%d steps)", elapsed, train_config.steps)
    if checkpoint_path is not None:
        checkpoint_save(model, checkpoint_path, train_config)
    return TrainingSummary(
        final_train_loss=loss_value,
        test_auc=test_auc,
        teacher_auc=t_auc,
        flops_per_inference=flops_report(model_config).model_total,
        param_count=param_count(model_config),
        wall_s=0.0,
        history=history,
    )


# ---------------------------------------------------------------------------
# checkpoints: one JSON header line, then raw little-endian float64 payload


_CKPT_FORMAT = "crossnets-checkpoint-v1"


def checkpoint_save(model: Model, path: str, train_config: TrainConfig | None = None) -> None:
    manifest = []
    offset = 0
    for p in model.parameters():
        manifest.append(
            {"name": p.name, "rows": p.shape[0], "cols": p.shape[1], "offset": offset}
        )
        offset += p.size * 8
    header = {
        "format": _CKPT_FORMAT,
        "model_config": model_to_dict(model.config),
        "train_config": None if train_config is None else train_to_dict(train_config),
        "manifest": manifest,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for p in model.parameters():
            fh.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())


def checkpoint_read_header(path: str) -> dict:
    """Read config and manifest without touching the payload."""
    with open(path, "rb") as fh:
        line = fh.readline()
    if not line.endswith(b"\n"):
        raise CorruptionError(f"{path}: missing header line terminator")
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"{path}: unreadable header: {exc}") from None
    if header.get("format") != _CKPT_FORMAT:
        raise CorruptionError(f"{path}: unknown checkpoint format {header.get('format')!r}")
    return header


def checkpoint_load(path: str, expect_config: ModelConfig | None = None) -> Model:
    """Rebuild the model from the header and restore parameter values
    bit-exactly from the payload."""
    header = checkpoint_read_header(path)
    config = model_from_dict(header["model_config"], path="checkpoint.model_config")
    if expect_config is not None and model_to_dict(expect_config) != model_to_dict(config):
        raise ConfigError(f"{path}: checkpoint config does not match the expected config")
    model = Model(config)
    manifest = header["manifest"]
    params = model.parameters()
    if len(manifest) != len(params):
        raise CorruptionError(
            f"{path}: manifest lists {len(manifest)} params, model has {len(params)}"
        )
    with open(path, "rb") as fh:
        fh.readline()
        payload = fh.read()
    expected_bytes = sum(p.size * 8 for p in params)
    if len(payload) != expected_bytes:
        raise CorruptionError(
            f"{path}: payload is {len(payload)} bytes, manifest needs {expected_bytes}"
        )
    for entry, p in zip(manifest, params):
        if entry["name"] != p.name or (entry["rows"], entry["cols"]) != p.shape:
            raise CorruptionError(
                f"{path}: manifest entry {entry['name']!r} does not match param "
                f"{p.name!r} {p.shape}"
            )
        start = entry["offset"]
        chunk = payload[start : start + p.size * 8]
        p.value[...] = np.frombuffer(chunk, dtype="<f8").reshape(p.shape)
    return model
