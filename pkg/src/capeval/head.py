"""Trainable scoring head: shared-trunk MLP with sigmoid outputs.

The head maps a fused feature vector to P scores in (0, 1):

    y_hat = sigmoid(out_W @ act(trunk_W @ x + trunk_b) + out_b)

`hidden == 0` removes the trunk entirely, leaving the plain affine map
sigmoid(W x + b). Three modes share the implementation:

    per_perspective - three features per sample, one output row each
    shared_prompt   - one feature per sample, all three output rows
    single_score    - one feature per sample, one output row

Parameters are float64 in memory; checkpoints store float32 per the file
contract. Training is fully deterministic given the seed.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erf

from .errors import CheckpointError, ValidationError
from .stats import kendall_tau_c

MODES = ("per_perspective", "shared_prompt", "single_score")
ACTIVATIONS = ("tanh", "gelu", "identity")  # identity is a test hook

_MODE_CODES = {m: i for i, m in enumerate(MODES)}
_ACT_CODES = {a: i for i, a in enumerate(ACTIVATIONS)}

CHECKPOINT_MAGIC = b"VELAHEAD"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<8sHBBIIB")

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def output_names(mode: str) -> tuple[str, ...]:
    if mode == "single_score":
        return ("score",)
    return ("desc", "rel", "flu")


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activation(name: str, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return act(a) and act'(a)."""
    if name == "tanh":
        h = np.tanh(a)
        return h, 1.0 - h * h
    if name == "gelu":
        cdf = 0.5 * (1.0 + erf(a * _INV_SQRT2))
        pdf = np.exp(-0.5 * a * a) * _INV_SQRT2PI
        return a * cdf, cdf + a * pdf
    if name == "identity":
        return a, np.ones_like(a)
    raise ValidationError(f"unknown activation {name!r}")


@dataclass
class HeadParams:
    """All trainable state. Shapes:

    trunk_W (hidden, d_in), trunk_b (hidden,),
    out_W (P, hidden) or (P, d_in) when hidden == 0, out_b (P,).
    """

    trunk_W: np.ndarray
    trunk_b: np.ndarray
    out_W: np.ndarray
    out_b: np.ndarray
    activation: str
    mode: str

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValidationError(f"unknown head mode {self.mode!r}")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        for name in ("trunk_W", "trunk_b", "out_W", "out_b"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            setattr(self, name, arr)
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite values")
        if self.trunk_W.ndim != 2 or self.out_W.ndim != 2:
            raise ValidationError("weight matrices must be 2-D")
        hidden = self.trunk_W.shape[0]
        if self.trunk_b.shape != (hidden,):
            raise ValidationError("trunk_b shape mismatch")
        expected_in = hidden if hidden > 0 else self.d_in
        if self.out_W.shape[1] != expected_in:
            raise ValidationError("out_W width inconsistent with trunk")
        if self.out_b.shape != (self.n_outputs,):
            raise ValidationError("out_b shape mismatch")
        p_expected = 1 if self.mode == "single_score" else 3
        if self.n_outputs != p_expected:
            raise ValidationError(
                f"mode {self.mode} needs {p_expected} outputs, "
                f"got {self.n_outputs}"
            )

    @property
    def hidden(self) -> int:
        return self.trunk_W.shape[0]

    @property
    def d_in(self) -> int:
        return self.trunk_W.shape[1] if self.hidden > 0 else self.out_W.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.out_W.shape[0]

    @property
    def param_count(self) -> int:
        return (
            self.trunk_W.size + self.trunk_b.size + self.out_W.size + self.out_b.size
        )

    def copy(self) -> "HeadParams":
        return HeadParams(
            trunk_W=self.trunk_W.copy(),
            trunk_b=self.trunk_b.copy(),
            out_W=self.out_W.copy(),
            out_b=self.out_b.copy(),
            activation=self.activation,
            mode=self.mode,
        )

    def tensors(self) -> tuple[np.ndarray, ...]:
        return (self.trunk_W, self.trunk_b, self.out_W, self.out_b)


def init_head_params(
    d_in: int,
    hidden: int,
    mode: str,
    activation: str = "tanh",
    rng: Optional[np.random.Generator] = None,
    seed: int = 0,
) -> HeadParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases."""
    if d_in <= 0:
        raise ValidationError("d_in must be positive")
    if hidden < 0:
        raise ValidationError("hidden must be >= 0")
    if rng is None:
        rng = np.random.default_rng(seed)
    p = 1 if mode == "single_score" else 3
    bound_in = 1.0 / np.sqrt(d_in)
    if hidden > 0:
        trunk_W = rng.uniform(-bound_in, bound_in, size=(hidden, d_in))
        bound_out = 1.0 / np.sqrt(hidden)
        out_W = rng.uniform(-bound_out, bound_out, size=(p, hidden))
    else:
        trunk_W = np.zeros((0, d_in))
        out_W = rng.uniform(-bound_in, bound_in, size=(p, d_in))
    return HeadParams(
        trunk_W=trunk_W,
        trunk_b=np.zeros(hidden),
        out_W=out_W,
        out_b=np.zeros(p),
        activation=activation,
        mode=mode,
    )


def _check_inputs(params: HeadParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.d_in:
        raise ValidationError(
            f"feature length {x.shape[-1]} != configured d_in {params.d_in}"
        )
    if not np.all(np.isfinite(x)):
        raise ValidationError("feature contains non-finite values")
    return x


def forward(params: HeadParams, x: Sequence[float]) -> np.ndarray:
    """All P scores for one feature vector; callers select rows by mode."""
    return forward_batch(params, np.asarray(x, dtype=np.float64)[None, :])[0]


def forward_batch(params: HeadParams, X: np.ndarray) -> np.ndarray:
    X = _check_inputs(params, np.atleast_2d(X))
    if params.hidden > 0:
        A = X @ params.trunk_W.T + params.trunk_b
        H, _ = _activation(params.activation, A)
    else:
        H = X
    Z = H @ params.out_W.T + params.out_b
    Y = sigmoid(Z)
    if not np.all(np.isfinite(Y)):
        raise ValidationError("non-finite intermediate in forward pass")
    return Y


def mse_loss(predicted, target) -> float:
    """Mean of squared residuals over every scalar component."""
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValidationError(f"shape mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValidationError("empty batch")
    r = p - t
    return float(np.mean(r * r))


@dataclass(frozen=True)
class TrainingExample:
    """One sample's contribution: k feature rows, output rows, targets."""

    sample_id: str
    inputs: np.ndarray  # (k, d_in)
    rows: np.ndarray  # (k,) output-row indices
    targets: np.ndarray  # (k,)


@dataclass(frozen=True)
class Batch:
    """Flattened scalar components of a group of examples."""

    X: np.ndarray  # (B, d_in)
    rows: np.ndarray  # (B,)
    targets: np.ndarray  # (B,)

    @classmethod
    def from_examples(cls, examples: Sequence[TrainingExample]) -> "Batch":
        if not examples:
            raise ValidationError("empty batch")
        X = np.concatenate([np.atleast_2d(e.inputs) for e in examples])
        rows = np.concatenate([np.asarray(e.rows, dtype=np.intp) for e in examples])
        targets = np.concatenate(
            [np.asarray(e.targets, dtype=np.float64) for e in examples]
        )
        if not (len(X) == len(rows) == len(targets)):
            raise ValidationError("ragged example components")
        return cls(X=X, rows=rows, targets=targets)


@dataclass
class HeadGrads:
    trunk_W: np.ndarray
    trunk_b: np.ndarray
    out_W: np.ndarray
    out_b: np.ndarray
    loss: float

    def tensors(self) -> tuple[np.ndarray, ...]:
        return (self.trunk_W, self.trunk_b, self.out_W, self.out_b)


def batch_loss(params: HeadParams, batch: Batch) -> float:
    Y = forward_batch(params, batch.X)
    picked = Y[np.arange(len(batch.rows)), batch.rows]
    return mse_loss(picked, batch.targets)


def gradients(params: HeadParams, batch: Batch) -> HeadGrads:
    """Analytic gradients of the mean-squared error through the head."""
    X = _check_inputs(params, batch.X)
    B = len(batch.targets)
    if B == 0:
        raise ValidationError("empty batch")
    if np.any(batch.rows < 0) or np.any(batch.rows >= params.n_outputs):
        raise ValidationError("output-row index out of range")

    if params.hidden > 0:
        A = X @ params.trunk_W.T + params.trunk_b
        H, dH = _activation(params.activation, A)
    else:
        H = X
        dH = None
    Z = H @ params.out_W.T + params.out_b
    Y = sigmoid(Z)

    idx = np.arange(B)
    picked = Y[idx, batch.rows]
    resid = picked - batch.targets
    loss = float(np.mean(resid * resid))

    # dL/dz for the selected rows; all other rows contribute nothing.
    g = 2.0 * resid * picked * (1.0 - picked) / B
    G = np.zeros_like(Y)
    G[idx, batch.rows] = g

    d_out_W = G.T @ H
    d_out_b = G.sum(axis=0)
    if params.hidden > 0:
        dA = (G @ params.out_W) * dH
        d_trunk_W = dA.T @ X
        d_trunk_b = dA.sum(axis=0)
    else:
        d_trunk_W = np.zeros_like(params.trunk_W)
        d_trunk_b = np.zeros_like(params.trunk_b)

    return HeadGrads(
        trunk_W=d_trunk_W,
        trunk_b=d_trunk_b,
        out_W=d_out_W,
        out_b=d_out_b,
        loss=loss,
    )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    lr: float = 1.0e-4
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 4
    weight_decay: float = 0.01
    patience: int = 1
    hidden: int = 640
    activation: str = "tanh"
    seed: int = 0
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValidationError("lr must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValidationError("betas must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValidationError("patience must be >= 1")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class AdamWState:
    m: tuple[np.ndarray, ...]
    v: tuple[np.ndarray, ...]
    step: int = 0

    @classmethod
    def init(cls, params: HeadParams) -> "AdamWState":
        return cls(
            m=tuple(np.zeros_like(t) for t in params.tensors()),
            v=tuple(np.zeros_like(t) for t in params.tensors()),
        )


def adamw_step(
    params: HeadParams, grads: HeadGrads, state: AdamWState, config: TrainConfig
) -> tuple[HeadParams, AdamWState]:
    """One decoupled-weight-decay adaptive update, in place."""
    tensors = params.tensors()
    gs = grads.tensors()
    for t, g, m, v in zip(tensors, gs, state.m, state.v):
        if t.shape != g.shape:
            raise ValidationError("gradient shape mismatch")
        if t.shape != m.shape:
            raise ValidationError("optimizer state shape mismatch")
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    bias1 = 1.0 - b1**state.step
    bias2 = 1.0 - b2**state.step
    for t, g, m, v in zip(tensors, gs, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / bias1
        v_hat = v / bias2
        # Decay acts on the pre-update parameter (decoupled form).
        t *= 1.0 - config.lr * config.weight_decay
        t -= config.lr * (m_hat / (np.sqrt(v_hat) + config.eps))
    return params, state


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_tau: dict[str, float]
    val_tau_mean: float

    def as_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_tau": dict(self.val_tau),
            "val_tau_mean": self.val_tau_mean,
        }


@dataclass
class TrainHistory:
    epochs: list[EpochRecord]
    best_epoch: int
    stopped_early: bool
    mode: str
    seed: int
    config: dict

    def as_dict(self) -> dict:
        return {
            "epochs": [e.as_dict() for e in self.epochs],
            "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early,
            "mode": self.mode,
            "seed": self.seed,
            "config": self.config,
        }


def validation_tau(
    params: HeadParams, examples: Sequence[TrainingExample]
) -> dict[str, float]:
    """Rank correlation of predictions vs targets per output row."""
    batch = Batch.from_examples(examples)
    Y = forward_batch(params, batch.X)
    picked = Y[np.arange(len(batch.rows)), batch.rows]
    names = output_names(params.mode)
    out: dict[str, float] = {}
    for r, name in enumerate(names):
        mask = batch.rows == r
        if not np.any(mask):
            raise ValidationError(f"no validation targets for output {name!r}")
        out[name] = kendall_tau_c(picked[mask], batch.targets[mask])
    return out


def train(
    train_examples: Sequence[TrainingExample],
    val_examples: Sequence[TrainingExample],
    config: TrainConfig,
    mode: str,
    d_in: int,
    val_metric: Optional[Callable[[HeadParams, int], dict[str, float]]] = None,
) -> tuple[HeadParams, TrainHistory]:
    """Seeded training loop with patience-based early stopping.

    Stops once the mean validation tau fails to improve for
    `config.patience` consecutive epochs and returns the parameters from
    the best epoch. `val_metric` replaces the built-in validation
    correlation (test hook).
    """
    if not train_examples:
        raise ValidationError("empty training split")
    if not val_examples and val_metric is None:
        raise ValidationError("empty validation split")

    rng = np.random.default_rng(config.seed)
    params = init_head_params(
        d_in, config.hidden, mode, activation=config.activation, rng=rng
    )
    state = AdamWState.init(params)

    best_mean = -np.inf
    best_epoch = 0
    best_params = params.copy()
    bad_epochs = 0
    stopped_early = False
    records: list[EpochRecord] = []

    n = len(train_examples)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total_sq = 0.0
        total_count = 0
        for start in range(0, n, config.batch_size):
            chunk = [train_examples[i] for i in order[start : start + config.batch_size]]
            batch = Batch.from_examples(chunk)
            grads = gradients(params, batch)
            adamw_step(params, grads, state, config)
            total_sq += grads.loss * len(batch.targets)
            total_count += len(batch.targets)
        train_loss = total_sq / total_count

        if val_metric is not None:
            val_tau = val_metric(params, epoch)
        else:
            val_tau = validation_tau(params, val_examples)
        mean_tau = float(np.mean(list(val_tau.values())))
        records.append(EpochRecord(epoch, train_loss, val_tau, mean_tau))

        if mean_tau > best_mean:
            best_mean = mean_tau
            best_epoch = epoch
            best_params = params.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                stopped_early = True
                break

    history = TrainHistory(
        epochs=records,
        best_epoch=best_epoch,
        stopped_early=stopped_early,
        mode=mode,
        seed=config.seed,
        config=config.as_dict(),
    )
    return best_params, history


def save_checkpoint(
    params: HeadParams, path: str | Path, metadata: Optional[dict] = None
) -> None:
    """Fixed-order float32 tensors followed by a JSON metadata trailer."""
    meta = dict(metadata or {})
    with Path(path).open("wb") as f:
        f.write(
            _CKPT_HEADER.pack(
                CHECKPOINT_MAGIC,
                CHECKPOINT_VERSION,
                _MODE_CODES[params.mode],
                _ACT_CODES[params.activation],
                params.d_in,
                params.hidden,
                params.n_outputs,
            )
        )
        for tensor in params.tensors():
            f.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
        f.write(json.dumps(meta, sort_keys=True).encode("utf-8"))


def load_checkpoint(
    path: str | Path, expect_d_in: Optional[int] = None
) -> tuple[HeadParams, dict]:
    data = Path(path).read_bytes()
    if len(data) < _CKPT_HEADER.size:
        raise CheckpointError("checkpoint too short for header")
    magic, version, mode_code, act_code, d_in, hidden, p = _CKPT_HEADER.unpack(
        data[: _CKPT_HEADER.size]
    )
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        mode = MODES[mode_code]
        activation = ACTIVATIONS[act_code]
    except IndexError:
        raise CheckpointError("unknown mode/activation code") from None
    if expect_d_in is not None and d_in != expect_d_in:
        raise CheckpointError(
            f"checkpoint d_in {d_in} != configured d_in {expect_d_in}"
        )

    out_width = hidden if hidden > 0 else d_in
    shapes = ((hidden, d_in), (hidden,), (p, out_width), (p,))
    offset = _CKPT_HEADER.size
    tensors = []
    for shape in shapes:
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = 4 * count
        if offset + nbytes > len(data):
            raise CheckpointError(
                f"truncated checkpoint: tensor payload ends at byte {offset + nbytes}"
            )
        arr = np.frombuffer(data[offset : offset + nbytes], dtype="<f4")
        tensors.append(arr.astype(np.float64).reshape(shape))
        offset += nbytes
    try:
        meta = json.loads(data[offset:].decode("utf-8")) if offset < len(data) else {}
    except (ValueError, UnicodeDecodeError):
        raise CheckpointError("malformed checkpoint metadata trailer") from None

    params = HeadParams(
        trunk_W=tensors[0],
        trunk_b=tensors[1],
        out_W=tensors[2],
        out_b=tensors[3],
        activation=activation,
        mode=mode,
    )
    return params, meta
