"""Displacement MLP with one-ring feature accumulation, trained by manual backprop.

The main branch is a dense MLP over positionally-encoded vertex coordinates.
In the first ``ring_layers`` hidden layers, a parallel auxiliary branch embeds
each neighbor's encoding through its own linear chain; the edge-length-weighted
sum of those features is folded into the main pre-activation, halved, then
layer-normalized and passed through the activation. Influence therefore never
propagates past a vertex's immediate neighbors, no matter how deep the net is.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .subdivide import TrainingSet


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"loss became non-finite at epoch {epoch}")


@dataclass(frozen=True)
class InrConfig:
    hidden_layers: int                 # l
    hidden_width: int                  # k
    ring_layers: int = 4               # g, one-ring-augmented prefix
    frequencies: int = 10              # Q
    epochs: int = 3500
    batch_size: int = 2048
    lr0: float = 1e-3
    seed: int = 0
    activation: str = "relu"
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.ring_layers > self.hidden_layers:
            raise ValueError("ring_layers must not exceed hidden_layers")
        if self.ring_layers < 0 or self.hidden_layers < 1:
            raise ValueError("need at least one hidden layer and ring_layers >= 0")
        if self.frequencies < 1:
            raise ValueError("frequencies must be >= 1")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation: {self.activation}")
        # the container stores ln_eps as float32; pin it there so encoder-side
        # training and decoder-side inference share the exact same epsilon
        object.__setattr__(self, "ln_eps", float(np.float32(self.ln_eps)))

    @property
    def input_width(self) -> int:
        return 6 * self.frequencies


@dataclass(frozen=True)
class TensorSpec:
    name: str
    shape: tuple[int, ...]
    kind: str  # "weight" | "bias" | "ln"


def tensor_specs(cfg: InrConfig) -> list[TensorSpec]:
    """Canonical tensor order; also the container payload serialization order."""
    l, k, g, d0 = cfg.hidden_layers, cfg.hidden_width, cfg.ring_layers, cfg.input_width
    dims = [d0] + [k] * l
    specs = [TensorSpec(f"w{t}", (dims[t], k), "weight") for t in range(l)]
    specs.append(TensorSpec("w_out", (k, 3), "weight"))
    specs += [TensorSpec(f"aw{t}", (dims[t], k), "weight") for t in range(g)]
    specs += [TensorSpec(f"b{t}", (k,), "bias") for t in range(l)]
    specs.append(TensorSpec("b_out", (3,), "bias"))
    specs += [TensorSpec(f"ab{t}", (k,), "bias") for t in range(g)]
    specs += [TensorSpec(f"lg{t}", (k,), "ln") for t in range(l)]
    specs += [TensorSpec(f"lo{t}", (k,), "ln") for t in range(l)]
    return specs


def parameter_count(cfg: InrConfig) -> int:
    return sum(int(np.prod(s.shape)) for s in tensor_specs(cfg))


@dataclass
class InrParams:
    config: InrConfig
    tensors: dict[str, np.ndarray]

    def copy(self) -> "InrParams":
        return InrParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]


def init_params(cfg: InrConfig, rng: np.random.Generator | None = None) -> InrParams:
    """He-style uniform fan-in init; the output head starts at zero so the
    freshly initialized network is exactly the zero displacement field."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    tensors: dict[str, np.ndarray] = {}
    for spec in tensor_specs(cfg):
        if spec.kind == "weight" and spec.name != "w_out":
            limit = np.sqrt(6.0 / spec.shape[0])
            tensors[spec.name] = rng.uniform(-limit, limit, size=spec.shape)
        elif spec.name.startswith("lg"):
            tensors[spec.name] = np.ones(spec.shape)
        else:
            tensors[spec.name] = np.zeros(spec.shape)
    return InrParams(cfg, tensors)


def positional_encode(points: np.ndarray, frequencies: int) -> np.ndarray:
    """Sin/cos embedding at octave frequencies: 3 coords -> 6*frequencies features."""
    p = np.asarray(points, dtype=np.float64)
    scales = np.pi * (2.0 ** np.arange(frequencies))
    ang = p[..., :, None] * scales                      # (..., 3, Q)
    out = np.empty(p.shape[:-1] + (3, 2 * frequencies))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out.reshape(p.shape[:-1] + (6 * frequencies,))


@dataclass
class VertexBatch:
    inputs: np.ndarray          # (B, 6Q) encoded vertex positions
    nbr_inputs: np.ndarray      # (M, 6Q) encoded neighbor positions
    nbr_starts: np.ndarray      # (B,) row offsets into the neighbor block
    nbr_counts: np.ndarray      # (B,)
    nbr_segments: np.ndarray    # (M,) owning batch row per neighbor, nondecreasing
    nbr_weights: np.ndarray     # (M,) edge lengths
    targets: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.inputs)


def make_batch(
    tset: TrainingSet,
    indices: np.ndarray,
    encoded: np.ndarray,
    with_targets: bool = True,
) -> VertexBatch:
    """Assemble a batch for the given vertex indices from precomputed encodings."""
    idx = np.asarray(indices, dtype=np.int64)
    counts = tset.nbr_counts[idx]
    starts_out = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
    m = int(counts.sum())
    flat = np.arange(m, dtype=np.int64) + np.repeat(tset.nbr_starts[idx] - starts_out, counts)
    nbr_vertex = tset.nbr_indices[flat]
    return VertexBatch(
        inputs=encoded[idx],
        nbr_inputs=encoded[nbr_vertex],
        nbr_starts=starts_out,
        nbr_counts=counts,
        nbr_segments=np.repeat(np.arange(len(idx), dtype=np.int64), counts),
        nbr_weights=tset.nbr_elens[flat].copy(),
        targets=tset.targets[idx].copy() if with_targets else None,
    )


def _segment_sum(values: np.ndarray, starts: np.ndarray, counts: np.ndarray) -> np.ndarray:
    out = np.zeros((len(starts), values.shape[1]))
    if values.shape[0] == 0 or len(starts) == 0:
        return out
    idx = np.minimum(starts, values.shape[0] - 1)
    sums = np.add.reduceat(values, idx, axis=0)
    nonempty = counts > 0
    out[nonempty] = sums[nonempty]
    return out


def _fake_quantize(x: np.ndarray, bits: int) -> np.ndarray:
    """Round-trip through an affine grid spanning each feature's batch range."""
    if x.shape[0] == 0:
        return x
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    span = hi - lo
    live = span > 0
    if not live.any():
        return x
    levels = float(2**bits - 1)
    out = x.copy()
    q = np.round((x[:, live] - lo[live]) / span[live] * levels)
    out[:, live] = lo[live] + q / levels * span[live]
    return out


def forward(
    params: InrParams,
    batch: VertexBatch,
    act_quant_bits: int | None = None,
    want_cache: bool = False,
):
    """Predict displacements for a batch; optionally simulate quantized activations.

    Each row's output depends only on its own inputs and its neighbor block,
    never on other batch rows.
    """
    cfg = params.config
    t_ = params.tensors
    g = cfg.ring_layers
    x = batch.inputs
    a = batch.nbr_inputs
    e = batch.nbr_weights[:, None]
    cache = {"x": [x], "a": [a], "z": [], "mu": [], "inv": [], "h": [], "y": []}
    for t in range(cfg.hidden_layers):
        if t < g:
            a = a @ t_[f"aw{t}"] + t_[f"ab{t}"]
            if act_quant_bits is not None:
                a = _fake_quantize(a, act_quant_bits)
            s = _segment_sum(a * e, batch.nbr_starts, batch.nbr_counts)
            z = 0.5 * (x @ t_[f"w{t}"] + t_[f"b{t}"] + s)
        else:
            z = x @ t_[f"w{t}"] + t_[f"b{t}"]
        mu = z.mean(axis=1, keepdims=True)
        var = ((z - mu) ** 2).mean(axis=1)
        inv = 1.0 / np.sqrt(var + cfg.ln_eps)
        h = (z - mu) * inv[:, None]
        y = h * t_[f"lg{t}"] + t_[f"lo{t}"]
        x = np.maximum(y, 0.0)
        if act_quant_bits is not None:
            x = _fake_quantize(x, act_quant_bits)
        if want_cache:
            cache["a"].append(a)
            cache["x"].append(x)
            cache["z"].append(z)
            cache["mu"].append(mu)
            cache["inv"].append(inv)
            cache["h"].append(h)
            cache["y"].append(y)
    pred = x @ t_["w_out"] + t_["b_out"]
    if not np.isfinite(pred).all():
        bad = int(np.nonzero(~np.isfinite(pred).all(axis=1))[0][0])
        raise FloatingPointError(f"non-finite network output at batch row {bad}")
    if want_cache:
        cache["pred"] = pred
        return pred, cache
    return pred


def loss_mse(pred: np.ndarray, targets: np.ndarray) -> float:
    """Mean over the batch of the squared Euclidean displacement error."""
    d = pred - targets
    return float((d * d).sum() / len(pred))


def backward(params: InrParams, batch: VertexBatch):
    """Loss, full parameter gradients, and predictions for one batch."""
    cfg = params.config
    t_ = params.tensors
    g = cfg.ring_layers
    b_size = len(batch)
    pred, cache = forward(params, batch, want_cache=True)
    targets = batch.targets
    loss = loss_mse(pred, targets)

    grads = {name: np.zeros_like(arr) for name, arr in t_.items()}
    dpred = 2.0 * (pred - targets) / b_size
    grads["w_out"] = cache["x"][-1].T @ dpred
    grads["b_out"] = dpred.sum(axis=0)
    dx = dpred @ t_["w_out"].T

    dsum_rows: dict[int, np.ndarray] = {}
    for t in range(cfg.hidden_layers - 1, -1, -1):
        y = cache["y"][t]
        h = cache["h"][t]
        inv = cache["inv"][t]
        dy = dx * (y > 0.0)
        grads[f"lg{t}"] = (dy * h).sum(axis=0)
        grads[f"lo{t}"] = dy.sum(axis=0)
        dh = dy * t_[f"lg{t}"]
        m1 = dh.mean(axis=1, keepdims=True)
        m2 = (dh * h).mean(axis=1, keepdims=True)
        dz = (dh - m1 - h * m2) * inv[:, None]
        if t < g:
            dz = 0.5 * dz
            # gradient into the neighbor sum: broadcast back to neighbor rows
            dsum_rows[t] = dz[batch.nbr_segments] * batch.nbr_weights[:, None]
        grads[f"w{t}"] = cache["x"][t].T @ dz
        grads[f"b{t}"] = dz.sum(axis=0)
        dx = dz @ t_[f"w{t}"].T

    if g > 0:
        da = dsum_rows[g - 1]
        for t in range(g - 1, -1, -1):
            grads[f"aw{t}"] = cache["a"][t].T @ da
            grads[f"ab{t}"] = da.sum(axis=0)
            if t > 0:
                da = da @ t_[f"aw{t}"].T + dsum_rows[t - 1]
    return loss, grads, pred


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    if not 0 <= step <= total_steps:
        raise ValueError("step outside [0, total_steps]")
    if total_steps == 0:
        return lr0
    return lr0 * 0.5 * (1.0 + np.cos(np.pi * step / total_steps))


@dataclass
class AdamWState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def adamw_init(params: InrParams) -> AdamWState:
    return AdamWState(
        m={k: np.zeros_like(v) for k, v in params.tensors.items()},
        v={k: np.zeros_like(v) for k, v in params.tensors.items()},
    )


def adamw_step(
    params: InrParams,
    grads: dict[str, np.ndarray],
    state: AdamWState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 1e-2,
    mask=None,
) -> None:
    """Decoupled-weight-decay Adam update in place; masked entries stay zero.

    Weight decay applies to weight matrices only, not biases or norm params.
    """
    b1, b2 = betas
    state.t += 1
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    decayed = {s.name for s in tensor_specs(params.config) if s.kind == "weight"}
    for name, p in params.tensors.items():
        grad = grads[name]
        active = mask.active.get(name) if mask is not None else None
        if active is not None:
            grad = grad * active
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        if weight_decay and name in decayed:
            update = update + weight_decay * p
        p -= lr * update
        if active is not None:
            p[~active] = 0.0


@dataclass
class TrainResult:
    params: InrParams
    mask: "object"
    history: list = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.history[-1][2] if self.history else float("nan")


def loss_history_csv(history) -> str:
    lines = ["epoch,lr,loss,sparsity"]
    for epoch, lr, loss, sparsity in history:
        lines.append(f"{epoch},{lr:.8g},{loss:.10g},{sparsity:.6f}")
    return "\n".join(lines) + "\n"


def train(
    tset: TrainingSet,
    cfg: InrConfig,
    prune_schedule=None,
    weight_decay: float = 1e-2,
    progress=None,
) -> TrainResult:
    """Fit the displacement field; deterministic for a fixed config seed.

    ``prune_schedule`` (see the model codec) triggers magnitude pruning at its
    listed epochs; fine-tuning between and after steps keeps masked weights at
    exactly zero.

    Targets are standardized for the optimizer (displacements are ~1e-3 of
    the bbox, far below a useful Adam step size) and the affine transform is
    folded into the output head afterwards, so the returned parameters and
    the reported losses are in original displacement units and the container
    format carries no normalization metadata.
    """
    from .codec import SparsityMask, l1_prune_step

    if len(tset) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg, rng)
    mask = SparsityMask.all_active(params)
    state = adamw_init(params)
    encoded = positional_encode(tset.inputs, cfg.frequencies)
    n = len(tset)

    target_offset = tset.targets.mean(axis=0)
    centered = tset.targets - target_offset
    target_scale = float(centered.std())
    if not np.isfinite(target_scale) or target_scale <= 0.0:
        target_scale = 1.0
    tset = TrainingSet(
        inputs=tset.inputs,
        targets=centered / target_scale,
        nbr_starts=tset.nbr_starts,
        nbr_counts=tset.nbr_counts,
        nbr_indices=tset.nbr_indices,
        nbr_elens=tset.nbr_elens,
    )
    steps_per_epoch = max(1, -(-n // cfg.batch_size))
    total_steps = cfg.epochs * steps_per_epoch
    if prune_schedule is not None:
        bad = [e for e in prune_schedule.epochs if e > cfg.epochs]
        if bad:
            raise ValueError(f"prune epochs {bad} exceed total epochs {cfg.epochs}")
    history = []
    step = 0
    lr = cfg.lr0
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        sq_err_total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            batch = make_batch(tset, idx, encoded)
            loss, grads, _ = backward(params, batch)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch)
            lr = cosine_lr(step, total_steps, cfg.lr0)
            adamw_step(params, grads, state, lr, weight_decay=weight_decay, mask=mask)
            step += 1
            sq_err_total += loss * len(idx)
        if prune_schedule is not None:
            keep = prune_schedule.keep_for_epoch(epoch)
            if keep is not None:
                l1_prune_step(params, mask, keep)
        history.append((epoch, lr, sq_err_total / n * target_scale**2, mask.keep_fraction))
        if progress is not None:
            progress(epoch, history[-1])
    params.tensors["w_out"] *= target_scale
    params.tensors["b_out"] = params.tensors["b_out"] * target_scale + target_offset
    return TrainResult(params=params, mask=mask, history=history)


def predict_displacements(
    params: InrParams, tset: TrainingSet, chunk: int = 4096
) -> np.ndarray:
    """Forward over every vertex of a training-set-shaped adjacency, chunked."""
    encoded = positional_encode(tset.inputs, params.config.frequencies)
    n = len(tset)
    out = np.empty((n, 3))
    for start in range(0, n, chunk):
        idx = np.arange(start, min(start + chunk, n))
        batch = make_batch(tset, idx, encoded, with_targets=False)
        out[idx] = forward(params, batch)
    return out
