"""Model compression: magnitude pruning, 8-bit quantization, Huffman coding."""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
from numba import njit

from .inr import InrConfig, InrParams, forward, parameter_count, tensor_specs

MAX_CODE_LENGTH = 15  # code lengths must fit the container's nibble-packed table


class HuffmanError(ValueError):
    """Malformed Huffman table or payload."""


# ---------------------------------------------------------------------------
# pruning
# ---------------------------------------------------------------------------

def prunable_names(params: InrParams) -> list[str]:
    """Hidden and auxiliary weight matrices.

    Biases, norm params and the output head are exempt: they are a negligible
    storage fraction, and the output head's entries are orders of magnitude
    smaller than hidden weights (displacements are tiny in normalized units),
    so a global magnitude percentile would always zero the whole head.
    """
    return [
        s.name
        for s in tensor_specs(params.config)
        if s.kind == "weight" and s.name != "w_out"
    ]


@dataclass
class SparsityMask:
    """Per-tensor keep masks over the prunable tensors.

    ``ideal_fraction`` tracks the exact cumulative keep product so repeated
    steps land within one parameter of the intended global sparsity.
    """

    active: dict[str, np.ndarray]
    ideal_fraction: float = 1.0

    @classmethod
    def all_active(cls, params: InrParams) -> "SparsityMask":
        return cls(
            active={n: np.ones_like(params.tensors[n], dtype=bool) for n in prunable_names(params)}
        )

    @property
    def total(self) -> int:
        return sum(a.size for a in self.active.values())

    @property
    def active_count(self) -> int:
        return sum(int(a.sum()) for a in self.active.values())

    @property
    def keep_fraction(self) -> float:
        t = self.total
        return self.active_count / t if t else 1.0


def l1_prune_step(params: InrParams, mask: SparsityMask, keep: float) -> SparsityMask:
    """Mask the lowest-magnitude fraction (1 - keep) of currently active weights.

    The percentile is global across all weight tensors; ties break on the
    flattened global index. Newly masked entries are zeroed in place.
    """
    if not 0.0 < keep <= 1.0:
        raise ValueError("keep fraction must be in (0, 1]")
    names = sorted(mask.active)
    mask.ideal_fraction *= keep
    if keep == 1.0:
        return mask
    target_active = int(round(mask.total * mask.ideal_fraction))
    values = []
    for name in names:
        a = mask.active[name]
        values.append(np.abs(params.tensors[name].ravel()[a.ravel()]))
    pooled = np.concatenate(values) if values else np.zeros(0)
    n_remove = len(pooled) - target_active
    if n_remove <= 0:
        return mask
    order = np.argsort(pooled, kind="stable")  # stable: ties keep global index order
    cut = pooled[order[n_remove - 1]]
    # mask strictly-below-cut everywhere, then fill the remainder at the cut
    # value in global index order
    remaining = n_remove
    for name in names:
        a = mask.active[name]
        t = params.tensors[name]
        flat_active = a.ravel()
        vals = np.abs(t.ravel())
        below = flat_active & (vals < cut)
        remaining -= int(below.sum())
        flat_active &= ~below
    for name in names:
        if remaining <= 0:
            break
        a = mask.active[name].ravel()
        vals = np.abs(params.tensors[name].ravel())
        at_cut = np.nonzero(a & (vals == cut))[0]
        take = at_cut[:remaining]
        a[take] = False
        remaining -= len(take)
    for name in names:
        params.tensors[name][~mask.active[name]] = 0.0
    return mask


@dataclass(frozen=True)
class PruneSchedule:
    epochs: tuple[int, ...]
    keep_per_step: float
    target: float

    def keep_for_epoch(self, epoch: int) -> float | None:
        return self.keep_per_step if epoch in self.epochs else None


DEFAULT_PRUNE_EPOCHS = (200, 400, 600, 800, 1000)


def prune_schedule(
    target_fraction: float,
    steps: int = 5,
    epochs=None,
    total_epochs: int | None = None,
) -> PruneSchedule:
    """Progressive schedule: each step keeps target_fraction**(1/steps).

    Default epochs are 200..1000 out of 3500; shorter runs keep the same
    fractional positions, which preserves the long fine-tuning tail after the
    last step.
    """
    if not 0.0 < target_fraction <= 1.0:
        raise ValueError("target keep fraction must be in (0, 1]")
    if epochs is None:
        if total_epochs is not None and total_epochs < 3500:
            epochs = tuple(
                max(1, round(total_epochs * e / 3500))
                for e in DEFAULT_PRUNE_EPOCHS[:steps]
            )
        else:
            epochs = DEFAULT_PRUNE_EPOCHS[:steps]
    epochs = tuple(int(e) for e in epochs)
    if len(epochs) != steps:
        raise ValueError("schedule length must equal the step count")
    if total_epochs is not None and epochs and max(epochs) > total_epochs:
        raise ValueError(f"prune epochs {epochs} exceed total epochs {total_epochs}")
    keep = target_fraction ** (1.0 / steps) if steps else 1.0
    return PruneSchedule(epochs=epochs, keep_per_step=keep, target=target_fraction)


# ---------------------------------------------------------------------------
# quantization
# ---------------------------------------------------------------------------

@dataclass
class QuantizedModel:
    config: InrConfig
    mins: np.ndarray            # (T,) float32, canonical tensor order
    maxs: np.ndarray            # (T,) float32
    codes: dict[str, np.ndarray]  # uint8, tensor shapes
    activation_quantization: bool = False

    def payload_bytes(self) -> bytes:
        order = [s.name for s in tensor_specs(self.config)]
        return b"".join(self.codes[name].tobytes() for name in order)


def quantize_weights(params: InrParams) -> QuantizedModel:
    """Per-tensor affine 8-bit quantization with float32 range endpoints."""
    specs = tensor_specs(params.config)
    mins = np.empty(len(specs), dtype=np.float32)
    maxs = np.empty(len(specs), dtype=np.float32)
    codes: dict[str, np.ndarray] = {}
    for i, spec in enumerate(specs):
        t = params.tensors[spec.name]
        if not np.isfinite(t).all():
            raise ValueError(f"non-finite values in tensor {spec.name}")
        mn = np.float32(t.min())
        mx = np.float32(t.max())
        mins[i] = mn
        maxs[i] = mx
        if mx <= mn:
            codes[spec.name] = np.zeros(t.shape, dtype=np.uint8)
        else:
            scaled = (t - np.float64(mn)) / (np.float64(mx) - np.float64(mn)) * 255.0
            codes[spec.name] = np.clip(np.round(scaled), 0, 255).astype(np.uint8)
    return QuantizedModel(config=params.config, mins=mins, maxs=maxs, codes=codes)


def dequantize(model: QuantizedModel) -> InrParams:
    specs = tensor_specs(model.config)
    if len(model.mins) != len(specs) or len(model.maxs) != len(specs):
        raise ValueError("quantization metadata does not match the architecture")
    tensors: dict[str, np.ndarray] = {}
    for i, spec in enumerate(specs):
        codes = model.codes[spec.name]
        if codes.shape != spec.shape:
            raise ValueError(f"code tensor {spec.name} has shape {codes.shape}, "
                             f"expected {spec.shape}")
        mn = np.float64(model.mins[i])
        mx = np.float64(model.maxs[i])
        if mx <= mn:
            tensors[spec.name] = np.full(spec.shape, mn)
        else:
            tensors[spec.name] = mn + codes.astype(np.float64) / 255.0 * (mx - mn)
    return InrParams(model.config, tensors)


def codes_from_payload(cfg: InrConfig, payload: bytes) -> dict[str, np.ndarray]:
    specs = tensor_specs(cfg)
    expected = parameter_count(cfg)
    if len(payload) != expected:
        raise ValueError(f"payload holds {len(payload)} codes, expected {expected}")
    out: dict[str, np.ndarray] = {}
    offset = 0
    flat = np.frombuffer(payload, dtype=np.uint8)
    for spec in specs:
        size = int(np.prod(spec.shape))
        out[spec.name] = flat[offset : offset + size].reshape(spec.shape).copy()
        offset += size
    return out


def float_payload(params: InrParams) -> bytes:
    order = [s.name for s in tensor_specs(params.config)]
    return b"".join(
        np.ascontiguousarray(params.tensors[n], dtype="<f4").tobytes() for n in order
    )


def params_from_float_payload(cfg: InrConfig, payload: bytes) -> InrParams:
    expected = 4 * parameter_count(cfg)
    if len(payload) != expected:
        raise ValueError(f"payload holds {len(payload)} bytes, expected {expected}")
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for spec in tensor_specs(cfg):
        size = int(np.prod(spec.shape))
        tensors[spec.name] = flat[offset : offset + size].reshape(spec.shape).copy()
        offset += size
    return InrParams(cfg, tensors)


def quantized_forward(model: QuantizedModel, batch, act_bits: int = 8) -> np.ndarray:
    """Evaluation-mode inference with per-batch dynamic activation quantization."""
    return forward(dequantize(model), batch, act_quant_bits=act_bits)


# ---------------------------------------------------------------------------
# canonical Huffman coding over the byte alphabet
# ---------------------------------------------------------------------------

@dataclass
class HuffmanStream:
    lengths: np.ndarray         # (256,) uint8 code lengths, 0 = absent symbol
    bit_length: int
    payload: bytes
    store_raw: bool = False     # set when the flat 8-bit fallback was used

    def compressed_bytes(self) -> int:
        return (self.bit_length + 7) // 8


def _huffman_lengths(freqs: np.ndarray) -> np.ndarray:
    present = np.nonzero(freqs)[0]
    lengths = np.zeros(256, dtype=np.uint8)
    if len(present) == 0:
        raise HuffmanError("cannot build a code for an empty input")
    if len(present) == 1:
        lengths[present[0]] = 1
        return lengths
    heap = [(int(freqs[s]), int(s), int(s)) for s in present]
    heapq.heapify(heap)
    parents: dict[int, int] = {}
    next_id = 256
    while len(heap) > 1:
        fa, _, ia = heapq.heappop(heap)
        fb, _, ib = heapq.heappop(heap)
        parents[ia] = next_id
        parents[ib] = next_id
        heapq.heappush(heap, (fa + fb, min(ia, ib), next_id))
        next_id += 1
    for s in present:
        depth = 0
        node = int(s)
        while node in parents:
            node = parents[node]
            depth += 1
        lengths[s] = depth
    if lengths.max() > MAX_CODE_LENGTH:
        lengths = _package_merge(freqs, MAX_CODE_LENGTH)
    return lengths


def _package_merge(freqs: np.ndarray, max_len: int) -> np.ndarray:
    """Optimal length-limited code lengths (coin-collector formulation)."""
    present = [int(s) for s in np.nonzero(freqs)[0]]
    n = len(present)
    if (1 << max_len) < n:
        raise HuffmanError("alphabet too large for the length limit")
    level: list[tuple[int, list[int]]] = []
    for _ in range(max_len):
        coins = sorted((int(freqs[s]), [s]) for s in present)
        merged: list[tuple[int, list[int]]] = []
        i = 0
        while i + 1 < len(level):
            merged.append((level[i][0] + level[i + 1][0], level[i][1] + level[i + 1][1]))
            i += 2
        level = sorted(coins + merged, key=lambda t: t[0])
    lengths = np.zeros(256, dtype=np.uint8)
    for _, symbols in level[: 2 * (n - 1)]:
        for s in symbols:
            lengths[s] += 1
    return lengths


def _canonical_codes(lengths: np.ndarray) -> dict[int, tuple[int, int]]:
    """Symbol -> (code, length), canonical order (length, then symbol)."""
    symbols = [(int(lengths[s]), s) for s in range(256) if lengths[s] > 0]
    symbols.sort()
    codes: dict[int, tuple[int, int]] = {}
    code = 0
    prev_len = symbols[0][0] if symbols else 0
    for length, sym in symbols:
        code <<= length - prev_len
        codes[sym] = (code, length)
        code += 1
        prev_len = length
    return codes


def validate_lengths(lengths: np.ndarray) -> None:
    present = np.nonzero(lengths)[0]
    if len(present) == 0:
        raise HuffmanError("empty code-length table")
    if lengths.max() > MAX_CODE_LENGTH:
        raise HuffmanError("code length exceeds the table limit")
    kraft = int(sum(1 << (MAX_CODE_LENGTH - int(lengths[s])) for s in present))
    if len(present) == 1:
        if lengths[present[0]] != 1:
            raise HuffmanError("single-symbol table must use code length 1")
        return
    if kraft != (1 << MAX_CODE_LENGTH):
        raise HuffmanError("code lengths violate Kraft equality")


def huffman_encode(data: bytes) -> HuffmanStream:
    """Canonical Huffman with a flat 8-bit fallback when coding cannot win."""
    if len(data) == 0:
        raise HuffmanError("refusing to encode an empty byte sequence")
    arr = np.frombuffer(data, dtype=np.uint8)
    freqs = np.bincount(arr, minlength=256).astype(np.int64)
    lengths = _huffman_lengths(freqs)
    total_bits = int((freqs * lengths).sum())
    if (total_bits + 7) // 8 + 128 > len(data):  # coding must beat payload + table
        flat = np.full(256, 8, dtype=np.uint8)
        return HuffmanStream(
            lengths=flat, bit_length=8 * len(data), payload=data, store_raw=True
        )
    codes = _canonical_codes(lengths)
    code_table = np.zeros(256, dtype=np.int64)
    len_table = np.zeros(256, dtype=np.int64)
    for sym, (code, length) in codes.items():
        code_table[sym] = code
        len_table[sym] = length
    out = np.zeros((total_bits + 7) // 8, dtype=np.uint8)
    _encode_kernel(arr, code_table, len_table, out)
    return HuffmanStream(
        lengths=lengths, bit_length=total_bits, payload=out.tobytes(), store_raw=False
    )


@njit(cache=True)
def _encode_kernel(data, code_table, len_table, out):
    acc = np.int64(0)
    acc_bits = 0
    pos = 0
    for i in range(data.shape[0]):
        s = data[i]
        acc = (acc << len_table[s]) | code_table[s]
        acc_bits += len_table[s]
        while acc_bits >= 8:
            acc_bits -= 8
            out[pos] = (acc >> acc_bits) & 0xFF
            pos += 1
            acc &= (np.int64(1) << acc_bits) - 1
    if acc_bits:
        out[pos] = (acc << (8 - acc_bits)) & 0xFF


def huffman_decode(stream: HuffmanStream) -> bytes:
    lengths = np.asarray(stream.lengths, dtype=np.uint8)
    validate_lengths(lengths)
    if stream.bit_length > 8 * len(stream.payload):
        raise HuffmanError("payload shorter than its declared bit length")
    if stream.store_raw or (lengths == 8).all():
        n = stream.bit_length // 8
        return stream.payload[:n]
    present = [(int(lengths[s]), s) for s in range(256) if lengths[s] > 0]
    present.sort()
    # canonical decoding tables indexed by code length
    count = np.zeros(MAX_CODE_LENGTH + 1, dtype=np.int64)
    for length, _ in present:
        count[length] += 1
    first_code = np.zeros(MAX_CODE_LENGTH + 2, dtype=np.int64)
    first_index = np.zeros(MAX_CODE_LENGTH + 2, dtype=np.int64)
    code = 0
    idx = 0
    for length in range(1, MAX_CODE_LENGTH + 1):
        first_code[length] = code
        first_index[length] = idx
        code = (code + count[length]) << 1
        idx += count[length]
    symbols = np.array([s for _, s in present], dtype=np.uint8)
    bits = np.unpackbits(np.frombuffer(stream.payload, dtype=np.uint8))[: stream.bit_length]
    out, status = _decode_kernel(
        bits, first_code, first_index, count, symbols, len(present) == 1
    )
    if status == 1:
        raise HuffmanError("invalid codeword in payload")
    if status == 2:
        raise HuffmanError("payload truncated mid-codeword")
    return out.tobytes()


@njit(cache=True)
def _decode_kernel(bits, first_code, first_index, count, symbols, single):
    out = np.empty(bits.shape[0], dtype=np.uint8)
    n = 0
    code = np.int64(0)
    length = 0
    for i in range(bits.shape[0]):
        code = (code << 1) | bits[i]
        length += 1
        if length > MAX_CODE_LENGTH:
            return out[:n], 1
        if single:
            if code != 0:
                return out[:n], 1
            out[n] = symbols[0]
            n += 1
            code = 0
            length = 0
            continue
        offset = code - first_code[length]
        if 0 <= offset < count[length]:
            out[n] = symbols[first_index[length] + offset]
            n += 1
            code = 0
            length = 0
    if length != 0:
        return out[:n], 2
    return out[:n], 0


def pack_length_table(lengths: np.ndarray) -> bytes:
    """256 nibbles, low nibble first: byte i holds symbols 2i and 2i+1."""
    lengths = np.asarray(lengths, dtype=np.uint8)
    if lengths.shape != (256,) or lengths.max() > 15:
        raise HuffmanError("length table must be 256 entries of at most 15")
    return bytes((lengths[0::2] | (lengths[1::2] << 4)).tobytes())


def unpack_length_table(packed: bytes) -> np.ndarray:
    if len(packed) != 128:
        raise HuffmanError("length table must be exactly 128 bytes")
    raw = np.frombuffer(packed, dtype=np.uint8)
    lengths = np.empty(256, dtype=np.uint8)
    lengths[0::2] = raw & 0x0F
    lengths[1::2] = raw >> 4
    return lengths
