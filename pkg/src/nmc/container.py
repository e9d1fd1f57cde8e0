"""On-disk compressed format and the end-to-end encode / decode drivers.

File layout, little-endian throughout:

    magic "NMC1" (4B) | version u8
    Q u8 | l u8 | k u8 | g u8 | s u8 | activation u8 | ln_eps f32
    transform f32 x4 (tx, ty, tz, scale)
    v u32 | f u32 | positions f32 x 3v | indices u32 x 3f
    per-tensor quant range (min f32, max f32), tensor count from the header
    huffman table 128B (nibble-packed code lengths) | payload bit length u64
    payload bytes

The payload decodes to either one byte per parameter (quantized codes) or four
bytes per parameter (raw float32 weights); the decoder infers the mode from
the decoded length, so no flags are needed.
"""

from __future__ import annotations

import math
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import codec, inr
from .codec import HuffmanStream
from .mesh import (
    Mesh,
    MeshError,
    NormalizationTransform,
    degenerate_faces,
    normalize_unit_bbox,
    raw_size_bits,
    validate_edge_manifold,
)
from .simplify import qslim_decimate_with_ssp
from .subdivide import bake_training_set, inference_set, midpoint_subdivide, ssp_gt_quality

MAGIC = b"NMC1"
VERSION = 1
ACTIVATION_IDS = {"relu": 0}
ACTIVATION_NAMES = {v: k for k, v in ACTIVATION_IDS.items()}


class ContainerError(ValueError):
    """Malformed or inconsistent container data."""


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"encode stage '{stage}' failed: {cause}")


@dataclass
class CompressedContainer:
    config: inr.InrConfig
    subdivision_level: int
    transform: NormalizationTransform
    coarse_vertices: np.ndarray      # (v, 3) float32
    coarse_faces: np.ndarray         # (f, 3) uint32
    quant_mins: np.ndarray           # (T,) float32
    quant_maxs: np.ndarray           # (T,) float32
    stream: HuffmanStream

    def coarse_mesh(self) -> Mesh:
        return Mesh(
            self.coarse_vertices.astype(np.float64),
            self.coarse_faces.astype(np.int64),
        )

    def to_bytes(self) -> bytes:
        cfg = self.config
        for name, value in (
            ("Q", cfg.frequencies), ("l", cfg.hidden_layers), ("k", cfg.hidden_width),
            ("g", cfg.ring_layers), ("s", self.subdivision_level),
        ):
            if not 0 <= value <= 255:
                raise ContainerError(f"header field {name}={value} does not fit u8")
        out = bytearray()
        out += MAGIC
        out += struct.pack(
            "<BBBBBBBf",
            VERSION,
            cfg.frequencies,
            cfg.hidden_layers,
            cfg.hidden_width,
            cfg.ring_layers,
            self.subdivision_level,
            ACTIVATION_IDS[cfg.activation],
            cfg.ln_eps,
        )
        t = self.transform
        out += struct.pack(
            "<ffff", t.translation[0], t.translation[1], t.translation[2], t.scale
        )
        v = len(self.coarse_vertices)
        f = len(self.coarse_faces)
        out += struct.pack("<II", v, f)
        out += np.ascontiguousarray(self.coarse_vertices, dtype="<f4").tobytes()
        out += np.ascontiguousarray(self.coarse_faces, dtype="<u4").tobytes()
        ranges = np.empty((len(self.quant_mins), 2), dtype="<f4")
        ranges[:, 0] = self.quant_mins
        ranges[:, 1] = self.quant_maxs
        out += ranges.tobytes()
        out += codec.pack_length_table(self.stream.lengths)
        out += struct.pack("<Q", self.stream.bit_length)
        out += self.stream.payload
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CompressedContainer":
        if len(data) < 4 or data[:4] != MAGIC:
            raise ContainerError("bad magic; not a compressed mesh container")
        off = 4
        try:
            version, q, l, k, g, s, act_id, ln_eps = struct.unpack_from("<BBBBBBBf", data, off)
            off += struct.calcsize("<BBBBBBBf")
            if version != VERSION:
                raise ContainerError(f"unsupported container version {version}")
            if act_id not in ACTIVATION_NAMES:
                raise ContainerError(f"unknown activation id {act_id}")
            tx, ty, tz, scale = struct.unpack_from("<ffff", data, off)
            off += 16
            v, f = struct.unpack_from("<II", data, off)
            off += 8
            need = 12 * v
            positions = np.frombuffer(data, dtype="<f4", count=3 * v, offset=off)
            off += need
            indices = np.frombuffer(data, dtype="<u4", count=3 * f, offset=off)
            off += 12 * f
            cfg = inr.InrConfig(
                hidden_layers=l, hidden_width=k, ring_layers=g,
                frequencies=q, activation=ACTIVATION_NAMES[act_id],
                ln_eps=float(np.float32(ln_eps)),
            )
            n_tensors = len(inr.tensor_specs(cfg))
            ranges = np.frombuffer(data, dtype="<f4", count=2 * n_tensors, offset=off)
            off += 8 * n_tensors
            table = data[off : off + 128]
            lengths = codec.unpack_length_table(table)
            off += 128
            (bit_length,) = struct.unpack_from("<Q", data, off)
            off += 8
            payload_len = (bit_length + 7) // 8
            payload = data[off : off + payload_len]
            if len(payload) != payload_len:
                raise ContainerError("truncated payload")
            off += payload_len
        except ContainerError:
            raise
        except (struct.error, ValueError) as exc:
            raise ContainerError(f"truncated container: {exc}") from None
        if off != len(data):
            raise ContainerError(f"{len(data) - off} trailing bytes after payload")
        ranges = ranges.reshape(-1, 2)
        return cls(
            config=cfg,
            subdivision_level=s,
            transform=NormalizationTransform(
                translation=np.array([tx, ty, tz], dtype=np.float64),
                scale=float(scale),
            ),
            coarse_vertices=positions.reshape(-1, 3).copy(),
            coarse_faces=indices.reshape(-1, 3).copy(),
            quant_mins=ranges[:, 0].copy(),
            quant_maxs=ranges[:, 1].copy(),
            stream=HuffmanStream(
                lengths=lengths,
                bit_length=int(bit_length),
                payload=bytes(payload),
                store_raw=bool((lengths == 8).all()),
            ),
        )

    def write(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def read(cls, path) -> "CompressedContainer":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def decode_params(self) -> inr.InrParams:
        payload = codec.huffman_decode(self.stream)
        n_params = inr.parameter_count(self.config)
        if len(payload) == n_params:
            codes = codec.codes_from_payload(self.config, payload)
            model = codec.QuantizedModel(
                config=self.config,
                mins=self.quant_mins,
                maxs=self.quant_maxs,
                codes=codes,
            )
            return codec.dequantize(model)
        if len(payload) == 4 * n_params:
            return codec.params_from_float_payload(self.config, payload)
        raise ContainerError(
            f"decoded payload length {len(payload)} matches neither "
            f"{n_params} codes nor {4 * n_params} float bytes"
        )

    def is_quantized(self) -> bool:
        payload = codec.huffman_decode(self.stream)
        return len(payload) == inr.parameter_count(self.config)


# ---------------------------------------------------------------------------
# encode
# ---------------------------------------------------------------------------

@dataclass
class EncodeSettings:
    v_coarse: int
    subdivision_level: int
    inr: inr.InrConfig
    prune: bool = True
    prune_target: float = 0.5
    prune_steps: int = 5
    prune_epochs: tuple[int, ...] | None = None
    quantize: bool = True
    entropy_code: bool = True
    compute_gt_bound: bool = True
    metric_samples: int = 20_000
    metric_seed: int = 0


@dataclass
class EncodeReport:
    stage_seconds: dict = field(default_factory=dict)
    original_vertices: int = 0
    original_faces: int = 0
    coarse_vertices: int = 0
    coarse_faces: int = 0
    subdivided_vertices: int = 0
    decimation_stopped_early: bool = False
    final_loss: float = float("nan")
    sparsity: float = 1.0
    raw_bits: float = 0.0
    container_bytes: int = 0
    compression_ratio: float = 0.0
    gt_d_pm: float | None = None
    gt_d_norm: float | None = None
    history: list = field(default_factory=list)
    # in-memory handles for diagnostics and rebuilds; never serialized
    trained_params: "inr.InrParams | None" = None
    normalized_mesh: "Mesh | None" = None
    transform: "NormalizationTransform | None" = None
    coarse_mesh: "Mesh | None" = None

    def to_dict(self) -> dict:
        return {
            "stage_seconds": {k: round(v, 3) for k, v in self.stage_seconds.items()},
            "original_vertices": self.original_vertices,
            "original_faces": self.original_faces,
            "coarse_vertices": self.coarse_vertices,
            "coarse_faces": self.coarse_faces,
            "subdivided_vertices": self.subdivided_vertices,
            "decimation_stopped_early": self.decimation_stopped_early,
            "final_loss": self.final_loss,
            "sparsity": self.sparsity,
            "raw_bits": self.raw_bits,
            "raw_kb": self.raw_bits / 8.0 / 1024.0,
            "container_bytes": self.container_bytes,
            "container_kb": self.container_bytes / 1024.0,
            "compression_ratio": self.compression_ratio,
            "ssp_gt_d_pm": self.gt_d_pm,
            "ssp_gt_d_norm_deg": self.gt_d_norm,
        }


def build_payload_stream(
    params: inr.InrParams, quantize: bool, entropy_code: bool
) -> tuple[HuffmanStream, np.ndarray, np.ndarray]:
    """Serialize trained weights to (stream, mins, maxs) per the settings."""
    if quantize:
        model = codec.quantize_weights(params)
        payload = model.payload_bytes()
        mins, maxs = model.mins, model.maxs
    else:
        payload = codec.float_payload(params)
        specs = inr.tensor_specs(params.config)
        mins = np.array([params.tensors[s.name].min() for s in specs], dtype=np.float32)
        maxs = np.array([params.tensors[s.name].max() for s in specs], dtype=np.float32)
    if entropy_code:
        stream = codec.huffman_encode(payload)
    else:
        stream = HuffmanStream(
            lengths=np.full(256, 8, dtype=np.uint8),
            bit_length=8 * len(payload),
            payload=payload,
            store_raw=True,
        )
    return stream, mins, maxs


def build_container(
    coarse: Mesh,
    transform: NormalizationTransform,
    subdivision_level: int,
    params: inr.InrParams,
    quantize: bool = True,
    entropy_code: bool = True,
) -> CompressedContainer:
    stream, mins, maxs = build_payload_stream(params, quantize, entropy_code)
    # store at serialized (float32) precision so to_bytes/from_bytes round-trips
    # the dataclass exactly
    transform32 = NormalizationTransform(
        translation=transform.translation.astype(np.float32).astype(np.float64),
        scale=float(np.float32(transform.scale)),
    )
    return CompressedContainer(
        config=params.config,
        subdivision_level=subdivision_level,
        transform=transform32,
        coarse_vertices=coarse.vertices.astype(np.float32),
        coarse_faces=coarse.faces.astype(np.uint32),
        quant_mins=mins,
        quant_maxs=maxs,
        stream=stream,
    )


def round_to_float32(mesh: Mesh) -> Mesh:
    """Container-resolution coarse geometry; shared by encoder and decoder."""
    return Mesh(mesh.vertices.astype(np.float32).astype(np.float64), mesh.faces)


def encode(
    mesh: Mesh, settings: EncodeSettings, progress=None
) -> tuple[CompressedContainer, EncodeReport]:
    report = EncodeReport()
    report.original_vertices = mesh.n_vertices
    report.original_faces = mesh.n_faces

    def timed(stage, fn):
        t0 = time.perf_counter()
        try:
            result = fn()
        except Exception as exc:
            raise PipelineError(stage, exc) from exc
        report.stage_seconds[stage] = time.perf_counter() - t0
        return result

    def check_input():
        manifold = validate_edge_manifold(mesh)
        if not manifold.is_edge_manifold:
            raise MeshError(
                f"input is not edge-manifold: {len(manifold.non_manifold_edges)} "
                f"offending edges, e.g. {manifold.non_manifold_edges[:3]}"
            )
        normalized, transform = normalize_unit_bbox(mesh)
        bad = degenerate_faces(normalized)
        if len(bad):
            raise MeshError(
                f"{len(bad)} degenerate faces in normalized mesh, e.g. {bad[:3].tolist()}"
            )
        return normalized, transform

    normalized, transform = timed("validate+normalize", check_input)
    report.raw_bits = raw_size_bits(mesh)

    coarse64, ssp_map = timed(
        "decimate+ssp", lambda: qslim_decimate_with_ssp(normalized, settings.v_coarse)
    )
    coarse = round_to_float32(coarse64)
    ssp_map.replace_coarse(coarse)
    report.coarse_vertices = coarse.n_vertices
    report.coarse_faces = coarse.n_faces
    report.decimation_stopped_early = ssp_map.stopped_early

    sub = timed("subdivide", lambda: midpoint_subdivide(coarse, settings.subdivision_level))
    tset = timed("bake", lambda: bake_training_set(sub, ssp_map))
    report.subdivided_vertices = sub.mesh.n_vertices

    schedule = None
    if settings.prune and settings.prune_target < 1.0:
        schedule = codec.prune_schedule(
            settings.prune_target,
            steps=settings.prune_steps,
            epochs=settings.prune_epochs,
            total_epochs=settings.inr.epochs,
        )
    result = timed(
        "train", lambda: inr.train(tset, settings.inr, prune_schedule=schedule, progress=progress)
    )
    report.final_loss = result.final_loss
    report.sparsity = result.mask.keep_fraction
    report.history = result.history
    report.trained_params = result.params
    report.normalized_mesh = normalized
    report.transform = transform
    report.coarse_mesh = coarse

    container = timed(
        "serialize",
        lambda: build_container(
            coarse,
            transform,
            settings.subdivision_level,
            result.params,
            quantize=settings.quantize,
            entropy_code=settings.entropy_code,
        ),
    )
    report.container_bytes = len(container.to_bytes())
    report.compression_ratio = report.raw_bits / (8.0 * report.container_bytes)

    if settings.compute_gt_bound:
        def gt():
            q = ssp_gt_quality(
                sub, tset, normalized, n=settings.metric_samples, seed=settings.metric_seed
            )
            return q
        q = timed("gt-bound", gt)
        report.gt_d_pm = q.d_pm
        report.gt_d_norm = q.d_norm
    return container, report


# ---------------------------------------------------------------------------
# decode
# ---------------------------------------------------------------------------

def reconstruct(
    coarse: Mesh,
    subdivision_level: int,
    transform: NormalizationTransform,
    params: inr.InrParams,
) -> Mesh:
    """Subdivide, displace by the network, restore model-space scale."""
    sub = midpoint_subdivide(coarse, subdivision_level)
    tset = inference_set(sub.mesh)
    displacements = inr.predict_displacements(params, tset)
    restored = transform.invert(sub.mesh.vertices + displacements)
    return Mesh(restored, sub.mesh.faces, validate=False)


def decode(container: CompressedContainer) -> Mesh:
    params = container.decode_params()
    return reconstruct(
        container.coarse_mesh(),
        container.subdivision_level,
        container.transform,
        params,
    )


def inspect(container: CompressedContainer) -> dict:
    """Byte-accurate breakdown of a container plus payload statistics."""
    cfg = container.config
    v = len(container.coarse_vertices)
    f = len(container.coarse_faces)
    n_tensors = len(inr.tensor_specs(cfg))
    header_bytes = 4 + struct.calcsize("<BBBBBBBf") + 16 + 8
    coarse_bytes = 12 * v + 12 * f
    quant_bytes = 8 * n_tensors
    table_bytes = 128
    payload_bytes = (container.stream.bit_length + 7) // 8
    total = header_bytes + coarse_bytes + quant_bytes + table_bytes + 8 + payload_bytes

    payload = codec.huffman_decode(container.stream)
    n_params = inr.parameter_count(cfg)
    quantized = len(payload) == n_params
    if quantized:
        codes = codec.codes_from_payload(cfg, payload)
        zero_count = 0
        for i, spec in enumerate(inr.tensor_specs(cfg)):
            mn = float(container.quant_mins[i])
            mx = float(container.quant_maxs[i])
            if mx <= mn:
                zero_count += codes[spec.name].size if mn == 0.0 else 0
                continue
            if mn <= 0.0 <= mx:
                c0 = int(np.clip(round(-mn / (mx - mn) * 255.0), 0, 255))
                zero_count += int((codes[spec.name] == c0).sum())
    else:
        flat = np.frombuffer(payload, dtype="<f4")
        zero_count = int((flat == 0.0).sum())
    return {
        "config": {
            "Q": cfg.frequencies,
            "l": cfg.hidden_layers,
            "k": cfg.hidden_width,
            "g": cfg.ring_layers,
            "s": container.subdivision_level,
            "activation": cfg.activation,
            "ln_eps": cfg.ln_eps,
        },
        "coarse_vertices": v,
        "coarse_faces": f,
        "parameter_count": n_params,
        "payload_quantized": quantized,
        "decoded_zero_fraction": zero_count / n_params,
        "bytes": {
            "header": header_bytes,
            "coarse_mesh": coarse_bytes,
            "quant_metadata": quant_bytes,
            "huffman_table": table_bytes,
            "payload_bit_length_field": 8,
            "payload": payload_bytes,
            "total": total,
            "total_excluding_coarse": total - coarse_bytes,
        },
        "coarse_raw_size_bits": 32.0 * 3 * v + 3.0 * f * (math.log2(v) if v > 1 else 0.0),
    }
