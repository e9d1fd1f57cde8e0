import numpy as np
import pytest

from nmc.container import (
    CompressedContainer,
    ContainerError,
    EncodeSettings,
    PipelineError,
    build_container,
    decode,
    encode,
    inspect,
    reconstruct,
    round_to_float32,
)
from nmc.inr import InrConfig, init_params, parameter_count
from nmc.mesh import Mesh, NormalizationTransform, normalize_unit_bbox
from nmc.subdivide import midpoint_subdivide
from nmc.synth import bumpy_icosphere, icosphere


@pytest.fixture(scope="module")
def tiny_encode():
    mesh = bumpy_icosphere(3, amplitude=0.04, frequency=5.0)
    settings = EncodeSettings(
        v_coarse=120,
        subdivision_level=2,
        inr=InrConfig(hidden_layers=3, hidden_width=12, ring_layers=2,
                      frequencies=4, epochs=30, batch_size=2048, seed=0),
        prune=True,
        prune_target=0.5,
        quantize=True,
        entropy_code=True,
        compute_gt_bound=False,
    )
    container, report = encode(mesh, settings)
    return mesh, settings, container, report


def test_write_read_bit_exact(tmp_path, tiny_encode):
    _, _, container, _ = tiny_encode
    path = tmp_path / "m.nmc"
    container.write(path)
    back = CompressedContainer.read(path)
    assert back.to_bytes() == container.to_bytes()
    assert np.array_equal(back.coarse_vertices, container.coarse_vertices)
    assert np.array_equal(back.quant_mins, container.quant_mins)
    # architecture fields survive; training-only fields are not serialized
    for field in ("hidden_layers", "hidden_width", "ring_layers", "frequencies",
                  "activation", "ln_eps"):
        assert getattr(back.config, field) == getattr(container.config, field)
    assert np.array_equal(back.transform.translation, container.transform.translation)
    assert back.transform.scale == container.transform.scale


def test_decode_deterministic(tiny_encode):
    _, _, container, _ = tiny_encode
    blob = container.to_bytes()
    a = decode(CompressedContainer.from_bytes(blob))
    b = decode(CompressedContainer.from_bytes(blob))
    assert np.array_equal(a.vertices, b.vertices)
    assert np.array_equal(a.faces, b.faces)


def test_decode_face_count_law(tiny_encode):
    _, settings, container, _ = tiny_encode
    out = decode(container)
    assert out.n_faces == 4**settings.subdivision_level * len(container.coarse_faces)


def test_encoder_and_decoder_reconstructions_agree(tiny_encode):
    _, settings, container, _ = tiny_encode
    # decoder-side path from the serialized bytes
    from_file = decode(CompressedContainer.from_bytes(container.to_bytes()))
    # encoder-side path from in-memory state
    in_memory = reconstruct(
        container.coarse_mesh(),
        container.subdivision_level,
        container.transform,
        container.decode_params(),
    )
    assert np.abs(from_file.vertices - in_memory.vertices).max() < 1e-6


def test_zeroed_payload_gives_subdivided_coarse(tiny_encode):
    _, settings, container, _ = tiny_encode
    cfg = container.config
    params = init_params(cfg)
    for name in params.tensors:
        params.tensors[name] = np.zeros_like(params.tensors[name])
    zeroed = build_container(
        container.coarse_mesh(),
        container.transform,
        container.subdivision_level,
        params,
        quantize=True,
        entropy_code=True,
    )
    parsed = CompressedContainer.from_bytes(zeroed.to_bytes())
    out = decode(parsed)
    sub = midpoint_subdivide(parsed.coarse_mesh(), parsed.subdivision_level)
    expected = parsed.transform.invert(sub.mesh.vertices)
    assert np.abs(out.vertices - expected).max() < 1e-12


def test_bad_magic():
    with pytest.raises(ContainerError, match="magic"):
        CompressedContainer.from_bytes(b"XXXX" + bytes(64))


def test_bad_version(tiny_encode):
    _, _, container, _ = tiny_encode
    blob = bytearray(container.to_bytes())
    blob[4] = 9
    with pytest.raises(ContainerError, match="version"):
        CompressedContainer.from_bytes(bytes(blob))


def test_truncation_everywhere(tiny_encode):
    _, _, container, _ = tiny_encode
    blob = container.to_bytes()
    for cut in (3, 8, 20, 40, len(blob) // 2, len(blob) - 1):
        with pytest.raises(ContainerError):
            CompressedContainer.from_bytes(blob[:cut])


def test_trailing_garbage_rejected(tiny_encode):
    _, _, container, _ = tiny_encode
    with pytest.raises(ContainerError, match="trailing"):
        CompressedContainer.from_bytes(container.to_bytes() + b"x")


def test_payload_length_mismatch(tiny_encode):
    _, _, container, _ = tiny_encode
    import nmc.codec as codec

    # stream decoding to a byte count that is neither 1 nor 4 bytes/param
    bogus = codec.huffman_encode(bytes(parameter_count(container.config) + 7))
    broken = CompressedContainer(
        config=container.config,
        subdivision_level=container.subdivision_level,
        transform=container.transform,
        coarse_vertices=container.coarse_vertices,
        coarse_faces=container.coarse_faces,
        quant_mins=container.quant_mins,
        quant_maxs=container.quant_maxs,
        stream=bogus,
    )
    with pytest.raises(ContainerError, match="matches neither"):
        broken.decode_params()


def test_inspect_totals_match_file(tmp_path, tiny_encode):
    _, _, container, _ = tiny_encode
    info = inspect(container)
    path = tmp_path / "c.nmc"
    container.write(path)
    assert info["bytes"]["total"] == path.stat().st_size
    assert info["parameter_count"] == parameter_count(container.config)
    assert info["payload_quantized"] is True
    # half the weights were pruned away; zero codes dominate accordingly
    assert info["decoded_zero_fraction"] > 0.3
    assert info["bytes"]["total_excluding_coarse"] < info["bytes"]["total"]


def test_npqc_container_larger_and_float(tiny_encode):
    mesh, settings, container, _ = tiny_encode
    params = container.decode_params()
    npqc = build_container(
        container.coarse_mesh(),
        container.transform,
        container.subdivision_level,
        params,
        quantize=False,
        entropy_code=False,
    )
    assert len(npqc.to_bytes()) > len(container.to_bytes())
    assert not npqc.is_quantized()
    back = npqc.decode_params()
    for name in params.tensors:
        assert np.abs(
            back.tensors[name] - params.tensors[name].astype(np.float32)
        ).max() == 0.0


def test_entropy_disabled_stores_flat_table(tiny_encode):
    _, _, container, _ = tiny_encode
    params = container.decode_params()
    raw = build_container(
        container.coarse_mesh(),
        container.transform,
        container.subdivision_level,
        params,
        quantize=True,
        entropy_code=False,
    )
    assert raw.stream.store_raw
    assert (raw.stream.lengths == 8).all()
    assert len(raw.stream.payload) == parameter_count(container.config)
    out_a = decode(raw)
    out_b = decode(container)
    assert np.array_equal(out_a.vertices, out_b.vertices)


def test_encode_rejects_degenerate_faces():
    v = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]], dtype=float)
    f = np.array([[0, 1, 2], [0, 1, 3]])  # first face is collinear
    settings = EncodeSettings(
        v_coarse=3, subdivision_level=1,
        inr=InrConfig(hidden_layers=2, hidden_width=8, ring_layers=1, epochs=1),
    )
    with pytest.raises(PipelineError) as err:
        encode(Mesh(v, f), settings)
    assert "degenerate" in str(err.value)


def test_encode_rejects_non_manifold():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0, -1, 0]], dtype=float)
    f = np.array([[0, 1, 2], [0, 1, 3], [0, 1, 4]])
    settings = EncodeSettings(
        v_coarse=4, subdivision_level=1,
        inr=InrConfig(hidden_layers=2, hidden_width=8, ring_layers=1, epochs=1),
    )
    with pytest.raises(PipelineError) as err:
        encode(Mesh(v, f), settings)
    assert err.value.stage == "validate+normalize"
    assert "edge-manifold" in str(err.value)


def test_encode_report_fields(tiny_encode):
    mesh, settings, container, report = tiny_encode
    assert report.original_vertices == mesh.n_vertices
    assert report.coarse_vertices == len(container.coarse_vertices)
    assert report.container_bytes == len(container.to_bytes())
    assert report.compression_ratio > 1.0
    assert 0.45 <= report.sparsity <= 0.55
    assert np.isfinite(report.final_loss)
    assert len(report.history) == settings.inr.epochs
    d = report.to_dict()
    assert d["container_kb"] == pytest.approx(report.container_bytes / 1024.0)


def test_header_field_range_checked():
    cfg = InrConfig(hidden_layers=2, hidden_width=8, ring_layers=1, frequencies=2)
    params = init_params(cfg)
    coarse = round_to_float32(icosphere(1))
    with pytest.raises(ContainerError, match="u8"):
        build_container(
            coarse, NormalizationTransform.identity(), 300, params
        ).to_bytes()


def test_round_to_float32_idempotent():
    m = icosphere(1)
    r1 = round_to_float32(m)
    r2 = round_to_float32(r1)
    assert np.array_equal(r1.vertices, r2.vertices)
    assert (r1.vertices.astype(np.float32).astype(np.float64) == r1.vertices).all()
