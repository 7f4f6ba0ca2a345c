import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from freqscan.checkpoint import CheckpointError, MAGIC, load_checkpoint, read_checkpoint, save_checkpoint
from freqscan.model import (
    REFERENCE_PLAIN_MINI,
    Block,
    ModelConfig,
    analytic_parameter_count,
    build,
    count_parameters,
    estimate_flops,
    preset,
)
from freqscan.serialization import SerializationConfig, band_images
from freqscan.ssm import scan_sequential
from freqscan.tokenizer import bands_to_tensors


def small_config(K=2, cls=True, depth=2):
    ser = SerializationConfig(K=K, patch_size=4, embed_dim=8, image_size=16, stem_channels=2,
                              use_class_token=cls)
    return ModelConfig(depth=depth, embed_dim=8, state_size=3, mlp_ratio=2.0, num_classes=3,
                       serialization=ser)


def random_bands(cfg, n=2, seed=0):
    rng = np.random.default_rng(seed)
    per = [band_images(rng.random((cfg.serialization.image_size,) * 2), cfg.serialization) for _ in range(n)]
    return [torch.from_numpy(np.stack([p[k] for p in per])) for k in range(cfg.serialization.K)]


def test_residual_identity_exact():
    torch.manual_seed(0)
    blk = Block(8, 4, 16)
    with torch.no_grad():
        for lin in (blk.out_proj, blk.fc2):
            lin.weight.zero_()
            lin.bias.zero_()
    z = torch.randn(2, 13, 8)
    assert torch.equal(blk(z), z)


def test_model_identity_blocks_reduce_to_head_on_cls():
    cfg = small_config()
    m = build(cfg)
    with torch.no_grad():
        for blk in m.blocks:
            for lin in (blk.out_proj, blk.fc2):
                lin.weight.zero_()
                lin.bias.zero_()
    bands = random_bands(cfg)
    with torch.no_grad():
        z, seq = m.encode(bands)
        torch.testing.assert_close(z, seq.tokens, rtol=0, atol=0)
        expected = m.head(m.norm(m.tokenizer.cls_token.expand(2, -1)))
        torch.testing.assert_close(m(bands), expected)


def test_block_causality():
    torch.manual_seed(1)
    blk = Block(8, 4, 16)
    z = torch.randn(1, 20, 8)
    with torch.no_grad():
        y = blk(z)
        for s in (0, 9, 19):
            z2 = z.clone()
            z2[0, s] -= 2.0
            y2 = blk(z2)
            assert torch.equal(y[0, :s], y2[0, :s])
            assert not torch.equal(y[0, s], y2[0, s])


def layer_norm(v, g, b, eps=1e-5):
    mu = sum(v) / len(v)
    var = sum((x - mu) ** 2 for x in v) / len(v)
    return [(x - mu) / math.sqrt(var + eps) * gi + bi for x, gi, bi in zip(v, g, b)]


def test_single_position_block_by_hand():
    torch.manual_seed(2)
    D, N = 3, 2
    blk = Block(D, N, 4).double()
    z = torch.tensor([[0.3, -1.2, 0.8]], dtype=torch.float64)
    with torch.no_grad():
        out = blk(z)[0].tolist()

    P = {k: v.detach().numpy() for k, v in blk.named_parameters()}
    silu = lambda x: x / (1 + math.exp(-x))
    gelu = lambda x: 0.5 * x * (1 + math.erf(x / math.sqrt(2)))
    softplus = lambda x: math.log1p(math.exp(x))

    def affine(W, b, v):
        return [sum(W[i][j] * v[j] for j in range(len(v))) + b[i] for i in range(len(W))]

    zv = z[0].tolist()
    n1 = layer_norm(zv, P["norm1.weight"], P["norm1.bias"])
    u = [silu(x) for x in affine(P["in_proj.weight"], P["in_proj.bias"], n1)]
    A = [[-math.exp(a) for a in row] for row in P["ssm.A_log"]]
    Bv = affine(P["ssm.W_B"], [0] * N, u)
    Cv = affine(P["ssm.W_C"], [0] * N, u)
    dt = [softplus(x) for x in affine(P["ssm.W_delta"], P["ssm.b_delta"], u)]
    y = []
    for e in range(D):
        # h_0 = 0, so h_1 = B_bar x.
        h = [(math.exp(dt[e] * A[e][n]) - 1) / A[e][n] * Bv[n] * u[e] for n in range(N)]
        y.append(sum(Cv[n] * h[n] for n in range(N)) + P["ssm.D"][e] * u[e])
    t = [a + b for a, b in zip(zv, affine(P["out_proj.weight"], P["out_proj.bias"], y))]
    n2 = layer_norm(t, P["norm2.weight"], P["norm2.bias"])
    hidden = [gelu(x) for x in affine(P["fc1.weight"], P["fc1.bias"], n2)]
    expected = [a + b for a, b in zip(t, affine(P["fc2.weight"], P["fc2.bias"], hidden))]
    np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-12)


def test_single_band_matches_independent_path():
    cfg = small_config(K=1)
    m = build(cfg, seed=3).eval()
    img = np.random.default_rng(4).random((16, 16))
    with torch.no_grad():
        logits = m.predict_image(img)
        # Independent path: patchify the raw image, add tables, append cls, run blocks with the
        # sequential scan, read the last position.
        tok = m.tokenizer
        x = torch.from_numpy(img.astype(np.float32))[None, None]
        z = tok.patch_embed(x) + tok.pos_embed[0] + tok.band_embed[0]
        z = torch.cat([z, tok.cls_token[None, None]], dim=1)
        for blk in m.blocks:
            u = F.silu(blk.in_proj(blk.norm1(z)))
            t = z + blk.out_proj(scan_sequential(u, blk.ssm.weights))
            z = t + blk.fc2(F.gelu(blk.fc1(blk.norm2(t))))
        expected = m.head(m.norm(z[0, -1]))
    torch.testing.assert_close(logits, expected, rtol=1e-5, atol=1e-6)


def test_no_class_token_reads_last_position():
    cfg = small_config(cls=False)
    m = build(cfg, seed=5).eval()
    bands = random_bands(cfg)
    with torch.no_grad():
        z, seq = m.encode(bands)
        assert seq.class_token_index is None
        torch.testing.assert_close(m(bands), m.head(m.norm(z[:, -1])))


def test_determinism_and_softmax():
    cfg = small_config()
    m = build(cfg, seed=6).eval()
    img = np.random.default_rng(7).random((16, 16))
    with torch.no_grad():
        a, b = m.predict_image(img), m.predict_image(img.copy())
    assert torch.equal(a, b)
    assert abs(torch.softmax(a, 0).sum().item() - 1) < 1e-6


def test_build_seed_controls_init():
    cfg = small_config()
    sa, sb, sc = (build(cfg, seed=s).state_dict() for s in (0, 0, 1))
    assert all(torch.equal(sa[k], sb[k]) for k in sa)
    assert any(not torch.equal(sa[k], sc[k]) for k in sa)


def test_shape_law():
    cfg = small_config(K=3)
    m = build(cfg)
    bands = random_bands(cfg, n=3)
    with torch.no_grad():
        z, seq = m.encode(bands)
    assert z.shape == (3, cfg.serialization.seq_len, 8)
    assert m(bands).shape == (3, 3)


@pytest.mark.parametrize("name", ["micro_plain", "tiny_plain"])
def test_preset_parameter_count(name):
    cfg = preset(name)
    assert cfg == preset(name)
    assert count_parameters(build(cfg)) == analytic_parameter_count(cfg)


def test_preset_values():
    micro, tiny = preset("micro_plain"), preset("tiny_plain")
    assert (micro.depth, micro.embed_dim, micro.state_size, micro.mlp_ratio) == (4, 64, 16, 2.0)
    assert (tiny.depth, tiny.embed_dim) == (8, 128)
    assert micro.serialization.K == 4 and micro.serialization.patch_size == 8
    assert micro.serialization.seq_len == 86
    assert preset("micro_plain", image_size=32).serialization.band_grids == [1, 1, 2, 4]
    with pytest.raises(ValueError):
        preset("huge")


def test_reference_and_flops():
    assert REFERENCE_PLAIN_MINI["depth"] == 24 and REFERENCE_PLAIN_MINI["embed_dim"] == 192
    micro, tiny = preset("micro_plain"), preset("tiny_plain")
    assert 0 < estimate_flops(micro) < estimate_flops(tiny)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(depth=0)
    with pytest.raises(ValueError):
        ModelConfig(embed_dim=32)
    cfg = preset("micro_plain")
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_checkpoint_round_trip(tmp_path):
    cfg = small_config()
    m = build(cfg, seed=8).eval()
    path = tmp_path / "m.gmba"
    save_checkpoint(path, m, {"note": "x"})
    raw = path.read_bytes()
    assert raw[:5] == MAGIC
    header, arrays = read_checkpoint(path)
    assert header["config"] == cfg.to_dict()
    assert [t["name"] for t in header["tensors"]] == list(m.state_dict())
    loaded, meta = load_checkpoint(path)
    assert meta == {"note": "x"}
    for k, v in m.state_dict().items():
        assert torch.equal(loaded.state_dict()[k], v)
    bands = random_bands(cfg)
    with torch.no_grad():
        assert torch.equal(loaded.eval()(bands), m(bands))
    # Payload is little-endian float32 at the recorded offsets.
    spec = header["tensors"][0]
    start = 9 + int.from_bytes(raw[5:9], "little") + spec["offset"]
    first = np.frombuffer(raw, "<f4", 1, start)[0]
    assert first == m.state_dict()[spec["name"]].flatten()[0].item()


def test_checkpoint_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.gmba"
    bad.write_bytes(b"NOPE!" + bytes(8))
    with pytest.raises(CheckpointError):
        read_checkpoint(bad)
    cfg = small_config()
    good = tmp_path / "good.gmba"
    save_checkpoint(good, build(cfg))
    trunc = tmp_path / "trunc.gmba"
    trunc.write_bytes(good.read_bytes()[:-4])
    with pytest.raises(CheckpointError):
        read_checkpoint(trunc)


def test_nonfinite_reports_block():
    cfg = small_config()
    m = build(cfg)
    with torch.no_grad():
        m.blocks[1].fc2.bias.fill_(float("inf"))
    with pytest.raises(FloatingPointError, match="block 1"):
        m(random_bands(cfg))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_finite_forward(seed):
    cfg = small_config(K=2, depth=1)
    m = build(cfg, seed=seed % 1000)
    g = torch.Generator().manual_seed(seed)
    bands = [torch.rand(1, 1, s * 4, s * 4, generator=g) for s in cfg.serialization.band_grids]
    with torch.no_grad():
        assert torch.isfinite(m(bands)).all()
