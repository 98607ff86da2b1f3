import numpy as np
import pytest

from inceptext import network as net
from inceptext.tensor import Tensor


def _rng(seed=0):
    return np.random.Generator(np.random.Philox(key=np.array([seed, 99], dtype=np.uint64)))


def _block(channels=16, deformable=True, seed=0, **kw):
    cfg = net.InceptionTextConfig(channels, deformable=deformable, **kw)
    return cfg, net.init_inception_text(cfg, _rng(seed), "it")


def test_block_preserves_shape():
    cfg, p = _block()
    x = Tensor(np.random.default_rng(0).normal(size=(1, 16, 9, 11)))
    assert net.inception_text_forward(x, p, cfg, "it").shape == (1, 16, 9, 11)


def test_block_channel_mismatch():
    cfg, p = _block()
    with pytest.raises(ValueError, match="channels"):
        net.inception_text_forward(Tensor(np.zeros((1, 8, 5, 5))), p, cfg, "it")


def test_concat_width():
    cfg, p = _block(16)
    assert cfg.reduce_channels == 4 and cfg.concat_channels == 12
    assert p["it.proj.w"].shape == (16, 12, 1, 1)


def test_residual_identity_is_exact():
    cfg, p = _block()
    for t in p.values():
        t.data[...] = 0
    x = np.random.default_rng(1).normal(size=(1, 16, 7, 7)).astype(np.float32)
    out = net.inception_text_forward(Tensor(x), p, cfg, "it").data
    assert np.array_equal(out, x)


def test_zero_offsets_match_plain_block():
    cfg, p = _block(deformable=True, seed=3)
    plain_cfg = net.InceptionTextConfig(16, deformable=False)
    plain = {k: v for k, v in p.items() if ".offset." not in k}
    x = Tensor(np.random.default_rng(2).normal(size=(1, 16, 10, 8)).astype(np.float32))
    a = net.inception_text_forward(x, p, cfg, "it").data
    b = net.inception_text_forward(x, plain, plain_cfg, "it").data
    assert np.abs(a - b).max() < 1e-6


def test_offset_convs_start_at_zero():
    _, p = _block()
    offs = [k for k in p if ".offset." in k]
    assert len(offs) == 6 and all(not p[k].data.any() for k in offs)


@pytest.mark.parametrize("branch,side", [("left", 3), ("middle", 5), ("right", 7)])
def test_branch_footprints(branch, side):
    cfg, p = _block()
    assert net.branch_receptive_footprint(p, cfg, branch, "it") == side


def test_footprint_ordering_other_configs():
    for dk in (1, 3, 5):
        cfg, p = _block(8, deform_kernel=dk, seed=dk)
        f = [net.branch_receptive_footprint(p, cfg, b, "it") for b in net.BRANCHES]
        assert f[0] < f[1] < f[2]
        assert f == [dk, dk + 2, dk + 4]


def test_footprint_ignores_trained_offsets():
    cfg, p = _block()
    for k, t in p.items():
        if ".offset." in k:
            t.data[...] = 0.5
    assert net.branch_receptive_footprint(p, cfg, "right", "it") == 7


def test_factorized_param_count():
    C, n = 12, 5
    cfg, p = _block(48, reduce_channels=C)
    fact = p["it.right.row.w"].size + p["it.right.col.w"].size
    assert fact == 2 * n * C * C
    assert fact < n * n * C * C


def test_unknown_branch():
    cfg, p = _block()
    with pytest.raises(ValueError):
        net.inception_branch(Tensor(np.zeros((1, 16, 5, 5))), p, cfg, "centre", "it")


# ---------------------------------------------------------------------------
# backbone


@pytest.fixture(scope="module")
def backbone():
    cfg = net.BackboneConfig()
    return cfg, net.init_backbone(cfg, _rng(5))


def test_fused_map_shape(backbone):
    cfg, p = backbone
    fa, fb = net.fused_backbone_forward(Tensor(np.zeros((1, 3, 64, 64), np.float32)), p, cfg)
    assert cfg.feature_stride == 8
    assert fa.shape == fb.shape == (1, cfg.fused_channels, 8, 8)


def test_dilated_stage_keeps_resolution(backbone):
    cfg, p = backbone
    feats = net.backbone_stages(Tensor(np.zeros((1, 3, 64, 96), np.float32)), p, cfg)
    assert feats[-1].shape[2:] == feats[-2].shape[2:] == (4, 6)


def test_doubling_input_doubles_fused_map(backbone):
    cfg, p = backbone
    a, _ = net.fused_backbone_forward(Tensor(np.zeros((1, 3, 32, 48), np.float32)), p, cfg)
    b, _ = net.fused_backbone_forward(Tensor(np.zeros((1, 3, 64, 96), np.float32)), p, cfg)
    assert b.shape[2:] == (2 * a.shape[2], 2 * a.shape[3])


def test_indivisible_size(backbone):
    cfg, p = backbone
    with pytest.raises(ValueError, match="divisible"):
        net.fused_backbone_forward(Tensor(np.zeros((1, 3, 40, 64), np.float32)), p, cfg)


def test_backbone_config_validation():
    with pytest.raises(ValueError):
        net.BackboneConfig(strides=(2, 2, 2, 2, 2))
    with pytest.raises(ValueError):
        net.BackboneConfig(widths=(8, 8), strides=(2, 1), convs_per_stage=(1, 1))


def test_fully_convolutional_interior():
    cfg = net.BackboneConfig(widths=(4, 8, 8), strides=(2, 2, 1), convs_per_stage=(1, 1, 1))
    p = net.init_backbone(cfg, _rng(7))
    img = np.random.default_rng(3).uniform(0, 1, (1, 3, 128, 128))
    padded = np.zeros((1, 3, 192, 192))
    padded[:, :, 32:160, 32:160] = img
    a, b = net.fused_backbone_forward(Tensor(img), p, cfg)
    pa, pb = net.fused_backbone_forward(Tensor(padded), p, cfg)
    s = cfg.feature_stride
    inner = slice(48 // s, 80 // s)
    shifted = slice((48 + 32) // s, (80 + 32) // s)
    assert np.abs(a.data[..., inner, inner] - pa.data[..., shifted, shifted]).max() < 1e-5
    assert np.abs(b.data[..., inner, inner] - pb.data[..., shifted, shifted]).max() < 1e-5


def test_param_count(backbone):
    _, p = backbone
    n = net.count_params(p)
    assert n == sum(t.size for t in p.values())
    assert net.count_params(p, "it_a.") == net.count_params(p, "it_b.")
