import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from keyframe_stylize.core import ImageBuffer
from keyframe_stylize.perceptual import (
    FeatureStack,
    StandInExtractor,
    VGG16_LAYER_NAMES,
    content_loss,
    extract_features,
    gram,
    l1_loss,
    style_loss,
    style_loss_to_grams,
    total_objective,
)


def hand_gram(fmap):
    """Triple loop over channel pairs and positions."""
    f = np.asarray(fmap, dtype=np.float64)
    c, h, w = f.shape
    g = np.zeros((c, c))
    for a in range(c):
        for b in range(c):
            s = 0.0
            for y in range(h):
                for x in range(w):
                    s += f[a, y, x] * f[b, y, x]
            g[a, b] = s / (c * h * w)
    return g


def test_gram_hand_example():
    fmap = torch.tensor([[[1.0, 2.0]], [[0.0, 1.0]]], dtype=torch.float64)
    assert gram(fmap).tolist() == [[1.25, 0.5], [0.5, 0.25]]


def test_gram_zero_map():
    assert torch.count_nonzero(gram(torch.zeros(3, 4, 5))) == 0


@pytest.mark.parametrize("seed", range(3))
def test_gram_matches_loop(seed):
    f = np.random.default_rng(seed).normal(size=(3, 4, 5))
    assert np.allclose(gram(torch.from_numpy(f)).numpy(), hand_gram(f), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gram_spatial_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    f = rng.normal(size=(4, 5, 6))
    perm = rng.permutation(30)
    g = f.reshape(4, 30)[:, perm].reshape(4, 5, 6)
    assert np.allclose(gram(torch.from_numpy(f)).numpy(), gram(torch.from_numpy(g)).numpy(), atol=1e-12)


def test_gram_symmetric_psd_100_maps():
    rng = np.random.default_rng(0)
    for _ in range(100):
        c, h, w = rng.integers(1, 9, 3)
        f = torch.from_numpy(rng.normal(size=(c, h, w)) * rng.uniform(0.01, 100))
        g = gram(f)
        assert torch.equal(g, g.T)
        eig = torch.linalg.eigvalsh(g)
        assert eig.min() >= -1e-6 * max(1.0, float(eig.abs().max()))


def test_vgg_feature_stack_224(vgg):
    img = ImageBuffer(np.random.default_rng(0).uniform(0, 1, (3, 224, 224)))
    stack = extract_features(img, vgg)
    assert stack.names == tuple(VGG16_LAYER_NAMES)
    assert len(stack) == 13
    assert tuple(stack.maps[0].shape) == (64, 224, 224)
    assert tuple(stack.maps[-1].shape) == (512, 14, 14)
    assert all(bool((m >= 0).all()) for m in stack.maps)
    again = extract_features(img, vgg)
    assert all(torch.equal(a, b) for a, b in zip(stack.maps, again.maps))


def test_vgg_layer_table(vgg):
    stack = extract_features(ImageBuffer(np.zeros((3, 32, 32))), vgg)
    shapes = [tuple(m.shape) for m in stack.maps]
    expect = [(64, 32, 32)] * 2 + [(128, 16, 16)] * 2 + [(256, 8, 8)] * 3 + [(512, 4, 4)] * 3 + [(512, 2, 2)] * 3
    assert shapes == expect


def test_vgg_rejects_tiny_images(vgg):
    with pytest.raises(ValueError):
        extract_features(ImageBuffer(np.zeros((3, 8, 8))), vgg)


def test_vgg_weights_frozen(vgg):
    assert all(not p.requires_grad for p in vgg.parameters())
    vgg.train()
    assert not vgg.training


def test_vgg_loads_state_dict(tmp_path):
    from keyframe_stylize.perceptual import VGGExtractor

    src = VGGExtractor(seed=7)
    path = tmp_path / "w.pth"
    torch.save({f"features.{k}": v for k, v in src.features.state_dict().items()}, path)
    loaded = VGGExtractor.from_file(path)
    assert loaded.digest() == src.digest()
    assert loaded.digest() != VGGExtractor(seed=8).digest()


def test_style_loss_examples(stand_in, rand_img):
    a = extract_features(rand_img(8, 8, 1), stand_in)
    b = extract_features(rand_img(12, 10, 2), stand_in)
    assert float(style_loss(a, a)) == 0.0
    assert float(style_loss(a, b)) == pytest.approx(float(style_loss(b, a)), rel=1e-12)
    one = [torch.ones(1, 1, 1, dtype=torch.float64)]
    three = [torch.full((1, 1, 1), 3.0 ** 0.5, dtype=torch.float64)]
    assert float(style_loss(one, three)) == pytest.approx(4.0, rel=1e-12)
    assert float(style_loss_to_grams(one, [torch.tensor([[3.0]], dtype=torch.float64)])) == 4.0


def test_style_loss_layer_mismatch(stand_in, rand_img):
    a = extract_features(rand_img(8, 8), stand_in)
    b = FeatureStack(("x",), (a.maps[0],))
    with pytest.raises(ValueError):
        style_loss(a, b)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 2**31 - 1))
def test_style_loss_nonnegative(s1, s2):
    ext = StandInExtractor()
    a = extract_features(ImageBuffer(np.random.default_rng(s1).uniform(0, 1, (3, 6, 6))), ext)
    b = extract_features(ImageBuffer(np.random.default_rng(s2).uniform(0, 1, (3, 6, 6))), ext)
    assert float(style_loss(a, b)) >= 0.0
    assert float(style_loss(a, a)) == 0.0


def central_difference(fn, x, h=1e-6):
    g = torch.zeros_like(x)
    flat, gflat = x.view(-1), g.view(-1)
    for i in range(flat.numel()):
        old = flat[i].item()
        flat[i] = old + h
        fp = fn(x).item()
        flat[i] = old - h
        fm = fn(x).item()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


@pytest.mark.parametrize("seed", [0, 1])
def test_style_loss_gradient_matches_finite_differences(seed):
    ext = StandInExtractor(seed=seed)
    gen = torch.Generator().manual_seed(seed)
    x = torch.rand(1, 3, 8, 8, generator=gen, dtype=torch.float64)
    y = torch.rand(1, 3, 8, 8, generator=gen, dtype=torch.float64)
    target = [gram(m[0]) for m in ext(y)]

    def loss(inp):
        return style_loss_to_grams([m[0] for m in ext(inp)], target)

    xg = x.clone().requires_grad_(True)
    loss(xg).backward()
    with torch.no_grad():
        fd = central_difference(loss, x.clone())
    rel = (xg.grad - fd).norm() / fd.norm()
    assert rel <= 1e-4


def test_l1_examples():
    z, o = ImageBuffer(np.zeros((3, 4, 4))), ImageBuffer(np.ones((3, 4, 4)))
    assert float(l1_loss(z, z)) == 0.0
    assert float(l1_loss(z, o)) == 1.0
    half = np.zeros((3, 4, 4))
    half[:, :2] = 0.5
    assert float(l1_loss(z, ImageBuffer(half))) == 0.25
    with pytest.raises(ValueError):
        l1_loss(z, ImageBuffer(np.zeros((3, 4, 8))))


def test_content_loss_picks_middle_layer(vgg):
    img = ImageBuffer(np.random.default_rng(0).uniform(0, 1, (3, 32, 32)))
    a, b = extract_features(img, vgg), extract_features(ImageBuffer(np.zeros((3, 32, 32))), vgg)
    expect = torch.mean((a.maps[6] - b.maps[6]) ** 2)
    assert float(content_loss(a, b)) == pytest.approx(float(expect))
    assert float(content_loss(list(a.maps), list(b.maps))) == pytest.approx(float(expect))


def _scalar_terms():
    out = torch.full((1, 3, 2, 2), 0.2, dtype=torch.float64)
    sty = torch.zeros((1, 3, 2, 2), dtype=torch.float64)
    one = [torch.ones(1, 1, 1, dtype=torch.float64)]
    three = [torch.full((1, 1, 1), 3.0 ** 0.5, dtype=torch.float64)]
    return [(out, sty)], [(one, three)]


def test_total_objective_arithmetic():
    kf, reg = _scalar_terms()
    total, bd = total_objective(kf, reg, lam=0.625)
    assert bd.l1_term == pytest.approx(0.2)
    assert bd.style_term == pytest.approx(4.0)
    assert bd.total == pytest.approx(2.7)
    assert float(total) == pytest.approx(2.7)
    assert bd.check()


def test_total_objective_lambda_zero_is_l1_only():
    kf, reg = _scalar_terms()
    _, bd = total_objective(kf, reg, lam=0.0)
    assert bd.total == pytest.approx(bd.l1_term)


def test_total_objective_global_minimum():
    img = torch.rand(1, 3, 4, 4, dtype=torch.float64)
    feats = [torch.rand(2, 3, 3, dtype=torch.float64)]
    _, bd = total_objective([(img, img.clone())], [(feats, [f.clone() for f in feats])], lam=3.0)
    assert bd.total == 0.0


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 100), st.floats(0, 100), st.floats(0, 100))
def test_total_objective_linear_in_weights(lam, cw, scale):
    kf, reg = _scalar_terms()
    content = [([torch.ones(2, 2, 2, dtype=torch.float64)], [torch.zeros(2, 2, 2, dtype=torch.float64)])]
    _, base = total_objective(kf, reg, 0.0, 0.0, content)
    _, bd = total_objective(kf, reg, lam, cw, content)
    expect = base.total + lam * bd.style_term + cw * bd.content_term
    assert bd.total == pytest.approx(expect, rel=1e-9, abs=1e-9)
    _, scaled = total_objective(kf, reg, lam * 2, cw * 2, content)
    assert scaled.total - base.total == pytest.approx(2 * (bd.total - base.total), rel=1e-9, abs=1e-9)


def test_total_objective_ignores_content_at_zero_weight():
    kf, reg = _scalar_terms()
    c1 = [([torch.ones(2, 2, 2)], [torch.zeros(2, 2, 2)])]
    c2 = [([torch.full((2, 2, 2), 9.0)], [torch.zeros(2, 2, 2)])]
    assert total_objective(kf, reg, 1.0, 0.0, c1)[1].total == total_objective(kf, reg, 1.0, 0.0, c2)[1].total


def test_total_objective_errors():
    kf, reg = _scalar_terms()
    with pytest.raises(ValueError):
        total_objective([], reg, 1.0)
    with pytest.raises(ValueError):
        total_objective(kf, reg, -1.0)
