"""Feature pyramid and the three fusion variants.
"""
import numpy as np
import pytest

from coordtrack import fusion
from coordtrack import tensor as T
from coordtrack.allowed_parameters import FusionMode
from coordtrack.errors import ContractViolation
from coordtrack.params import ParamStore
from coordtrack.tensor import Tensor
from tests import oracles


def build(mode, c=8, seed=0):
    store = ParamStore()
    fusion.init_params(store, mode, c, np.random.default_rng(seed))
    return store


def feature_map(c=8, size=18, seed=1):
    return Tensor(np.random.default_rng(seed).normal(size=(c, size, size)), requires_grad=True)


@pytest.mark.parametrize(
    "mode",
    [
        pytest.param(FusionMode.mpfm, id="multilevel progressive"),
        pytest.param(FusionMode.conf, id="concatenation"),
        pytest.param(FusionMode.addf, id="addition"),
        pytest.param(FusionMode.none, id="identity"),
    ],
)
def test_fusion_preserves_shape(mode):
    """C x 18 x 18 in, C x 18 x 18 out for every variant."""
    out = fusion.fuse(feature_map(), build(mode), mode)
    assert out.shape == (8, 18, 18)


def test_pyramid_levels_are_2x_1x_half():
    """An 18x18 map yields 36x36, 18x18 and 9x9 levels with equal channels."""
    pyr = fusion.build_pyramid(feature_map(), build(FusionMode.mpfm))
    assert [lvl.shape for lvl in pyr.levels] == [(8, 36, 36), (8, 18, 18), (8, 9, 9)]
    assert tuple(pyr.scales) == fusion.SCALES


def test_pyramid_rejects_odd_grid():
    """The half-resolution level needs an even grid."""
    with pytest.raises(ContractViolation):
        fusion.build_pyramid(feature_map(size=9), build(FusionMode.mpfm))


def test_up_and_down_fusion_check_resolution_ratio():
    """Adjacent levels must differ by exactly x2."""
    store = build(FusionMode.mpfm)
    a, b = feature_map(size=8), feature_map(size=8, seed=2)
    with pytest.raises(ContractViolation):
        fusion.up_fusion(a, b, store, "fuse.up_mid")
    with pytest.raises(ContractViolation):
        fusion.down_fusion(a, b, store, "fuse.down")


def test_identity_fusion_returns_input_unchanged():
    """mode none passes the encoder output straight through."""
    f_x = feature_map()
    assert fusion.fuse(f_x, ParamStore(), FusionMode.none) is f_x


def test_variants_own_disjoint_parameters():
    """Each mode creates only its own weights next to the shared pyramid upsampler."""
    names = {mode: set(build(mode).names()) for mode in FusionMode}
    assert names[FusionMode.none] == set()
    shared = {"fuse.pyramid.up.weight", "fuse.pyramid.up.bias"}
    for mode in (FusionMode.mpfm, FusionMode.conf, FusionMode.addf):
        assert shared <= names[mode]
    assert (names[FusionMode.mpfm] & names[FusionMode.conf]) == shared
    assert (names[FusionMode.conf] & names[FusionMode.addf]) == shared


def test_mpfm_output_depends_on_every_input_cell():
    """Gradient of the fused map reaches the whole input grid."""
    f_x = feature_map(c=4, size=6)
    store = build(FusionMode.mpfm, c=4)
    (g,) = T.grad(T.sum(fusion.fuse(f_x, store, FusionMode.mpfm)), [f_x])
    assert g.shape == f_x.shape
    assert np.count_nonzero(np.abs(g).sum(axis=0)) == 36


def randomize(store, rng):
    for name in store.names(trainable_only=True):
        store.assign(name, rng.normal(0.0, 0.5, size=store[name].shape))
    return store


def conv_stack_oracle(x, store, name):
    def params(part):
        return store[f"{name}.{part}.weight"].data, store[f"{name}.{part}.bias"].data

    x = oracles.conv2d(x, *params("reduce"), 1, 0)
    x = oracles.conv2d(x, *params("mix"), 1, 1)
    return oracles.conv2d(x, *params("out"), 1, 0)


def test_up_fusion_matches_composed_upsample_and_conv_oracles():
    """Random 4x4 fine and 2x2 coarse maps: concat with the upsampled coarse map, then 1x1, 3x3, 1x1."""
    rng = np.random.default_rng(3)
    store = randomize(build(FusionMode.mpfm, c=3), rng)
    fine, coarse = rng.normal(size=(3, 4, 4)), rng.normal(size=(3, 2, 2))
    out = fusion.up_fusion(Tensor(fine), Tensor(coarse), store, "fuse.up_mid").data
    expected = conv_stack_oracle(np.concatenate([fine, oracles.upsample_bilinear2x(coarse)]), store, "fuse.up_mid")
    assert out.shape == (3, 4, 4)
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-10)


def test_down_fusion_matches_composed_pool_and_conv_oracles():
    """Random 4x4 fine and 2x2 coarse maps: concat the pooled fine map with the coarse one."""
    rng = np.random.default_rng(4)
    store = randomize(build(FusionMode.mpfm, c=3), rng)
    fine, coarse = rng.normal(size=(3, 4, 4)), rng.normal(size=(3, 2, 2))
    out = fusion.down_fusion(Tensor(fine), Tensor(coarse), store, "fuse.down").data
    expected = conv_stack_oracle(np.concatenate([oracles.max_pool2x2(fine), coarse]), store, "fuse.down")
    assert out.shape == (3, 2, 2)
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-10)


def test_addf_with_other_levels_zeroed_is_that_levels_projection():
    """Zero fine and coarse levels with bias-free projections leave only the 1x level's projection."""
    rng = np.random.default_rng(5)
    store = randomize(build(FusionMode.addf, c=3), rng)
    for i in (0, 2):
        store.assign(f"fuse.addf.proj{i}.bias", np.zeros(3))
    mid = rng.normal(size=(3, 4, 4))
    pyr = fusion.FeaturePyramid([Tensor(np.zeros((3, 8, 8))), Tensor(mid), Tensor(np.zeros((3, 2, 2)))], fusion.SCALES)
    expected = oracles.conv2d(mid, store["fuse.addf.proj1.weight"].data, store["fuse.addf.proj1.bias"].data, 1, 0)
    np.testing.assert_allclose(fusion.addf_fusion(pyr, store).data, expected, rtol=0, atol=1e-12)


def test_conf_with_one_level_and_identity_projection_returns_the_level():
    """A single 1x level through an identity 1x1 conv comes back unchanged."""
    store = ParamStore()
    store.add("fuse.conf.proj.weight", np.eye(3).reshape(3, 3, 1, 1))
    store.add("fuse.conf.proj.bias", np.zeros(3))
    level = np.random.default_rng(6).normal(size=(3, 4, 4))
    pyr = fusion.FeaturePyramid([Tensor(level)], (1.0,))
    np.testing.assert_allclose(fusion.conf_fusion(pyr, store).data, level, rtol=0, atol=1e-15)


@pytest.mark.parametrize(
    "mode",
    [
        pytest.param(FusionMode.mpfm, id="multilevel progressive"),
        pytest.param(FusionMode.conf, id="concatenation"),
        pytest.param(FusionMode.addf, id="addition"),
    ],
)
def test_fresh_fusion_is_the_identity_but_still_trainable(mode):
    """Zero-started last projections return f_x unchanged and still receive gradient."""
    f_x = feature_map(c=4, size=6)
    store = build(mode, c=4)
    out = fusion.fuse(f_x, store, mode)
    np.testing.assert_array_equal(out.data, f_x.data)
    last = {
        FusionMode.mpfm: "fuse.down.out.weight",
        FusionMode.conf: "fuse.conf.proj.weight",
        FusionMode.addf: "fuse.addf.proj1.weight",
    }[mode]
    weights = np.random.default_rng(7).normal(size=out.shape)
    (g,) = T.grad(T.sum(out * weights), [store[last]])
    assert np.any(g != 0.0)
