import numpy as np
import pytest

from husformer.ablations import (
    build_variant,
    count_parameters,
    describe_variant,
    expected_transformer_count,
)
from husformer.model import VARIANTS, ModalitySpec, ModelConfig, parameter_layout


def config(n, variant, **kw):
    mods = [ModalitySpec(f"m{i}", 1 + i % 3, 8 + i) for i in range(n)]
    base = dict(hidden_dim=8, heads=2, cm_layers=2, sa_layers=1, ffn_dim=8)
    base.update(kw)
    return ModelConfig(mods, 3, variant=variant, **base)


def block_params(d, f, heads, dk, dv, cross):
    ln = 2 * d * (3 if cross else 2)
    return ln + heads * (2 * d * dk + d * dv) + heads * dv * d + d * f + f + f * d + d


@pytest.mark.parametrize("n", [3, 4, 5, 6])
def test_transformer_counts(n):
    got = {v: build_variant(config(n, v))[1].cross_modal_transformers for v in VARIANTS}
    assert got == {"husformer": n, "husfuse": 0, "huspair": n * n - n}
    assert all(got[v] == expected_transformer_count(v, n) for v in VARIANTS)


def test_six_modalities_need_thirty_pairwise_transformers():
    assert build_variant(config(6, "huspair"))[1].cross_modal_transformers == 30


@pytest.mark.parametrize("n", [3, 4, 5, 6])
def test_parameter_ordering(n):
    p = {v: describe_variant(config(n, v)).parameters for v in VARIANTS}
    assert p["husfuse"] < p["husformer"] < p["huspair"]


def test_two_modalities_tie():
    # with n = 2 each target has exactly one partner, so both wirings build two blocks
    p = {v: describe_variant(config(2, v)).parameters for v in VARIANTS}
    assert p["husfuse"] < p["husformer"] == p["huspair"]


@pytest.mark.parametrize("variant", VARIANTS)
def test_closed_form_parameter_count(variant):
    cfg = config(4, variant)
    d, f, h = cfg.hidden_dim, cfg.ffn_dim, cfg.heads
    embed = sum(m.channels ** 2 * m.kernel_size + m.input_dim * d + d for m in cfg.modalities)
    cross = expected_transformer_count(variant, 4) * cfg.cm_layers * block_params(d, f, h, cfg.d_k, cfg.d_v, True)
    sa = cfg.sa_layers * block_params(d, f, h, cfg.d_k, cfg.d_v, False)
    head = d * d + d + cfg.fusion_length * d * 3 + 3
    assert describe_variant(cfg).parameters == embed + cross + sa + head


@pytest.mark.parametrize("variant", VARIANTS)
def test_descriptor_agrees_with_built_model(variant):
    cfg = config(3, variant)
    model, desc = build_variant(cfg, seed=4)
    assert desc == describe_variant(cfg)
    assert desc.parameters == model.num_parameters() == count_parameters(model.parameters())
    assert list(model.params) == list(parameter_layout(cfg))


def test_variants_share_front_end_and_head_shapes():
    layouts = {v: parameter_layout(config(3, v)) for v in VARIANTS}
    shared = [k for k in layouts["husfuse"]]
    for v in VARIANTS:
        for k in shared:
            assert layouts[v][k] == layouts["husfuse"][k]


def test_variants_run_on_same_input():
    rng = np.random.default_rng(0)
    cfg = config(3, "husformer")
    xs = [rng.normal(size=(2, m.channels, m.input_dim)) for m in cfg.modalities]
    for v in VARIANTS:
        model, _ = build_variant(cfg.with_variant(v))
        assert model.forward(xs).probs.shape == (2, 3)


def test_linear_layer_count():
    from husformer.tensor import Tensor

    assert count_parameters([Tensor(np.zeros((40, 40))), Tensor(np.zeros(40))]) == 1640


@pytest.mark.parametrize("variant", ["husformer", "huspair"])
def test_doubling_layers_doubles_cross_modal_share(variant):
    def cross_share(cfg):
        return sum(int(np.prod(s)) for k, (s, _) in parameter_layout(cfg).items() if k.startswith("cm."))

    one, two = config(3, variant, cm_layers=2), config(3, variant, cm_layers=4)
    assert cross_share(two) == 2 * cross_share(one)


def test_pairwise_to_fused_ratio():
    for n in range(2, 7):
        pair = describe_variant(config(n, "huspair")).cross_modal_transformers
        fused = describe_variant(config(n, "husformer")).cross_modal_transformers
        assert pair == (n - 1) * fused
