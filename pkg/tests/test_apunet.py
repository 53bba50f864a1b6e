import pytest
import torch
from pydantic import ValidationError as PydanticValidationError

from cmrrecon.apunet import (
    APUNet,
    APUNetConfig,
    ChannelAttention,
    ChannelAttentionBlock,
    PromptBlock,
    PromptConfig,
    prompt_parameters,
)
from cmrrecon.errors import ValidationError

from conftest import fd_rel_error, parameter_groups


def _tiny(**kw):
    return APUNet(APUNetConfig.tiny(in_channels=2, **kw)).double()


def _x(*shape, seed=0):
    return torch.randn(*shape, dtype=torch.float64, generator=torch.Generator().manual_seed(seed))


def test_default_shape_ten_channels():
    net = APUNet(APUNetConfig())
    x = torch.randn(1, 10, 64, 64)
    assert net(x).shape == x.shape


@pytest.mark.parametrize("size", [(8, 8), (9, 13), (16, 6)])
def test_shape_preserved_with_padding(size):
    net = _tiny()
    x = _x(2, 2, *size)
    assert net(x).shape == x.shape


def test_unpadded_indivisible_size_raises():
    net = _tiny(pad_input=False)
    with pytest.raises(ValidationError, match="pad"):
        net(_x(1, 2, 9, 8))


def test_config_validation():
    with pytest.raises(PydanticValidationError):
        APUNetConfig(levels=1, channel_mult=(1,))
    with pytest.raises(PydanticValidationError):
        APUNetConfig(levels=2, channel_mult=(1, 2), base_channels=6, attention_reduction=4)
    with pytest.raises(PydanticValidationError):
        APUNetConfig(in_channels=2, out_channels=4, residual=True)
    with pytest.raises(PydanticValidationError):
        APUNetConfig(unknown=1)


def test_zero_weights_residual_is_identity():
    net = _tiny()
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
    x = _x(1, 2, 8, 8)
    assert torch.equal(net(x), x)


def test_forward_deterministic():
    net = _tiny()
    x = _x(1, 2, 8, 8, seed=1)
    assert torch.equal(net(x), net(x))


def test_zero_input_gates_equal_sigmoid_bias():
    ca = ChannelAttention(8, 4).double()
    g = ca.gates(torch.zeros(1, 8, 4, 4, dtype=torch.float64))
    assert torch.allclose(g.reshape(-1), torch.sigmoid(ca.excite.bias), atol=1e-15)


def test_saturated_gates_give_features_plus_conv():
    blk = ChannelAttentionBlock(8, 4).double()
    with torch.no_grad():
        blk.attn.excite.bias.fill_(1e3)
    x = _x(1, 8, 6, 6, seed=2)
    assert torch.allclose(blk(x), x + blk.body(x), atol=1e-12)


def test_prompt_weights_softmax():
    pb = PromptBlock(8, 5, 4).double()
    w = pb.weights(_x(3, 8, 6, 6, seed=3))
    assert torch.allclose(w.sum(-1), torch.ones(3, dtype=torch.float64), atol=1e-6)
    assert (w > 0).all()


def test_single_component_prompt_ignores_logits():
    pb = PromptBlock(4, 1, 4).double()
    x = _x(1, 4, 6, 6, seed=4)
    ref = pb(x)
    with torch.no_grad():
        pb.linear.weight.normal_()
        pb.linear.bias.normal_()
    assert torch.equal(pb.weights(x), torch.ones(1, 1, dtype=torch.float64))
    assert torch.allclose(pb(x), ref, atol=1e-14)


def test_identical_bank_entries_ignore_logits():
    pb = PromptBlock(4, 3, 4).double()
    with torch.no_grad():
        pb.bank.copy_(pb.bank[:1].expand_as(pb.bank))
    x = _x(1, 4, 6, 6, seed=5)
    ref = pb(x)
    with torch.no_grad():
        pb.linear.weight.normal_()
    assert torch.allclose(pb(x), ref, atol=1e-13)


def test_prompt_block_too_small():
    with pytest.raises(ValidationError):
        PromptBlock(4, 2, 4)(torch.zeros(1, 4, 1, 4))


def test_prompt_bank_seeded_and_one_per_level():
    cfg = APUNetConfig.tiny(prompt=PromptConfig(components=3, size=4, seed=7))
    a, b = APUNet(cfg), APUNet(cfg)
    banks = prompt_parameters(a)
    assert len(banks) == cfg.levels
    for p, q in zip(banks, prompt_parameters(b)):
        assert torch.equal(p, q)
    assert len(prompt_parameters(APUNet(cfg.model_copy(update={"prompt": PromptConfig(components=3, size=4,
                                                                                       in_encoder=True)})))) == 4


def test_prompt_banks_receive_gradient():
    net = _tiny()
    x = _x(1, 2, 8, 8, seed=6)
    (net(x) - x.flip(-1)).square().mean().backward()
    for p in prompt_parameters(net):
        assert p.grad is not None and p.grad.abs().max() > 0


def test_gradients_match_finite_differences():
    torch.manual_seed(0)
    net = _tiny()
    x = _x(1, 2, 8, 8, seed=7)
    target = _x(1, 2, 8, 8, seed=8)

    def loss():
        return (net(x) - target).square().sum()

    groups = parameter_groups(net)
    assert {"level0.prompt", "level1.prompt", "embed", "head"} <= set(groups)
    for name, params in groups.items():
        assert fd_rel_error(loss, params, max_entries=8) < 1e-4, name
    xx = x.clone().requires_grad_()
    assert fd_rel_error(lambda: (net(xx) - target).square().sum(), [xx], max_entries=32) < 1e-4
