import numpy as np
import pytest
import torch
import torch.nn.functional as F

from msdeblur.blocks import (Backbone, ChannelAttention, EDSRBlock, ImageHead, RCAB,
                             ResidualGroup, Upscaler, pixel_shuffle)
from oracles import conv2d_brute, sigmoid


def zero_params(module):
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module


def rand64(*shape, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return torch.rand(*shape, generator=gen).double()


class TestChannelAttention:
    def test_zero_weights_gate_half(self):
        ca = zero_params(ChannelAttention(8, 2))
        f = torch.rand(2, 8, 5, 5)
        out = ca(f)
        assert torch.allclose(out, 0.5 * f, atol=1e-7)

    def test_constant_input_scalar_oracle(self):
        torch.manual_seed(0)
        ca = ChannelAttention(4, 2).double()
        vals = [0.2, 0.7, 0.1, 0.9]
        f = torch.tensor(vals, dtype=torch.float64).view(1, 4, 1, 1).expand(1, 4, 6, 6).contiguous()
        out = ca(f)
        # hand-computed gate: gap == channel values, then two 1x1 convs
        sw = ca.squeeze.weight.detach().numpy()[:, :, 0, 0]
        sb = ca.squeeze.bias.detach().numpy()
        ew = ca.excite.weight.detach().numpy()[:, :, 0, 0]
        eb = ca.excite.bias.detach().numpy()
        hidden = np.maximum(sw @ np.array(vals) + sb, 0.0)
        gate = np.array([sigmoid(v) for v in ew @ hidden + eb])
        expect = np.array(vals) * gate
        assert np.allclose(out[0, :, 0, 0].detach().numpy(), expect, atol=1e-12)

    def test_gate_in_open_interval(self):
        torch.manual_seed(1)
        ca = ChannelAttention(16, 4)
        for seed in range(3):
            gen = torch.Generator().manual_seed(seed)
            f = torch.randn(2, 16, 7, 7, generator=gen) * 10
            g = ca.gate(f)
            assert (g > 0).all() and (g < 1).all()

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            ChannelAttention(8, 2)(torch.rand(1, 4, 5, 5))


class TestRCAB:
    def test_zero_weights_identity(self):
        blk = zero_params(RCAB(8, 2))
        f = torch.rand(1, 8, 6, 6)
        assert torch.equal(blk(f), f)

    def test_shape_preserved(self):
        blk = RCAB(8, 2)
        for h, w in [(4, 4), (9, 13)]:
            assert blk(torch.rand(2, 8, h, w)).shape == (2, 8, h, w)

    def test_stage_by_stage_oracle(self):
        torch.manual_seed(2)
        blk = RCAB(4, 2).double()
        f = rand64(1, 4, 4, 4, seed=3)
        out = blk(f)
        y = conv2d_brute(f.numpy(), blk.conv1.weight.detach().numpy(),
                         blk.conv1.bias.detach().numpy(), padding=1)
        y = np.maximum(y, 0.0)
        y = conv2d_brute(y, blk.conv2.weight.detach().numpy(),
                         blk.conv2.bias.detach().numpy(), padding=1)
        gap = y.mean(axis=(-1, -2))[0]
        sw = blk.attention.squeeze.weight.detach().numpy()[:, :, 0, 0]
        sb = blk.attention.squeeze.bias.detach().numpy()
        ew = blk.attention.excite.weight.detach().numpy()[:, :, 0, 0]
        eb = blk.attention.excite.bias.detach().numpy()
        hidden = np.maximum(sw @ gap + sb, 0.0)
        gate = np.array([sigmoid(v) for v in ew @ hidden + eb])
        expect = f.numpy() + y * gate[None, :, None, None]
        assert np.allclose(out.detach().numpy(), expect, atol=1e-12)


class TestEDSRBlock:
    def test_zero_weights_identity(self):
        blk = zero_params(EDSRBlock(8))
        f = torch.rand(1, 8, 5, 5)
        assert torch.equal(blk(f), f)

    def test_equals_rcab_with_gate_pinned(self):
        torch.manual_seed(4)
        rcab = RCAB(8, 2)
        edsr = EDSRBlock(8)
        with torch.no_grad():
            edsr.conv1.weight.copy_(rcab.conv1.weight)
            edsr.conv1.bias.copy_(rcab.conv1.bias)
            edsr.conv2.weight.copy_(rcab.conv2.weight)
            edsr.conv2.bias.copy_(rcab.conv2.bias)
        f = torch.rand(1, 8, 6, 6)
        res = edsr(f) - f  # conv->relu->conv branch
        # pin the attention gate to 1 by reconstructing rcab's sum by hand
        assert torch.allclose(f + res, edsr(f))
        gate = rcab.attention.gate(res)
        assert torch.allclose(rcab(f), f + res * gate, atol=1e-6)

    def test_stage_oracle(self):
        torch.manual_seed(5)
        blk = EDSRBlock(4).double()
        f = rand64(1, 4, 4, 4, seed=6)
        y = conv2d_brute(f.numpy(), blk.conv1.weight.detach().numpy(),
                         blk.conv1.bias.detach().numpy(), padding=1)
        y = np.maximum(y, 0.0)
        y = conv2d_brute(y, blk.conv2.weight.detach().numpy(),
                         blk.conv2.bias.detach().numpy(), padding=1)
        assert np.allclose(blk(f).detach().numpy(), f.numpy() + y, atol=1e-12)


class TestBackbone:
    def test_zero_weights_identity_all_paths(self):
        for kind in ("rcan", "edsr"):
            bb = zero_params(Backbone(8, 2, 2, kind, 2))
            f = torch.rand(1, 8, 6, 6)
            assert torch.equal(bb(f), f)
        grp = zero_params(ResidualGroup(8, 3, "rcan", 2))
        f = torch.rand(1, 8, 6, 6)
        assert torch.equal(grp(f), f)

    def test_single_group_single_block_composition(self):
        torch.manual_seed(6)
        bb = Backbone(4, 1, 1, "rcan", 2).double()
        f = rand64(1, 4, 6, 6, seed=7)
        h = bb.head(f)
        g = bb.groups[0]
        grp_out = h + g.tail(g.blocks[0](h))
        expect = f + bb.tail(grp_out)
        assert torch.allclose(bb(f), expect, atol=1e-12)

    def test_shape_and_batch_preserved(self):
        bb = Backbone(8, 2, 2, "rcan", 2)
        out = bb(torch.rand(3, 8, 10, 14))
        assert tuple(out.shape) == (3, 8, 10, 14)

    def test_parameter_count_closed_form(self):
        c, ng, nb, r = 64, 3, 5, 16
        bb = Backbone(c, ng, nb, "rcan", r)
        conv = 9 * c * c + c
        ca = (c * (c // r) + c // r) + ((c // r) * c + c)
        rcab = 2 * conv + ca
        group = nb * rcab + conv
        expect = ng * group + 2 * conv  # head + tail
        assert sum(p.numel() for p in bb.parameters()) == expect

    def test_rcan_equals_edsr_with_gates_pinned(self):
        # with identical conv weights and the attention gate forced to 1, the
        # rcan block output equals the edsr block output
        torch.manual_seed(7)
        rcan = Backbone(8, 1, 2, "rcan", 8)
        edsr = Backbone(8, 1, 2, "edsr")
        with torch.no_grad():
            sd = {k: v for k, v in rcan.state_dict().items() if "attention" not in k}
            edsr.load_state_dict(sd)
            # force sigmoid(excite(...)) -> 1 via a huge positive excite bias
            for blk in rcan.groups[0].blocks:
                blk.attention.squeeze.weight.zero_()
                blk.attention.squeeze.bias.zero_()
                blk.attention.excite.weight.zero_()
                blk.attention.excite.bias.fill_(40.0)
        f = torch.rand(1, 8, 6, 6)
        assert torch.allclose(rcan(f), edsr(f), atol=1e-6)

    def test_modes(self):
        torch.manual_seed(8)
        bb = Backbone(8, 1, 1, "rcan", 2)
        f = torch.rand(1, 8, 6, 6)
        assert torch.equal(bb(f, mode="identity"), f)
        assert torch.allclose(bb(f, mode="no_skip") + f, bb(f), atol=1e-7)
        with pytest.raises(ValueError):
            bb(f, mode="inside_out")


class TestUpscale:
    def test_x2_shape(self):
        up = Upscaler(64, 2)
        out = up(torch.rand(1, 64, 16, 16))
        assert tuple(out.shape) == (1, 64, 32, 32)

    def test_x4_is_two_stages(self):
        up = Upscaler(8, 4)
        assert len(up.convs) == 2
        out = up(torch.rand(1, 8, 4, 4))
        assert tuple(out.shape) == (1, 8, 16, 16)

    def test_shuffle_bijection(self):
        gen = torch.Generator().manual_seed(9)
        f = torch.rand(2, 16, 5, 7, generator=gen)
        shuffled = pixel_shuffle(f, 2)
        assert torch.equal(F.pixel_unshuffle(shuffled, 2), f)

    def test_shuffle_2x2_definition(self):
        a, b, c, d = 1.0, 2.0, 3.0, 4.0
        f = torch.tensor([a, b, c, d]).view(1, 4, 1, 1)
        out = pixel_shuffle(f, 2)
        assert torch.equal(out[0, 0], torch.tensor([[a, b], [c, d]]))

    def test_channel_indivisibility(self):
        with pytest.raises(ValueError):
            pixel_shuffle(torch.rand(1, 6, 4, 4), 2)

    def test_invalid_factor(self):
        with pytest.raises(ValueError):
            Upscaler(8, 3)


def test_image_head_bias_init():
    head = ImageHead(8)
    assert torch.allclose(head.conv.bias, torch.full((3,), 0.5))
