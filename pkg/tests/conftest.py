import numpy as np
import pytest
import torch

from msdeblur.data import BlurKernel, named_kernel, quantize, render_sharp_image, synth_blur


@pytest.fixture
def synth_pairs():
    """Factory for deterministic in-memory synthetic training pairs."""

    def make(n, size=64, seed=0, kernel="box3", sigma=0.01):
        pairs = []
        for i in range(n):
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, i])))
            sharp = quantize(render_sharp_image(size, rng))
            pairs.append(
                synth_blur(sharp, BlurKernel(named_kernel(kernel), noise_sigma=sigma),
                           rng_seed=seed * 1000 + i)
            )
        return pairs

    return make


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)
