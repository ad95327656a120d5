import numpy as np
import pytest
import torch

from imgsynth.testkit import (
    _conv_oracle,
    finite_diff_grad,
    forward_oracle,
    load_tiny,
    stat_oracle,
    tiny_state_dict,
)

from conftest import rand_image


def test_finite_diff_quadratic():
    x = rand_image(0, size=4)
    grad = finite_diff_grad(lambda t: (t ** 2).sum(), x)
    assert torch.allclose(grad, 2 * x.double(), atol=1e-6)


def test_finite_diff_constant():
    grad = finite_diff_grad(lambda t: torch.tensor(3.5), rand_image(1, size=3))
    assert grad.abs().max() == 0


def test_finite_diff_nonfinite_probe():
    def bad(t):
        return torch.tensor(float("nan"))

    with pytest.raises(ValueError, match="coordinate"):
        finite_diff_grad(bad, torch.zeros(1, 2, 2))


def test_stat_oracle_constant():
    mu, sigma = stat_oracle(np.full((1, 2, 3, 3), 4.5))
    assert np.allclose(mu, 4.5)
    assert np.allclose(sigma, 0.0)


def test_stat_oracle_two_values():
    act = np.zeros((1, 1, 2, 2))
    act[0, 0] = [[0.0, 2.0], [2.0, 0.0]]
    mu, sigma = stat_oracle(act)
    assert np.allclose(mu, 1.0)
    assert np.allclose(sigma, 1.0)


def test_conv_oracle_impulse():
    # an impulse reproduces the kernel slice at the aligned output location
    kernel = np.arange(27, dtype=float).reshape(1, 3, 3, 3)
    x = np.zeros((3, 7, 7))
    x[:, 3, 3] = [1.0, 0.0, 0.0]
    out = _conv_oracle(x, kernel, np.zeros(1), stride=1, pad=1)
    # channel-0 kernel appears flipped around the impulse
    patch = out[0, 2:5, 2:5]
    assert np.allclose(patch, kernel[0, 0][::-1, ::-1])


def test_tiny_weights_deterministic():
    a = tiny_state_dict(3)
    b = tiny_state_dict(3)
    c = tiny_state_dict(4)
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert any(not torch.equal(a[k], c[k]) for k in a)


def test_forward_oracle_matches_backbone():
    tiny = load_tiny()
    for seed in range(3):
        img = rand_image(seed)
        from imgsynth import forward_with_features

        bundle = forward_with_features(tiny, img, tiny.tap_layers)
        acts, logits = forward_oracle(tiny, img.numpy())
        for layer in tiny.tap_layers:
            diff = np.abs(bundle.activations[layer].detach().numpy() - acts[layer])
            assert diff.max() < 1e-5
        assert np.abs(bundle.logits.detach().numpy() - logits).max() < 1e-5
