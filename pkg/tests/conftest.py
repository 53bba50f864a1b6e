import numpy as np
import pytest
import torch

torch.set_num_threads(1)


def naive_dft2c(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Centered orthonormal 2D DFT by direct O(N^4) summation.

    Centered means frequency/space index k maps to k - N//2 on both sides.
    """
    H, W = x.shape
    sign = 1.0 if inverse else -1.0
    out = np.zeros((H, W), dtype=np.complex128)
    ys = np.arange(H) - H // 2
    xs = np.arange(W) - W // 2
    for u in range(H):
        for v in range(W):
            acc = 0j
            for a in range(H):
                for b in range(W):
                    acc += x[a, b] * np.exp(sign * 2j * np.pi * (ys[u] * ys[a] / H + xs[v] * xs[b] / W))
            out[u, v] = acc / np.sqrt(H * W)
    return out


def rand_complex(*shape, seed=0, dtype=torch.complex128):
    g = torch.Generator().manual_seed(seed)
    real_dtype = torch.float64 if dtype == torch.complex128 else torch.float32
    return torch.complex(torch.randn(*shape, generator=g, dtype=real_dtype),
                         torch.randn(*shape, generator=g, dtype=real_dtype)).to(dtype)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _real_view(t):
    return torch.view_as_real(t) if t.is_complex() else t


def fd_rel_error(fn, tensors, eps=1e-4, max_entries=24, seed=0, floor=1e-8):
    """Relative error between autograd and a fourth-order central difference.

    ``fn`` maps nothing to a real scalar and closes over ``tensors`` (leaf, double
    precision, requires_grad); the tensors form one parameter group. For complex
    tensors real and imaginary parts are perturbed separately. At most
    ``max_entries`` random entries per tensor are probed. The error is
    ``max|analytic - numeric| / max|numeric|`` over the whole group, with the
    denominator floored at ``floor``.
    """
    loss = fn()
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    g = torch.Generator().manual_seed(seed)
    a, num = [], []
    for t, grad in zip(tensors, grads):
        flat = _real_view(t.data).reshape(-1)
        analytic = torch.zeros_like(flat) if grad is None else _real_view(grad).reshape(-1)
        n = flat.numel()
        idx = torch.randperm(n, generator=g)[:max_entries] if n > max_entries else torch.arange(n)
        with torch.no_grad():
            for i in idx.tolist():
                orig = flat[i].item()
                f = {}
                for k in (-2, -1, 1, 2):
                    flat[i] = orig + k * eps
                    f[k] = float(fn())
                flat[i] = orig
                num.append((f[-2] - 8 * f[-1] + 8 * f[1] - f[2]) / (12 * eps))
                a.append(float(analytic[i]))
    a, num = np.array(a), np.array(num)
    return float(np.abs(a - num).max() / max(np.abs(num).max(), floor))


def parameter_groups(module, depth=2):
    """Parameters grouped by the first ``depth`` components of their names."""
    groups = {}
    for name, p in module.named_parameters():
        key = ".".join(name.split(".")[:-1][:depth])
        groups.setdefault(key, []).append(p)
    return groups
