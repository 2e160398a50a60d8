import numpy as np
import pytest
import torch

torch.set_num_threads(1)

from emgface.config import ModelConfig
from emgface.face_model import FaceParams, build_toy_model


@pytest.fixture(scope="session")
def toy_model():
    return build_toy_model(ModelConfig())


def draw_params(seed: int, dtype=torch.float64) -> FaceParams:
    """One draw from the synthetic-world parameter distribution."""
    gen = torch.Generator().manual_seed(seed)
    params = FaceParams(
        shape_coeffs=(torch.randn(8, generator=gen, dtype=dtype) * 0.45).clamp(-1.2, 1.2),
        expression=(torch.randn(8, generator=gen, dtype=dtype) * 0.45).clamp(-0.9, 0.9),
        eyelids=torch.rand(2, generator=gen, dtype=dtype) * 1.2,
        jaw=torch.rand(3, generator=gen, dtype=dtype) * 0.8,
        pose=torch.zeros(6, dtype=dtype),
    )
    params.pose[0:3] = (torch.rand(3, generator=gen, dtype=dtype) * 2 - 1) * 0.12
    params.pose[3:5] = (torch.rand(2, generator=gen, dtype=dtype) * 2 - 1) * 0.05
    params.pose[5] = (torch.rand(1, generator=gen, dtype=dtype) * 2 - 1)[0] * 0.10
    return params


def finite_difference_grad(func, params: FaceParams, block: str, h: float) -> torch.Tensor:
    """Central-difference gradient of ``func(params)`` w.r.t. one block."""
    base = getattr(params, block)
    grad = torch.zeros_like(base)
    for i in range(base.shape[0]):
        plus, minus = params.clone(), params.clone()
        getattr(plus, block)[i] += h
        getattr(minus, block)[i] -= h
        grad[i] = (func(plus) - func(minus)) / (2 * h)
    return grad


def analytic_grad(func, params: FaceParams, block: str) -> torch.Tensor:
    from dataclasses import fields

    var = getattr(params, block).clone().requires_grad_(True)
    rebuilt = FaceParams(
        **{f.name: (var if f.name == block else getattr(params, f.name)) for f in fields(FaceParams)}
    )
    out = func(rebuilt)
    out.backward()
    return var.grad.detach().clone()


def relative_grad_error(func, params: FaceParams, block: str, h: float) -> float:
    ana = analytic_grad(func, params, block)
    num = finite_difference_grad(func, params, block, h)
    scale = max(ana.abs().max().item(), num.abs().max().item(), 1e-8)
    return ((ana - num).abs().max() / scale).item()
