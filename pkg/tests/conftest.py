import numpy as np
import pytest
import torch

from hierloc.data import LocationGrid, generate_synthetic
from hierloc.model import ModelConfig, MobilityModel
from hierloc.semantic import HashingProvider, precompute_semantics
from hierloc.windows import build_windows


def central_difference(fn, tensor: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Numerical gradient of scalar ``fn()`` w.r.t. every entry of ``tensor`` (modified in place)."""
    grad = torch.zeros_like(tensor)
    flat, gflat = tensor.data.view(-1), grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        up = float(fn())
        flat[i] = orig - eps
        down = float(fn())
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


def assert_grad_close(analytic, numeric, rtol=1e-3, atol=1e-6):
    np.testing.assert_allclose(analytic.detach().numpy(), numeric.numpy(), rtol=rtol, atol=atol)


TINY = dict(
    grid_width=4, grid_height=4, slots_per_day=8, lookback=16, horizon=4, segment_length=8,
    d_model=8, d_tod=4, d_dow=4, d_loc=4, d_coord=4, heads=2, intra_depth=1, inter_depth=1,
    dropout=0.1, backbone_depth=2, backbone_heads=2,
)


def tiny_setup(n_users=3, n_days=5, seed=0, **overrides):
    cfg = ModelConfig(**{**TINY, **overrides})
    grid = cfg.grid
    trajs = generate_synthetic(n_users, n_days, grid, 0.1, 0.2, seed=seed, slots_per_day=cfg.slots_per_day)
    days = range(cfg.lookback // cfg.slots_per_day, n_days)
    cache = precompute_semantics(trajs, days, HashingProvider(cfg.d_model), dim=cfg.d_model, grid=grid,
                                 lookback=cfg.lookback, segment_length=cfg.segment_length)
    windows = build_windows(trajs, days, lookback=cfg.lookback, horizon=cfg.horizon,
                            segment_length=cfg.segment_length, dim=cfg.d_model, cache=cache)
    torch.manual_seed(seed)
    return cfg, MobilityModel(cfg), trajs, cache, windows


@pytest.fixture
def tiny():
    return tiny_setup()


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


ACCEPTANCE_LINES: list = []


def record_criterion(number: int, name: str, passed: bool, detail: str) -> None:
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
