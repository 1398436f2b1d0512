"""Shared fixtures: toy models and the committed fixture checkpoint."""

from pathlib import Path

import numpy as np
import pytest
import torch
from torch import nn

from camlabel.classifier import CheckpointBundle
from camlabel.synthetic import SceneParams, generate_synthetic_scene

FIXTURE_DIR = Path(__file__).parent / "fixtures"

PATCH_PARAMS = SceneParams(
    size=(96, 96), n_crack=1, n_spalling=0, n_rust=0,
    crack_segments=5, crack_segment_len=(10, 22), n_negative_clicks=0,
)


class GapLinearToy(nn.Module):
    """Fixed conv features -> global average pool -> linear head."""

    def __init__(self, channels=8, num_classes=1, seed=1):
        super().__init__()
        torch.manual_seed(seed)
        self.conv = nn.Conv2d(3, channels, 3, padding=1)
        self.head = nn.Linear(channels, num_classes)

    def forward(self, x):
        feats = self.conv(x)
        return self.head(feats.mean(dim=(2, 3))), feats


class ConstantFeatureToy(nn.Module):
    """Constant-per-channel features; lets CAMs be computed symbolically."""

    def __init__(self, channel_values, weights, shape=(4, 4)):
        super().__init__()
        channels = len(channel_values)
        base = torch.tensor(channel_values, dtype=torch.float64)
        self.feature_base = nn.Parameter(base.view(1, channels, 1, 1))
        self.shape = shape
        self.head = nn.Linear(channels, 1).double()
        with torch.no_grad():
            self.head.weight[:] = torch.tensor(weights, dtype=torch.float64)
            self.head.bias.zero_()

    def forward(self, x):
        feats = self.feature_base.expand(1, -1, *self.shape)
        return self.head(feats.mean(dim=(2, 3))), feats


class LinearLogitToy(nn.Module):
    """y = <w, x>; the features output is just the input."""

    def __init__(self, shape=(8, 8), seed=0, scale=0.01):
        super().__init__()
        torch.manual_seed(seed)
        self.w = nn.Parameter(torch.randn(1, 3, *shape, dtype=torch.float64) * scale)

    def forward(self, x):
        return (self.w * x).sum().reshape(1, 1), x


def fixture_patch(seed: int) -> np.ndarray:
    """A 96x96 synthetic patch containing one crack, deterministic per seed."""
    return generate_synthetic_scene(PATCH_PARAMS, seed).image


@pytest.fixture(scope="session")
def fixture_bundle() -> CheckpointBundle:
    bundle_dir = FIXTURE_DIR / "fixture_model"
    if not (bundle_dir / "weights.pt").exists():
        pytest.fail(
            f"committed fixture model missing at {bundle_dir}; "
            "regenerate with scripts/make_fixtures.py"
        )
    return CheckpointBundle.load(bundle_dir)


@pytest.fixture(scope="session")
def fixture_model(fixture_bundle):
    model = fixture_bundle.model
    model.eval()
    return model
