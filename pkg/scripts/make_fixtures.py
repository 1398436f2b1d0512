"""Regenerate the committed test fixtures.

Usage: python scripts/make_fixtures.py [wisps|model|all]

Produces, under tests/fixtures/:
  crack_wisps.npy   a sparse dashed attribution map for post-processing tests
  fixture_model/    a small checkpoint trained on synthetic crack crops,
                    used by the climbing / proposer regression tests

Both are deterministic; rerunning overwrites with identical content (the
model up to backend numerics).
"""

import sys
from pathlib import Path

import numpy as np

REPO = Path(__file__).resolve().parent.parent
FIXTURES = REPO / "tests" / "fixtures"

CROP_SIZE = 96
MODEL_SEED = 2024


def make_crack_wisps() -> Path:
    """A dashed, wispy unit-max map: fragments a 5x5 closure should merge."""
    from camlabel.synthetic import _crack_polyline, _stroke, SceneParams

    rng = np.random.default_rng(2024)
    shape = (96, 96)
    params = SceneParams(size=shape, n_crack=1, n_spalling=0, n_rust=0,
                         crack_segments=6, crack_segment_len=(14, 24),
                         n_negative_clicks=0)
    alpha = np.zeros(shape)
    for _ in range(2):
        polyline = _crack_polyline(shape, rng, params)
        alpha = np.maximum(alpha, _stroke(shape, polyline, 2, antialiased=True))
    rows, cols = np.indices(shape)
    dashes = ((rows + cols) // 3) % 2 == 0  # 3-px gaps, inside closure reach
    values = alpha * dashes * rng.uniform(0.4, 1.0, shape)
    # isolated faint speckles, some above the binarization threshold
    speckle = rng.random(shape) < 0.01
    values = np.maximum(values, speckle * rng.uniform(0.05, 0.3, shape))
    peak = values.max()
    assert peak > 0
    values = values / peak
    target = FIXTURES / "crack_wisps.npy"
    target.parent.mkdir(parents=True, exist_ok=True)
    np.save(target, values.astype(np.float32))
    print(f"wrote {target}")
    return target


def make_fixture_model() -> Path:
    """Train the small committed checkpoint on synthetic crack crops."""
    import torch

    from camlabel.classifier import ModelConfig, TrainConfig, build_model, train
    from camlabel.synthetic import SceneParams, generate_synthetic_scene

    torch.manual_seed(MODEL_SEED)
    rng = np.random.default_rng(MODEL_SEED)

    pos_params = SceneParams(size=(CROP_SIZE, CROP_SIZE), n_crack=1, n_spalling=0,
                             n_rust=0, crack_segments=5,
                             crack_segment_len=(10, 22), n_negative_clicks=0)
    neg_params = SceneParams(size=(CROP_SIZE, CROP_SIZE), n_crack=0, n_spalling=0,
                             n_rust=0, n_negative_clicks=1)

    def crops(n, params, seed0):
        return np.stack([
            generate_synthetic_scene(params, seed0 + i).image for i in range(n)
        ])

    n_per_class = 120
    x_pos = crops(n_per_class, pos_params, 10_000)
    x_neg = crops(n_per_class, neg_params, 20_000)
    x = np.concatenate([x_pos, x_neg])
    y = np.concatenate([np.ones(n_per_class), np.zeros(n_per_class)])
    order = rng.permutation(len(y))
    x, y = x[order], y[order]
    n_val = 40
    data = ((x[n_val:], y[n_val:]), (x[:n_val], y[:n_val]))

    model_cfg = ModelConfig(input_size=CROP_SIZE)
    train_cfg = TrainConfig(batch_size=16, max_epochs=12, seed=MODEL_SEED,
                            learning_rate=1e-4, weight_decay=1e-2)
    model = build_model(model_cfg)
    bundle = train(model, *data, train_cfg,
                   log_callback=lambda row: print(
                       f"epoch {row['epoch']}: loss {row['loss']:.4f} "
                       f"f1 {row['f_measure']:.3f}"))
    target = FIXTURES / "fixture_model"
    bundle.save(target)
    print(f"best f-measure {bundle.best_f_measure:.3f} (epoch {bundle.best_epoch})")
    print(f"wrote {target}")
    return target


if __name__ == "__main__":
    what = sys.argv[1] if len(sys.argv) > 1 else "all"
    if what in ("wisps", "all"):
        make_crack_wisps()
    if what in ("model", "all"):
        make_fixture_model()
