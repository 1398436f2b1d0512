"""Per-defect binary classifier: configs, training loop, checkpoints.

One model is trained per defect class on balanced defect / no-defect crops.
Checkpoint selection follows the validation f-measure (F1 at probability
threshold 0.5 on the sigmoid of the single logit).
"""

from __future__ import annotations

import copy
import csv
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.metrics import f1_score
from torch import nn

from .unet import UNetClassifierNet, batch_to_tensor


@dataclass(frozen=True)
class ModelConfig:
    encoder_blocks: int = 2
    first_conv_stride: int = 1
    decoder_channels: tuple[int, ...] | None = None
    num_classes: int = 1
    input_size: int = 320

    def __post_init__(self):
        if self.encoder_blocks not in (1, 2, 3):
            raise ValueError(f"encoder_blocks must be in {{1,2,3}}, got {self.encoder_blocks}")
        if self.first_conv_stride not in (1, 2):
            raise ValueError(f"first_conv_stride must be 1 or 2, got {self.first_conv_stride}")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.input_size < 32:
            raise ValueError("input_size must be >= 32")
        if self.decoder_channels is not None:
            object.__setattr__(self, "decoder_channels", tuple(self.decoder_channels))

    def resolved_decoder_channels(self) -> tuple[int, ...]:
        if self.decoder_channels is not None:
            return self.decoder_channels
        n_up = min(2, self.encoder_blocks)
        return tuple(64 * 2 ** (n_up - 1 - i) for i in range(n_up))


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-4
    weight_decay: float = 1e-2
    max_epochs: int = 20
    seed: int = 0
    augment: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be >= 0")


def build_model(config: ModelConfig) -> UNetClassifierNet:
    """Construct the network for a config; raises ValueError on bad configs."""
    net = UNetClassifierNet(
        encoder_blocks=config.encoder_blocks,
        first_conv_stride=config.first_conv_stride,
        decoder_channels=config.resolved_decoder_channels(),
        num_classes=config.num_classes,
    )
    net.model_config = config
    return net


def make_optimizer(model: nn.Module, config: TrainConfig) -> torch.optim.AdamW:
    """Decoupled-weight-decay adaptive-moment optimizer, other knobs default."""
    return torch.optim.AdamW(
        model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )


def _augment_batch(xb: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    """Random horizontal/vertical flips and 90-degree rotations per sample."""
    out = []
    for i in range(xb.shape[0]):
        t = xb[i]
        if rng.random() < 0.5:
            t = torch.flip(t, dims=(2,))
        if rng.random() < 0.5:
            t = torch.flip(t, dims=(1,))
        k = int(rng.integers(0, 4))
        if k:
            t = torch.rot90(t, k, dims=(1, 2))
        out.append(t)
    return torch.stack(out)


def train(model: UNetClassifierNet, train_data, val_data, config: TrainConfig,
          log_callback=None) -> "CheckpointBundle":
    """Train and return the bundle holding the best-f-measure checkpoint.

    ``train_data`` / ``val_data`` are ``(X, y)`` pairs with X an
    (N, H, W, 3) uint8 (or [0,1] float) stack and y binary {0, 1} labels.
    """
    x_train, y_train = train_data
    x_val, y_val = val_data
    y_train = np.asarray(y_train).astype(np.float32).reshape(-1)
    y_val = np.asarray(y_val).astype(np.float32).reshape(-1)
    if len(y_train) == 0:
        raise ValueError("empty training set")
    if len(y_val) == 0:
        raise ValueError("empty validation set")

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    xt = batch_to_tensor(x_train)
    yt = torch.as_tensor(y_train)
    xv = batch_to_tensor(x_val)

    optimizer = make_optimizer(model, config)
    criterion = nn.BCEWithLogitsLoss()

    history = []
    best_f1 = -1.0
    best_epoch = -1
    best_state = copy.deepcopy(model.state_dict())
    n = xt.shape[0]
    for epoch in range(config.max_epochs):
        model.train()
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb = xt[idx]
            if config.augment:
                xb = _augment_batch(xb, rng)
            yb = yt[idx]
            optimizer.zero_grad(set_to_none=True)
            logits, _ = model(xb)
            loss = criterion(logits[:, 0], yb)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"training diverged: non-finite loss at epoch {epoch}"
                )
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
        val_probs = predict(model, xv)
        f1 = float(f1_score(y_val > 0.5, val_probs >= 0.5, zero_division=0))
        row = {"epoch": epoch, "loss": float(np.mean(losses)), "f_measure": f1}
        history.append(row)
        if log_callback:
            log_callback(row)
        if f1 > best_f1:
            best_f1 = f1
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())

    model.load_state_dict(best_state)
    model.eval()
    return CheckpointBundle(
        model=model,
        model_config=_config_of(model),
        train_config=config,
        history=history,
        best_epoch=best_epoch,
        best_f_measure=best_f1,
    )


def _config_of(model: UNetClassifierNet) -> ModelConfig:
    config = getattr(model, "model_config", None)
    if config is not None:
        return config
    return ModelConfig(
        encoder_blocks=model.encoder_blocks,
        first_conv_stride=model.conv1.stride[0],
        decoder_channels=model.decoder_channels,
        num_classes=model.num_classes,
    )


@torch.no_grad()
def predict(model: nn.Module, patches, input_size: int | None = None) -> np.ndarray:
    """Sigmoid probability of the defect logit for one patch or a batch.

    Returns a (N,) array; a single HxWx3 patch yields a length-1 array.
    When ``input_size`` is given, patches must be square of that size.
    """
    arr = np.asarray(patches)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[3] != 3:
        raise ValueError(f"expected HxWx3 patch or NxHxWx3 batch, got {arr.shape}")
    if input_size is not None and arr.shape[1:3] != (input_size, input_size):
        raise ValueError(
            f"patch size {arr.shape[1:3]} does not match model input size {input_size}"
        )
    model.eval()
    dtype = next(model.parameters()).dtype
    logits, _ = model(batch_to_tensor(arr, dtype=dtype))
    return torch.sigmoid(logits[:, 0]).cpu().numpy()


@dataclass
class CheckpointBundle:
    """A trained model plus everything needed to reproduce or reload it."""

    model: UNetClassifierNet
    model_config: ModelConfig
    train_config: TrainConfig
    history: list = field(default_factory=list)
    best_epoch: int = -1
    best_f_measure: float = float("nan")

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        torch.save(self.model.state_dict(), directory / "weights.pt")
        (directory / "model_config.json").write_text(
            json.dumps(asdict(self.model_config), indent=2)
        )
        meta = asdict(self.train_config)
        meta.update(best_epoch=self.best_epoch, best_f_measure=self.best_f_measure)
        (directory / "train_config.json").write_text(json.dumps(meta, indent=2))
        with open(directory / "training_log.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["epoch", "loss", "f_measure"])
            writer.writeheader()
            writer.writerows(self.history)
        return directory

    @classmethod
    def load(cls, directory) -> "CheckpointBundle":
        directory = Path(directory)
        raw = json.loads((directory / "model_config.json").read_text())
        if raw.get("decoder_channels") is not None:
            raw["decoder_channels"] = tuple(raw["decoder_channels"])
        model_config = ModelConfig(**raw)
        meta = json.loads((directory / "train_config.json").read_text())
        best_epoch = meta.pop("best_epoch", -1)
        best_f1 = meta.pop("best_f_measure", float("nan"))
        train_config = TrainConfig(**meta)
        model = build_model(model_config)
        model.load_state_dict(torch.load(directory / "weights.pt", weights_only=True))
        model.eval()
        history = []
        log_path = directory / "training_log.csv"
        if log_path.exists():
            with open(log_path, newline="") as fh:
                for row in csv.DictReader(fh):
                    history.append(
                        {"epoch": int(row["epoch"]), "loss": float(row["loss"]),
                         "f_measure": float(row["f_measure"])}
                    )
        return cls(model=model, model_config=model_config, train_config=train_config,
                   history=history, best_epoch=best_epoch, best_f_measure=best_f1)


class UNetCropClassifier(BaseEstimator, ClassifierMixin):
    """Estimator wrapper so crop classification slots into sklearn tooling.

    X is an (N, H, W, 3) uint8 stack, y binary labels. ``fit`` accepts an
    explicit validation set; without one it carves 20% off the training
    stack (seeded) since checkpoint selection needs validation data.
    """

    def __init__(self, encoder_blocks=2, first_conv_stride=1, decoder_channels=None,
                 input_size=320, batch_size=32, learning_rate=1e-4, weight_decay=1e-2,
                 max_epochs=20, seed=0, augment=True):
        self.encoder_blocks = encoder_blocks
        self.first_conv_stride = first_conv_stride
        self.decoder_channels = decoder_channels
        self.input_size = input_size
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.max_epochs = max_epochs
        self.seed = seed
        self.augment = augment

    def _configs(self) -> tuple[ModelConfig, TrainConfig]:
        model_cfg = ModelConfig(
            encoder_blocks=self.encoder_blocks,
            first_conv_stride=self.first_conv_stride,
            decoder_channels=self.decoder_channels,
            input_size=self.input_size,
        )
        train_cfg = TrainConfig(
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            max_epochs=self.max_epochs,
            seed=self.seed,
            augment=self.augment,
        )
        return model_cfg, train_cfg

    def fit(self, X, y, X_val=None, y_val=None):
        X = np.asarray(X)
        y = np.asarray(y).reshape(-1)
        model_cfg, train_cfg = self._configs()
        if X_val is None:
            rng = np.random.default_rng(train_cfg.seed)
            order = rng.permutation(len(y))
            n_val = max(1, len(y) // 5)
            val_idx, train_idx = order[:n_val], order[n_val:]
            X, X_val, y, y_val = X[train_idx], X[val_idx], y[train_idx], y[val_idx]
        model = build_model(model_cfg)
        self.bundle_ = train(model, (X, y), (X_val, y_val), train_cfg)
        self.model_ = self.bundle_.model
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X) -> np.ndarray:
        p = predict(self.model_, X, input_size=self.input_size)
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)
