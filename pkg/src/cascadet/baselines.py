"""Comparison models: recurrent sequence classifier with temporal attention,
thermal CNN with spatial attention, gated cross-modal fusion, and late fusion.

Model sizes are desk-scale (recurrent hidden 32, attention dim 16, conv stack
8->16->32) so everything trains from scratch on one core; the production-scale
reference uses a bidirectional recurrent encoder at hidden 128 and a
pretrained image backbone, so absolute scores are not comparable, only the
qualitative orderings.

Each model owns three rng streams spawned from its seed (parameter init,
dropout, batch shuffling), making training trajectories reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from cascadet.data.types import Dataset, N_CLASSES
from cascadet.neuralkit.layers import Conv2d, Dense, Dropout, GRUCell, Module
from cascadet.neuralkit.tensor import (
    Tensor,
    concat,
    matmul,
    relu,
    sigmoid,
    softmax,
    softmax_probs,
    stack,
    tanh,
)
from cascadet.neuralkit.training import TrainConfig, TrainingHistory, train_with_early_stopping
from cascadet.preprocess import (
    ThermalNormalizer,
    ZScoreScaler,
    fit_scaler,
)

DROPOUT_RATE = 0.3
ATTENTION_DIM = 16
HIDDEN_SIZE = 32
CONV_CHANNELS = (8, 16, 32)
CROSS_ATTENTION_DIM = 32


def _spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


class SequenceEncoder(Module):
    """Single-direction gated recurrent encoder with temporal attention pooling."""

    def __init__(self, n_channels: int, rng: np.random.Generator, hidden: int = HIDDEN_SIZE):
        super().__init__()
        self.hidden = hidden
        self.cell = GRUCell(n_channels, hidden, rng)
        self.att_proj = Dense(hidden, ATTENTION_DIM, rng)
        bound = 1.0 / math.sqrt(ATTENTION_DIM)
        self.att_vec = Tensor(
            rng.uniform(-bound, bound, size=(ATTENTION_DIM, 1)), requires_grad=True
        )

    def encode(self, x: np.ndarray) -> tuple[Tensor, Tensor, Tensor]:
        """x [N x T x D] -> (hidden states [N x T x h], context [N x h], alpha [N x T])."""
        n, t, _ = x.shape
        h = self.cell.initial_state(n)
        states = []
        for step in range(t):
            h = self.cell(Tensor(x[:, step]), h)
            states.append(h)
        hs = stack(states, axis=1)
        scores = matmul(tanh(self.att_proj(hs)), self.att_vec).reshape(n, t)
        alpha = softmax(scores, axis=1)
        context = (alpha.reshape(n, t, 1) * hs).sum(axis=1)
        return hs, context, alpha


class SequenceClassifier(Module):
    """Stage-1 neural baseline: recurrent encoder -> attention -> softmax head."""

    def __init__(self, n_channels: int, seed: int = 0, hidden: int = HIDDEN_SIZE):
        super().__init__()
        init_rng, drop_rng = _spawn_rngs(seed, 2)
        self.encoder = SequenceEncoder(n_channels, init_rng, hidden)
        self.dropout = Dropout(DROPOUT_RATE, drop_rng)
        self.head = Dense(hidden, N_CLASSES, init_rng)
        self.seed = seed

    def __call__(self, x: np.ndarray) -> Tensor:
        _, context, _ = self.encoder.encode(x)
        return self.head(self.dropout(context))

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        self.eval_mode()
        return softmax_probs(self(x))

    def attention_weights(self, x: np.ndarray) -> np.ndarray:
        """Normalized temporal attention distribution, [N x T] (or [T] for one window)."""
        single = x.ndim == 2
        if single:
            x = x[None]
        self.eval_mode()
        _, _, alpha = self.encoder.encode(x)
        return alpha.data[0] if single else alpha.data


class ThermalEncoder(Module):
    """Three stride-2 conv blocks with a sigmoid spatial-attention mask."""

    def __init__(self, rng: np.random.Generator):
        super().__init__()
        c1, c2, c3 = CONV_CHANNELS
        self.conv1 = Conv2d(1, c1, 3, rng, stride=2, padding=1)
        self.conv2 = Conv2d(c1, c2, 3, rng, stride=2, padding=1)
        self.conv3 = Conv2d(c2, c3, 3, rng, stride=2, padding=1)
        self.att_conv = Conv2d(c3, 1, 1, rng)
        self.out_channels = c3
        # product of conv strides; saliency upsampling uses it for alignment
        self.total_stride = 8
        self.encode_calls = 0

    def encode(self, x: np.ndarray | Tensor) -> dict[str, Tensor]:
        """x [N x 1 x H x W] -> feature map, attention map, attended map, pooled context."""
        self.encode_calls += 1
        t = x if isinstance(x, Tensor) else Tensor(x)
        f = relu(self.conv3(relu(self.conv2(relu(self.conv1(t))))))
        attention = sigmoid(self.att_conv(f))
        attended = attention * f
        context = attended.mean(axis=(2, 3))
        return {"features": f, "attention": attention, "attended": attended, "context": context}


class ThermalClassifier(Module):
    """Thermal-only baseline; also the stage-2 localization backbone."""

    def __init__(self, seed: int = 0):
        super().__init__()
        init_rng, drop_rng = _spawn_rngs(seed, 2)
        self.encoder = ThermalEncoder(init_rng)
        self.dropout = Dropout(DROPOUT_RATE, drop_rng)
        self.head = Dense(self.encoder.out_channels, N_CLASSES, init_rng)
        self.seed = seed

    def __call__(self, x: np.ndarray | Tensor) -> Tensor:
        return self.logits_from_encoding(self.encoder.encode(x))

    def logits_from_encoding(self, encoding: dict[str, Tensor]) -> Tensor:
        return self.head(self.dropout(encoding["context"]))

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        self.eval_mode()
        return softmax_probs(self(x))


def _dot_attention(query: Tensor, keys: Tensor, values: Tensor) -> Tensor:
    """Single-head dot-product attention of one query over a set.

    query [N x dk], keys [N x S x dk], values [N x S x dv] -> [N x dv].
    """
    n, s, dk = keys.shape
    scores = (keys * query.reshape(n, 1, dk)).sum(axis=2) * (1.0 / math.sqrt(dk))
    alpha = softmax(scores, axis=1)
    return (alpha.reshape(n, s, 1) * values).sum(axis=1)


class FusionModel(Module):
    """Cross-modal attention both ways, scalar sigmoid gate, fused classifier.

    The sensor context attends over thermal spatial positions; the thermal
    context attends over the recurrent hidden states. The fused vector is
    g * attended-thermal + (1 - g) * attended-sensor with scalar g per sample.
    Setting gate_override pins g for diagnostics.
    """

    def __init__(self, n_channels: int, seed: int = 0):
        super().__init__()
        init_rng, drop_rng = _spawn_rngs(seed, 2)
        d = CROSS_ATTENTION_DIM
        self.sensor_encoder = SequenceEncoder(n_channels, init_rng)
        self.thermal_encoder = ThermalEncoder(init_rng)
        ct = self.thermal_encoder.out_channels
        h = self.sensor_encoder.hidden
        self.q_sensor = Dense(h, d, init_rng)
        self.k_thermal = Dense(ct, d, init_rng)
        self.v_thermal = Dense(ct, d, init_rng)
        self.q_thermal = Dense(ct, d, init_rng)
        self.k_sensor = Dense(h, d, init_rng)
        self.v_sensor = Dense(h, d, init_rng)
        self.gate = Dense(2 * d, 1, init_rng)
        self.dropout = Dropout(DROPOUT_RATE, drop_rng)
        self.head = Dense(d, N_CLASSES, init_rng)
        self.seed = seed
        self.gate_override: Optional[float] = None
        self.last_forward: dict[str, np.ndarray] = {}

    def __call__(self, x_sensor: np.ndarray, x_thermal: np.ndarray) -> Tensor:
        n = x_sensor.shape[0]
        hs, c_s, _ = self.sensor_encoder.encode(x_sensor)
        enc = self.thermal_encoder.encode(x_thermal)
        f_att = enc["attended"]
        _, ch, fh, fw = f_att.shape
        spatial = f_att.reshape(n, ch, fh * fw).transpose(0, 2, 1)  # [N x S x C]

        c_s_att = _dot_attention(
            self.q_sensor(c_s), self.k_thermal(spatial), self.v_thermal(spatial)
        )
        c_t_att = _dot_attention(
            self.q_thermal(enc["context"]), self.k_sensor(hs), self.v_sensor(hs)
        )
        if self.gate_override is None:
            g = sigmoid(self.gate(concat([c_s_att, c_t_att], axis=1)))
        else:
            g = Tensor(np.full((n, 1), float(self.gate_override)))
        fused = g * c_t_att + (1.0 - g) * c_s_att
        logits = self.head(self.dropout(fused))
        self.last_forward = {
            "sensor_context": c_s.data.copy(),
            "thermal_context": enc["context"].data.copy(),
            "gate": g.data.reshape(-1).copy(),
        }
        return logits

    def predict_proba(self, x_sensor: np.ndarray, x_thermal: np.ndarray) -> np.ndarray:
        self.eval_mode()
        return softmax_probs(self(x_sensor, x_thermal))

    def gate_values(self, x_sensor: np.ndarray, x_thermal: np.ndarray) -> np.ndarray:
        """Per-sample scalar gate weights in (0, 1)."""
        self.eval_mode()
        self(x_sensor, x_thermal)
        return self.last_forward["gate"].copy()


@dataclass
class LateFusion:
    """Unweighted mean of the two unimodal probability vectors."""

    sequence: SequenceClassifier
    thermal: ThermalClassifier

    def predict_proba(self, x_sensor: np.ndarray, x_thermal: np.ndarray) -> np.ndarray:
        return 0.5 * (
            self.sequence.predict_proba(x_sensor) + self.thermal.predict_proba(x_thermal)
        )


def gate_values(model: FusionModel, x_sensor: np.ndarray, x_thermal: np.ndarray) -> np.ndarray:
    return model.gate_values(x_sensor, x_thermal)


def attention_weights(model: SequenceClassifier, x: np.ndarray) -> np.ndarray:
    return model.attention_weights(x)


# ---------------------------------------------------------------------------
# Data preparation and training glue.
# ---------------------------------------------------------------------------


@dataclass
class PreparedData:
    """Normalized tensors for both splits plus the fitted transforms."""

    scaler: ZScoreScaler
    normalizer: ThermalNormalizer
    channel_names: tuple[str, ...]
    xs_train: np.ndarray  # [n x T x D], z-scored
    xt_train: np.ndarray  # [n x 1 x H x W], in [0, 1]
    y_train: np.ndarray
    xs_val: np.ndarray
    xt_val: np.ndarray
    y_val: np.ndarray


def prepare_data(dataset: Dataset, normalizer: ThermalNormalizer = ThermalNormalizer()) -> PreparedData:
    train = dataset.train_samples
    val = dataset.validation_samples
    if not train or not val:
        raise ValueError("dataset needs both train and validation samples")
    raw_train = np.stack([s.sensors.values for s in train]).astype(np.float64)
    raw_val = np.stack([s.sensors.values for s in val]).astype(np.float64)
    scaler = fit_scaler(raw_train)
    xt_train = normalizer.transform_array(
        np.stack([s.thermal.pixels for s in train]).astype(np.float64)
    )[:, None, :, :]
    xt_val = normalizer.transform_array(
        np.stack([s.thermal.pixels for s in val]).astype(np.float64)
    )[:, None, :, :]
    return PreparedData(
        scaler=scaler,
        normalizer=normalizer,
        channel_names=train[0].sensors.channel_names,
        xs_train=scaler.transform_array(raw_train),
        xt_train=xt_train,
        y_train=np.array([int(s.label) for s in train]),
        xs_val=scaler.transform_array(raw_val),
        xt_val=xt_val,
        y_val=np.array([int(s.label) for s in val]),
    )


@dataclass(frozen=True)
class AugmentConfig:
    enabled: bool = True
    noise_sigma: float = 0.01  # variance convention: std 0.1
    sigma_is_variance: bool = True
    warp_prob: float = 0.1
    flip_prob: float = 0.5
    max_rotation_deg: float = 10.0
    jitter: float = 0.1


def _augment_sensor_batch(
    batch: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig
) -> np.ndarray:
    out = batch.copy()
    std = math.sqrt(cfg.noise_sigma) if cfg.sigma_is_variance else cfg.noise_sigma
    if std > 0:
        out += rng.normal(0.0, std, size=out.shape)
    from cascadet.preprocess import _time_warp  # shared warp implementation

    for i in range(out.shape[0]):
        if rng.random() < cfg.warp_prob:
            out[i] = _time_warp(out[i], rng)
    return out


def _augment_thermal_batch(
    batch: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig
) -> np.ndarray:
    from cascadet.preprocess import _rotate_bilinear

    out = batch.copy()
    for i in range(out.shape[0]):
        img = out[i, 0]
        if rng.random() < cfg.flip_prob:
            img = img[:, ::-1]
        angle = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg)
        if angle != 0.0:
            img = _rotate_bilinear(np.ascontiguousarray(img), angle)
        if cfg.jitter > 0:
            contrast = rng.uniform(1.0 - cfg.jitter, 1.0 + cfg.jitter)
            brightness = rng.uniform(1.0 - cfg.jitter, 1.0 + cfg.jitter)
            m = img.mean()
            img = (m + (img - m) * contrast) * brightness
        out[i, 0] = np.clip(img, 0.0, 1.0)
    return out


def _eval_cross_entropy(logits: np.ndarray, y: np.ndarray) -> float:
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    return float((lse - shifted[np.arange(len(y)), y]).mean())


SEQUENCE = "sequence"
THERMAL = "thermal"
FUSION = "fusion"
LATE_FUSION = "late_fusion"


def train_sequence(
    prep: PreparedData,
    seed: int,
    train_config: Optional[TrainConfig] = None,
    augment: AugmentConfig = AugmentConfig(),
) -> tuple[SequenceClassifier, TrainingHistory]:
    model = SequenceClassifier(prep.xs_train.shape[2], seed=seed)
    cfg = train_config or TrainConfig(seed=seed)
    from cascadet.neuralkit.tensor import cross_entropy

    def batch_loss(idx: np.ndarray, rng: np.random.Generator):
        xs = prep.xs_train[idx]
        if augment.enabled:
            xs = _augment_sensor_batch(xs, rng, augment)
        return cross_entropy(model(xs), prep.y_train[idx])

    def val_loss() -> float:
        return _eval_cross_entropy(model(prep.xs_val).data, prep.y_val)

    history = train_with_early_stopping(model, len(prep.y_train), batch_loss, val_loss, cfg)
    return model, history


def train_thermal(
    prep: PreparedData,
    seed: int,
    train_config: Optional[TrainConfig] = None,
    augment: AugmentConfig = AugmentConfig(),
) -> tuple[ThermalClassifier, TrainingHistory]:
    model = ThermalClassifier(seed=seed)
    cfg = train_config or TrainConfig(seed=seed)
    from cascadet.neuralkit.tensor import cross_entropy

    def batch_loss(idx: np.ndarray, rng: np.random.Generator):
        xt = prep.xt_train[idx]
        if augment.enabled:
            xt = _augment_thermal_batch(xt, rng, augment)
        return cross_entropy(model(xt), prep.y_train[idx])

    def val_loss() -> float:
        return _eval_cross_entropy(model(prep.xt_val).data, prep.y_val)

    history = train_with_early_stopping(model, len(prep.y_train), batch_loss, val_loss, cfg)
    return model, history


def train_fusion(
    prep: PreparedData,
    seed: int,
    train_config: Optional[TrainConfig] = None,
    augment: AugmentConfig = AugmentConfig(),
) -> tuple[FusionModel, TrainingHistory]:
    model = FusionModel(prep.xs_train.shape[2], seed=seed)
    cfg = train_config or TrainConfig(seed=seed)
    from cascadet.neuralkit.tensor import cross_entropy

    def batch_loss(idx: np.ndarray, rng: np.random.Generator):
        xs = prep.xs_train[idx]
        xt = prep.xt_train[idx]
        if augment.enabled:
            xs = _augment_sensor_batch(xs, rng, augment)
            xt = _augment_thermal_batch(xt, rng, augment)
        return cross_entropy(model(xs, xt), prep.y_train[idx])

    def val_loss() -> float:
        return _eval_cross_entropy(model(prep.xs_val, prep.xt_val).data, prep.y_val)

    history = train_with_early_stopping(model, len(prep.y_train), batch_loss, val_loss, cfg)
    return model, history
