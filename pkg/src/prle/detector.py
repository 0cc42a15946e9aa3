"""Single-layer convolutional detector with a hand-written backward pass.

Architecture: conv 3x3 (stride 1, zero pad 1) -> ReLU -> global average pool
-> linear -> sigmoid. Images are single channel, values in [0, 1].
"""

from dataclasses import dataclass

import numpy as np


BCE_EPS = 1e-12


@dataclass
class DetectorParams:
    conv_weights: np.ndarray  # (K, 1, 3, 3)
    conv_bias: np.ndarray  # (K,)
    linear_weights: np.ndarray  # (K,)
    linear_bias: float
    input_side: int = 32

    def __post_init__(self):
        self.conv_weights = np.asarray(self.conv_weights, dtype=np.float64)
        self.conv_bias = np.asarray(self.conv_bias, dtype=np.float64)
        self.linear_weights = np.asarray(self.linear_weights, dtype=np.float64)
        self.linear_bias = float(self.linear_bias)
        k = self.conv_weights.shape[0]
        if k < 1 or self.conv_weights.shape != (k, 1, 3, 3):
            raise ValueError(f"conv_weights must be K x 1 x 3 x 3, got {self.conv_weights.shape}")
        if self.conv_bias.shape != (k,) or self.linear_weights.shape != (k,):
            raise ValueError("conv_bias and linear_weights must have length K")
        for f in ("conv_weights", "conv_bias", "linear_weights"):
            if not np.all(np.isfinite(getattr(self, f))):
                raise ValueError(f"{f} contains non-finite values")
        if not np.isfinite(self.linear_bias):
            raise ValueError("linear_bias is not finite")

    @property
    def channels(self):
        return self.conv_weights.shape[0]

    @classmethod
    def init(cls, channels, seed, input_side=32):
        """Uniform [-0.5, 0.5] draws scaled by 1/sqrt(fan_in)."""
        rng = np.random.default_rng(seed)
        conv_w = rng.uniform(-0.5, 0.5, size=(channels, 1, 3, 3)) / np.sqrt(9.0)
        conv_b = rng.uniform(-0.5, 0.5, size=channels) / np.sqrt(9.0)
        lin_w = rng.uniform(-0.5, 0.5, size=channels) / np.sqrt(channels)
        lin_b = rng.uniform(-0.5, 0.5) / np.sqrt(channels)
        return cls(conv_w, conv_b, lin_w, lin_b, input_side)

    @classmethod
    def zeros_like(cls, other):
        return cls(
            np.zeros_like(other.conv_weights),
            np.zeros_like(other.conv_bias),
            np.zeros_like(other.linear_weights),
            0.0,
            other.input_side,
        )

    def copy(self):
        return DetectorParams(
            self.conv_weights.copy(),
            self.conv_bias.copy(),
            self.linear_weights.copy(),
            self.linear_bias,
            self.input_side,
        )

    def tensors(self):
        """Field name -> float64 array, in declaration order."""
        return {
            "conv_weights": self.conv_weights,
            "conv_bias": self.conv_bias,
            "linear_weights": self.linear_weights,
            "linear_bias": np.array([self.linear_bias]),
        }

    def flat(self):
        return np.concatenate([t.ravel() for t in self.tensors().values()])

    @classmethod
    def from_flat(cls, vec, channels, input_side=32):
        k = channels
        vec = np.asarray(vec, dtype=np.float64)
        conv_w = vec[: 9 * k].reshape(k, 1, 3, 3)
        conv_b = vec[9 * k : 10 * k]
        lin_w = vec[10 * k : 11 * k]
        return cls(conv_w, conv_b, lin_w, vec[11 * k], input_side)

    def __eq__(self, other):
        if not isinstance(other, DetectorParams):
            return NotImplemented
        return self.input_side == other.input_side and all(
            np.array_equal(a, b) for a, b in zip(self.tensors().values(), other.tensors().values())
        )


@dataclass
class ForwardTrace:
    activations: np.ndarray  # post-ReLU, (K, H, W)
    pooled: np.ndarray  # (K,)
    logit: float
    score: float


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def bce_loss(score, label):
    """Binary cross-entropy with the score clamped to [eps, 1 - eps]."""
    s = np.clip(score, BCE_EPS, 1.0 - BCE_EPS)
    return -(label * np.log(s) + (1 - label) * np.log(1.0 - s))


def _as_batch(params, images):
    x = np.asarray(images, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    side = params.input_side
    if x.ndim != 3 or x.shape[1:] != (side, side):
        raise ValueError(f"expected {side}x{side} image(s), got shape {np.shape(images)}")
    return x, single


def _patches(x):
    """(B, H, W) -> (9, B*H*W) zero-padded 3x3 neighbourhoods, kernel-major."""
    b, h, w = x.shape
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.empty((9, b, h, w))
    for i in range(9):
        dr, dc = divmod(i, 3)
        out[i] = padded[:, dr : dr + h, dc : dc + w]
    return out.reshape(9, -1)


def _forward_batch(params, x):
    b, h, w = x.shape
    patches = _patches(x)
    kernel = params.conv_weights.reshape(params.channels, 9)
    pre = kernel @ patches + params.conv_bias[:, None]  # (K, B*H*W)
    act = np.maximum(pre, 0.0)
    pooled = (act.reshape(-1, b, h * w) @ np.ones(h * w)).T / (h * w)  # (B, K)
    logits = pooled @ params.linear_weights + params.linear_bias
    return patches, pre, act, pooled, logits


def predict(params, images):
    """Scores in (0, 1) for a batch (B, H, W) or a single image."""
    x, single = _as_batch(params, images)
    scores = np.concatenate(
        [sigmoid(_forward_batch(params, x[i : i + 32])[-1]) for i in range(0, len(x), 32)]
    )
    return scores[0] if single else scores


def forward(params, image):
    x, _ = _as_batch(params, image)
    if x.shape[0] != 1:
        raise ValueError("forward takes a single image")
    _, _, act, pooled, logits = _forward_batch(params, x)
    z = float(logits[0])
    return ForwardTrace(
        activations=act.reshape(params.channels, *x.shape[1:]),
        pooled=pooled[0],
        logit=z,
        score=float(sigmoid(z)),
    )


def batch_gradients(params, images, labels, weights=None):
    """Loss and parameter gradients of mean_i(weight_i * bce_i) over a batch.

    Returns (loss, grads, scores) where grads is a DetectorParams holding the
    gradient of each field.
    """
    x, _ = _as_batch(params, images)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    n = x.shape[0]
    if y.shape[0] != n:
        raise ValueError("labels and images differ in length")
    wts = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)

    patches, pre, act, pooled, logits = _forward_batch(params, x)
    scores = sigmoid(logits)
    loss = float(np.mean(wts * bce_loss(scores, y)))

    # d bce / dz = score - y, zero where the clamp is active
    unclamped = (scores > BCE_EPS) & (scores < 1.0 - BCE_EPS)
    dz = np.where(unclamped, scores - y, 0.0) * wts / n  # (B,)
    d_lin_w = pooled.T @ dz
    d_lin_b = dz.sum()
    hw = x.shape[1] * x.shape[2]
    # d loss / d activation is spatially constant per (example, channel)
    d_act = np.outer(params.linear_weights, dz) / hw  # (K, B)
    d_pre = (pre > 0) * np.repeat(d_act, hw, axis=1)  # (K, B*H*W)
    d_conv_b = d_pre @ np.ones(d_pre.shape[1])
    d_conv_w = (d_pre @ patches.T).reshape(params.channels, 1, 3, 3)
    grads = DetectorParams(d_conv_w, d_conv_b, d_lin_w, d_lin_b, params.input_side)
    return loss, grads, scores


def backward(params, image, label):
    """Gradients for a single example.

    Returns (param_grads, feature_grads): the loss gradient for each parameter
    and d score / d activation, shaped (K, H, W).
    """
    _, grads, _ = batch_gradients(params, np.asarray(image)[None], [label])
    trace = forward(params, image)
    return grads, _score_feature_grads(params, trace)


def _score_feature_grads(params, trace):
    k, h, w = trace.activations.shape
    dsig = trace.score * (1.0 - trace.score)
    per_channel = dsig * params.linear_weights / (h * w)
    return np.broadcast_to(per_channel[:, None, None], (k, h, w)).copy()


def extract_cam_inputs(params, image):
    """Last-layer activations paired with their score gradients."""
    trace = forward(params, image)
    return trace.activations, _score_feature_grads(params, trace)


def cam_batch(params, images):
    """Raw Grad-CAM maps (B, H, W) for a batch of images.

    Vectorised equivalent of compute_cam(*extract_cam_inputs(params, img)).
    """
    x, _ = _as_batch(params, images)
    b, h, w = x.shape
    _, _, act, _, logits = _forward_batch(params, x)
    s = sigmoid(logits)
    # channel weight = spatial mean of a constant gradient map
    cw = (s * (1.0 - s))[None, :] * params.linear_weights[:, None] / (h * w)  # (K, B)
    cam = np.einsum("kbn,kb->bn", act.reshape(-1, b, h * w), cw)
    return np.maximum(cam, 0.0).reshape(b, h, w)

