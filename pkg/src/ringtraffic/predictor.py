"""CNN-LSTM next-state predictor written directly in numpy.

Every time row ``x_t`` (N sites) passes through a feature extractor whose
weights are shared across rows and across ring positions:

    dense   h1[j] = tanh(x_t[j] * Wd + bd)                  (N, D)
    conv1   h2 = relu(circconv(h1, K1) + c1)                (N, C1)
    conv2   h3 = relu(circconv(h2, K2) + c2)                (N, C2)
    dropout h4 = mask * h3 / (1 - rate)                     (N, C2)

One LSTM (gate order i, f, g, o), its weights shared by all sites, reads the
W feature rows of each site in time order. The final hidden states of all
sites, flattened to N*H values, map through ``sigmoid(h Wo + bo)`` to N
occupancy probabilities. Up to the output layer the network commutes with
rotations of the ring.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .formats import FormatError, LengthMismatchError, read_container, write_container
from .metropolis import TimeSpaceDiagram

EPS = 1e-7
CHECKPOINT_MAGIC = b"TRNN0001"
PARAM_ORDER = (
    "dense_w", "dense_b",
    "conv1_w", "conv1_b",
    "conv2_w", "conv2_b",
    "lstm_wx", "lstm_wh", "lstm_b",
    "out_w", "out_b",
)  # fmt: skip


class PredictorError(ValueError):
    pass


@dataclass(frozen=True)
class PredictorConfig:
    n_sites: int = 50
    window: int = 30
    kernel_width: int = 5
    conv_channels: tuple[int, int] = (16, 16)
    dense_in: int = 8
    dropout_rate: float = 0.25
    lstm_hidden: int = 16
    alpha: float = 0.01
    learning_rate: float = 0.003
    momentum: float = 0.9
    optimizer: str = "adam"
    epochs: int = 25
    batch_size: int = 32
    clip_norm: float = 5.0
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        if len(self.conv_channels) != 2:
            raise PredictorError("exactly two convolution layers are supported")
        widths = (self.n_sites, self.window, self.dense_in, self.lstm_hidden, *self.conv_channels)
        if min(widths) < 1:
            raise PredictorError("all layer widths must be >= 1")
        if self.kernel_width % 2 != 1 or self.kernel_width >= self.n_sites:
            raise PredictorError("kernel_width must be odd and smaller than n_sites")
        if not 0 <= self.dropout_rate < 1:
            raise PredictorError("dropout_rate must lie in [0, 1)")
        if self.optimizer not in ("momentum", "adam"):
            raise PredictorError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise PredictorError("batch_size must be >= 1 and epochs >= 0")

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        n, d, k, h = self.n_sites, self.dense_in, self.kernel_width, self.lstm_hidden
        c1, c2 = self.conv_channels
        return {
            "dense_w": (1, d),
            "dense_b": (d,),
            "conv1_w": (k, d, c1),
            "conv1_b": (c1,),
            "conv2_w": (k, c1, c2),
            "conv2_b": (c2,),
            "lstm_wx": (c2, 4 * h),
            "lstm_wh": (h, 4 * h),
            "lstm_b": (4 * h,),
            "out_w": (n * h, n),
            "out_b": (n,),
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PredictorConfig":
        return cls(**d)


def _fan_in(name: str, shape) -> int:
    if name.endswith("_b"):
        return 1
    if name in ("conv1_w", "conv2_w"):
        return shape[0] * shape[1]
    return shape[0]


@dataclass
class PredictorModel:
    config: PredictorConfig
    params: dict[str, np.ndarray]
    rng: np.random.Generator = field(repr=False, default=None)

    @classmethod
    def init(cls, config: PredictorConfig) -> "PredictorModel":
        """Uniform fan-in init; LSTM forget-gate bias starts at 1."""
        rng = np.random.default_rng(config.init_seed)
        params = {}
        for name, shape in config.param_shapes().items():
            if name.endswith("_b"):
                params[name] = np.zeros(shape)
            else:
                bound = 1.0 / np.sqrt(_fan_in(name, shape))
                params[name] = rng.uniform(-bound, bound, size=shape)
        h = config.lstm_hidden
        params["lstm_b"][h : 2 * h] = 1.0
        return cls(config, params, np.random.default_rng([config.init_seed, 1]))

    @classmethod
    def zeros(cls, config: PredictorConfig) -> "PredictorModel":
        params = {name: np.zeros(shape) for name, shape in config.param_shapes().items()}
        return cls(config, params, np.random.default_rng([config.init_seed, 1]))

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng([self.config.init_seed, 1])
        shapes = self.config.param_shapes()
        if set(self.params) != set(shapes):
            raise PredictorError("parameter set does not match the configuration")
        for name, shape in shapes.items():
            if self.params[name].shape != shape:
                raise PredictorError(f"{name} has shape {self.params[name].shape}, expected {shape}")

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def circular_conv(x, w, b):
    """Centered cross-correlation over axis -2 with periodic padding.

    ``x`` is (..., L, Cin), ``w`` is (k, Cin, Cout).
    """
    k = w.shape[0]
    c = k // 2
    out = np.roll(x, c, axis=-2) @ w[0]
    for o in range(1, k):
        out += np.roll(x, c - o, axis=-2) @ w[o]
    return out + b


def _circular_conv_backward(x, w, grad_out):
    k = w.shape[0]
    c = k // 2
    cin, cout = w.shape[1], w.shape[2]
    g2 = grad_out.reshape(-1, cout)
    grad_w = np.empty_like(w)
    grad_x = None
    for o in range(k):
        grad_w[o] = np.roll(x, c - o, axis=-2).reshape(-1, cin).T @ g2
        term = np.roll(grad_out @ w[o].T, o - c, axis=-2)
        grad_x = term if grad_x is None else grad_x + term
    return grad_x, grad_w, g2.sum(axis=0)


def _features(params, x, mask):
    """Per-site embedding, two circular convolutions and dropout for every row."""
    a1 = x[..., None] * params["dense_w"][0] + params["dense_b"]
    h1 = np.tanh(a1)
    a2 = circular_conv(h1, params["conv1_w"], params["conv1_b"])
    h2 = np.maximum(a2, 0.0)
    a3 = circular_conv(h2, params["conv2_w"], params["conv2_b"])
    h3 = np.maximum(a3, 0.0)
    feats = h3 if mask is None else h3 * mask
    return feats, (x, h1, a2, h2, a3, mask)


def _lstm(params, feats, hidden):
    """Scan the shared LSTM over axis 1 of (B, W, N, C) features."""
    b, w, n, _ = feats.shape
    xp = feats @ params["lstm_wx"] + params["lstm_b"]
    wh = params["lstm_wh"]
    h = np.zeros((b, n, hidden))
    c = np.zeros((b, n, hidden))
    hs, cs, gates = [h], [c], []
    for t in range(w):
        z = xp[:, t] + h @ wh
        act = _sigmoid(z)
        i = act[..., :hidden]
        f = act[..., hidden : 2 * hidden]
        g = np.tanh(z[..., 2 * hidden : 3 * hidden])
        o = act[..., 3 * hidden :]
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        gates.append((i, f, g, o, tc))
        hs.append(h)
        cs.append(c)
    return h, (hs, cs, gates)


def dropout_mask(model: PredictorModel, shape) -> np.ndarray | None:
    rate = model.config.dropout_rate
    if rate == 0:
        return None
    keep = model.rng.random(shape) >= rate
    return keep / (1.0 - rate)


def forward_batch(model: PredictorModel, x, training: bool = False, mask=None):
    """Probabilities for a (B, W, N) batch; returns ``(probs, cache)``.

    In training mode a fresh dropout mask is drawn from the model's generator
    unless ``mask`` (shape (B, W, N, C2)) is given.
    """
    cfg = model.config
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1:] != (cfg.window, cfg.n_sites):
        raise PredictorError(
            f"expected input of shape (B, {cfg.window}, {cfg.n_sites}), got {x.shape}"
        )
    if not training:
        mask = None
    elif mask is None:
        mask = dropout_mask(model, x.shape + (cfg.conv_channels[1],))
    feats, fcache = _features(model.params, x, mask)
    h, lcache = _lstm(model.params, feats, cfg.lstm_hidden)
    flat = h.reshape(h.shape[0], -1)
    probs = _sigmoid(flat @ model.params["out_w"] + model.params["out_b"])
    return probs, (fcache, feats, lcache, flat, probs)


def forward(model: PredictorModel, window, training: bool = False) -> np.ndarray:
    """N occupancy probabilities for the step after a (W, N) window."""
    window = np.asarray(window)
    if window.ndim != 2:
        raise PredictorError(f"expected a 2-D window, got shape {window.shape}")
    probs, _ = forward_batch(model, window[None], training=training)
    return probs[0]


def loss(pred, target, alpha: float, n_vehicle) -> float:
    """Binary cross-entropy plus ``alpha * (n_vehicle - sum(pred))``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise PredictorError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(batch_loss(pred[None], target[None], alpha, np.atleast_1d(n_vehicle)))


def batch_loss(probs, targets, alpha, n_vehicles=None) -> float:
    """Mean over the batch of the per-sample loss."""
    if n_vehicles is None:
        n_vehicles = targets.sum(axis=-1)
    p = np.clip(probs, EPS, 1 - EPS)
    bce = -np.mean(targets * np.log(p) + (1 - targets) * np.log(1 - p), axis=-1)
    penalty = alpha * (np.asarray(n_vehicles, dtype=np.float64) - probs.sum(axis=-1))
    return float(np.mean(bce + penalty))


def _loss_grad_logits(probs, targets, alpha):
    n = probs.shape[-1]
    inside = (probs > EPS) & (probs < 1 - EPS)
    p = np.clip(probs, EPS, 1 - EPS)
    dbce_dp = -(targets / p - (1 - targets) / (1 - p)) / n * inside
    dloss_dp = dbce_dp - alpha
    return dloss_dp * probs * (1 - probs) / probs.shape[0]


def backward(model: PredictorModel, cache, targets) -> dict[str, np.ndarray]:
    """Gradients of ``batch_loss`` with respect to every parameter."""
    params, cfg = model.params, model.config
    fcache, feats, (hs, cs, gates), flat, probs = cache
    targets = np.asarray(targets, dtype=np.float64)
    grads = {}
    dz = _loss_grad_logits(probs, targets, cfg.alpha)
    grads["out_w"] = flat.T @ dz
    grads["out_b"] = dz.sum(axis=0)

    hidden = cfg.lstm_hidden
    b, w, n, c2 = feats.shape
    wh = params["lstm_wh"]
    dh = (dz @ params["out_w"].T).reshape(b, n, hidden)
    dc = np.zeros_like(dh)
    dgates = np.empty((b, w, n, 4 * hidden))
    for t in reversed(range(w)):
        i, f, g, o, tc = gates[t]
        do = dh * tc
        dc = dc + dh * o * (1 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * cs[t]
        dc = dc * f
        dzt = dgates[:, t]
        dzt[..., :hidden] = di * i * (1 - i)
        dzt[..., hidden : 2 * hidden] = df * f * (1 - f)
        dzt[..., 2 * hidden : 3 * hidden] = dg * (1 - g * g)
        dzt[..., 3 * hidden :] = do * o * (1 - o)
        dh = dzt @ wh.T
    flat_dg = dgates.reshape(-1, 4 * hidden)
    grads["lstm_wx"] = feats.reshape(-1, c2).T @ flat_dg
    grads["lstm_b"] = flat_dg.sum(axis=0)
    grads["lstm_wh"] = np.stack(hs[:-1], axis=1).reshape(-1, hidden).T @ flat_dg
    dfeats = dgates @ params["lstm_wx"].T

    x, h1, a2, h2, a3, mask = fcache
    dh3 = dfeats if mask is None else dfeats * mask
    da3 = dh3 * (a3 > 0)
    dh2, grads["conv2_w"], grads["conv2_b"] = _circular_conv_backward(h2, params["conv2_w"], da3)
    da2 = dh2 * (a2 > 0)
    dh1, grads["conv1_w"], grads["conv1_b"] = _circular_conv_backward(h1, params["conv1_w"], da2)
    da1 = (dh1 * (1 - h1 * h1)).reshape(-1, h1.shape[-1])
    grads["dense_w"] = x.reshape(1, -1) @ da1
    grads["dense_b"] = da1.sum(axis=0)
    return grads


def accuracy(pred, target) -> float:
    """Fraction of sites where ``pred >= 0.5`` matches the binary target."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise PredictorError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        return 1.0
    return float(np.mean((pred >= 0.5) == (target >= 0.5)))


def predict_proba(model: PredictorModel, windows, batch_size: int = 256) -> np.ndarray:
    windows = np.asarray(windows)
    out = [
        forward_batch(model, windows[s : s + batch_size])[0]
        for s in range(0, len(windows), batch_size)
    ]
    if not out:
        return np.empty((0, model.config.n_sites))
    return np.concatenate(out)


def rollout(model: PredictorModel, seed_window, horizon: int) -> TimeSpaceDiagram:
    """Recursive multi-step forecast: thresholded predictions feed the next window."""
    cfg = model.config
    seed_window = np.asarray(seed_window)
    if seed_window.shape != (cfg.window, cfg.n_sites):
        raise PredictorError(
            f"seed window must have shape ({cfg.window}, {cfg.n_sites}), got {seed_window.shape}"
        )
    if horizon < 0:
        raise PredictorError("horizon must be >= 0")
    rows = [row.astype(np.uint8) for row in seed_window]
    for _ in range(horizon):
        window = np.stack(rows[-cfg.window :])
        rows.append((forward(model, window) >= 0.5).astype(np.uint8))
    return TimeSpaceDiagram(np.stack(rows))


def rollout_report(predicted, truth) -> np.ndarray:
    """Per-row ``(row, true_count, predicted_count, accuracy)`` of a rollout against the truth."""
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise PredictorError(f"shape mismatch: {predicted.shape} vs {truth.shape}")
    rows = np.arange(len(truth))
    return np.column_stack(
        [
            rows,
            truth.sum(axis=1),
            predicted.sum(axis=1),
            (predicted == truth).mean(axis=1),
        ]
    ).astype(np.float64)


def save_checkpoint(model: PredictorModel, path) -> None:
    """Header holds the full config; tensors follow as little-endian float64 in ``PARAM_ORDER``."""
    header = {
        "config": model.config.to_dict(),
        "seed": model.config.init_seed,
        "tensors": [[name, list(model.params[name].shape)] for name in PARAM_ORDER],
        "dtype": "<f8",
    }
    payload = b"".join(
        np.ascontiguousarray(model.params[name], dtype="<f8").tobytes() for name in PARAM_ORDER
    )
    write_container(path, CHECKPOINT_MAGIC, header, payload)


def load_checkpoint(path) -> PredictorModel:
    header, payload = read_container(path, CHECKPOINT_MAGIC)
    try:
        config = PredictorConfig.from_dict(header["config"])
    except (KeyError, TypeError, PredictorError) as exc:
        raise FormatError(f"{path}: invalid predictor config in header ({exc})") from None
    shapes = config.param_shapes()
    sizes = {name: int(np.prod(shapes[name])) for name in PARAM_ORDER}
    if len(payload) != 8 * sum(sizes.values()):
        raise LengthMismatchError(
            f"{path}: payload is {len(payload)} bytes, config implies {8 * sum(sizes.values())}"
        )
    params = {}
    offset = 0
    for name in PARAM_ORDER:
        params[name] = (
            np.frombuffer(payload, dtype="<f8", count=sizes[name], offset=offset)
            .reshape(shapes[name])
            .astype(np.float64)
        )
        offset += 8 * sizes[name]
    return PredictorModel(config, params)
