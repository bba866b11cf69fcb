"""Numerical core: LSTM forward pass, exact BPTT gradients, ADAM, checkpoints.

Everything is double precision numpy. The default cell variant follows
the unconventional formulation this package standardises on: the input
branch shares its weight matrices between a sigmoid and a tanh factor
(with two separate biases), and the cell update is c_t = f_t * c_{t-1}
+ i_t with no separate candidate gate. A conventional LSTM cell with
its own candidate weights is available as ``cell_variant="standard"``.
"""
from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, asdict

import numpy as np

from .errors import (
    CheckpointCorruptError,
    CheckpointVersionError,
    ConfigError,
    NumericalError,
)
from .series import ScalerState, WindowSample

FAITHFUL = "faithful"
STANDARD = "standard"

DEFAULT_GRAD_CLIP = 5.0


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters."""

    input_features: int
    num_layers: int = 3
    hidden_units: int = 400
    lags: int = 24
    horizon: int = 24
    dropout_rate: float = 0.5
    cell_variant: str = FAITHFUL

    def __post_init__(self):
        for name in ("input_features", "num_layers", "hidden_units",
                     "lags", "horizon"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if self.cell_variant not in (FAITHFUL, STANDARD):
            raise ConfigError(f"unknown cell_variant {self.cell_variant!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class LstmLayerParams:
    """Weights of one LSTM layer.

    The input branch's W_xi/W_hi serve both its sigmoid factor (bias
    b_i1) and its tanh factor (bias b_i2). The standard variant adds
    separate candidate weights W_xg/W_hg, with b_i2 acting as the
    candidate bias.
    """

    FIELDS = ("W_xi", "W_hi", "b_i1", "b_i2",
              "W_xf", "W_hf", "b_f",
              "W_xo", "W_ho", "b_o",
              "W_xg", "W_hg")

    def __init__(self, **tensors):
        for name in self.FIELDS:
            setattr(self, name, tensors.get(name))

    def tensors(self):
        for name in self.FIELDS:
            arr = getattr(self, name)
            if arr is not None:
                yield name, arr


class ModelParams:
    """The full trainable parameter set."""

    def __init__(self, layers, W_out, b_out):
        self.layers = list(layers)
        self.W_out = W_out
        self.b_out = b_out

    def tensors(self):
        """(name, array) pairs in a fixed, stable order."""
        for l, layer in enumerate(self.layers):
            for name, arr in layer.tensors():
                yield f"layer{l}.{name}", arr
        yield "output.W", self.W_out
        yield "output.b", self.b_out

    def tensor_dict(self) -> dict:
        return dict(self.tensors())

    def parameter_count(self) -> int:
        return sum(arr.size for _, arr in self.tensors())

    def copy(self) -> "ModelParams":
        layers = [LstmLayerParams(**{n: a.copy() for n, a in layer.tensors()})
                  for layer in self.layers]
        return ModelParams(layers, self.W_out.copy(), self.b_out.copy())

    def set_tensor(self, name: str, value: np.ndarray) -> None:
        if name == "output.W":
            self.W_out = value
        elif name == "output.b":
            self.b_out = value
        else:
            prefix, attr = name.split(".")
            setattr(self.layers[int(prefix[len("layer"):])], attr, value)


def init_model(config: ModelConfig, seed: int) -> ModelParams:
    """Seeded initialisation: uniform weights in ±1/sqrt(hidden), zero biases."""
    rng = np.random.default_rng(seed)
    h = config.hidden_units
    bound = 1.0 / np.sqrt(h)

    def weight(rows, cols):
        return rng.uniform(-bound, bound, size=(rows, cols))

    layers = []
    for l in range(config.num_layers):
        fin = config.input_features if l == 0 else h
        tensors = {
            "W_xi": weight(h, fin), "W_hi": weight(h, h),
            "b_i1": np.zeros(h), "b_i2": np.zeros(h),
            "W_xf": weight(h, fin), "W_hf": weight(h, h),
            "b_f": np.zeros(h),
            "W_xo": weight(h, fin), "W_ho": weight(h, h),
            "b_o": np.zeros(h),
        }
        if config.cell_variant == STANDARD:
            tensors["W_xg"] = weight(h, fin)
            tensors["W_hg"] = weight(h, h)
        layers.append(LstmLayerParams(**tensors))
    W_out = rng.uniform(-bound, bound, size=(config.horizon, h))
    b_out = np.zeros(config.horizon)
    return ModelParams(layers, W_out, b_out)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_cell_forward(x_t, state, params: LstmLayerParams,
                      variant: str = FAITHFUL):
    """One cell step. ``state`` is an (h, c) pair; returns (h_t, c_t).

    Accepts single vectors or (batch, dim) arrays.
    """
    h_prev, c_prev = state
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    h_prev = np.atleast_2d(np.asarray(h_prev, dtype=np.float64))
    c_prev = np.atleast_2d(np.asarray(c_prev, dtype=np.float64))
    if not (np.all(np.isfinite(x_t)) and np.all(np.isfinite(h_prev))
            and np.all(np.isfinite(c_prev))):
        raise NumericalError("non-finite input to LSTM cell")

    pre_i = x_t @ params.W_xi.T + h_prev @ params.W_hi.T
    f = _sigmoid(x_t @ params.W_xf.T + h_prev @ params.W_hf.T + params.b_f)
    o = _sigmoid(x_t @ params.W_xo.T + h_prev @ params.W_ho.T + params.b_o)
    if variant == FAITHFUL:
        i = _sigmoid(pre_i + params.b_i1) * np.tanh(pre_i + params.b_i2)
        c = f * c_prev + i
    else:
        g = np.tanh(x_t @ params.W_xg.T + h_prev @ params.W_hg.T + params.b_i2)
        i = _sigmoid(pre_i + params.b_i1)
        c = f * c_prev + i * g
    h = o * np.tanh(c)
    if x_t.shape[0] == 1 and np.asarray(state[0]).ndim == 1:
        return h[0], c[0]
    return h, c


def _dropout_masks(config: ModelConfig, batch: int, rng):
    """Inverted-dropout masks, one per layer, shared across time steps."""
    if rng is None or config.dropout_rate == 0.0:
        return None
    keep = 1.0 - config.dropout_rate
    return [
        (rng.random((batch, config.hidden_units)) < keep).astype(np.float64)
        / keep
        for _ in range(config.num_layers)
    ]


def _forward(params: ModelParams, config: ModelConfig, X, masks):
    """Full forward pass. Returns (predictions, caches) for BPTT."""
    B, T, _ = X.shape
    H = config.hidden_units
    variant = config.cell_variant
    layer_caches = []
    seq = X
    for l, lp in enumerate(params.layers):
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        steps = []
        out = np.empty((B, T, H))
        for t in range(T):
            x_t = seq[:, t, :]
            pre_i = x_t @ lp.W_xi.T + h @ lp.W_hi.T
            f = _sigmoid(x_t @ lp.W_xf.T + h @ lp.W_hf.T + lp.b_f)
            o = _sigmoid(x_t @ lp.W_xo.T + h @ lp.W_ho.T + lp.b_o)
            sa = _sigmoid(pre_i + lp.b_i1)
            if variant == FAITHFUL:
                tb = np.tanh(pre_i + lp.b_i2)
                g = None
                c_new = f * c + sa * tb
            else:
                tb = None
                g = np.tanh(x_t @ lp.W_xg.T + h @ lp.W_hg.T + lp.b_i2)
                c_new = f * c + sa * g
            tanh_c = np.tanh(c_new)
            h_new = o * tanh_c
            steps.append({"x": x_t, "h_prev": h, "c_prev": c,
                          "sa": sa, "tb": tb, "g": g, "f": f, "o": o,
                          "tanh_c": tanh_c})
            h, c = h_new, c_new
            out[:, t, :] = h
        if not np.all(np.isfinite(out)):
            raise NumericalError(f"non-finite activations in layer {l}")
        mask = masks[l] if masks is not None else None
        dropped = out * mask[:, None, :] if mask is not None else out
        layer_caches.append({"steps": steps, "out_dropped": dropped,
                             "mask": mask})
        seq = dropped
    y = seq[:, -1, :] @ params.W_out.T + params.b_out
    return y, layer_caches


def model_forward(params: ModelParams, config: ModelConfig, sample,
                  mode: str = "infer", seed: int | None = None):
    """Forecast 24 scaled values from one sample or a (B, T, F) batch.

    Train mode applies seeded inverted dropout; inference is
    deterministic and needs no rescaling.
    """
    single = isinstance(sample, WindowSample)
    X = sample.inputs[None, :, :] if single else np.asarray(sample, np.float64)
    if X.ndim != 3 or X.shape[1] != config.lags or X.shape[2] != config.input_features:
        raise ConfigError(
            f"sample shape {X.shape} does not match (*, {config.lags}, "
            f"{config.input_features})")
    rng = np.random.default_rng(seed) if mode == "train" else None
    masks = _dropout_masks(config, X.shape[0], rng)
    y, _ = _forward(params, config, X, masks)
    return y[0] if single else y


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ConfigError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff))


def batch_loss(params: ModelParams, config: ModelConfig, X, Y,
               seed: int | None = None) -> float:
    """Mean MSE over a batch, with the same dropout draw as backward()."""
    rng = np.random.default_rng(seed) if seed is not None else None
    masks = _dropout_masks(config, np.asarray(X).shape[0], rng)
    y, _ = _forward(params, config, np.asarray(X, np.float64), masks)
    return mse_loss(y, Y)


def backward(params: ModelParams, config: ModelConfig, X, Y,
             seed: int | None = None):
    """Exact gradients of the mean batch MSE via BPTT.

    Returns (grads, loss) where grads maps tensor names to arrays of the
    same shape. Gradients of frozen tensors are still computed; masking
    is the optimizer's job. ``seed`` fixes the dropout draw (None means
    no dropout, i.e. inference-mode loss).
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 3 or X.shape[0] == 0:
        raise ConfigError("batch must be a non-empty (B, T, F) array")
    B, T, _ = X.shape
    rng = np.random.default_rng(seed) if seed is not None else None
    masks = _dropout_masks(config, B, rng)
    y, caches = _forward(params, config, X, masks)
    loss = mse_loss(y, Y)

    grads = {name: np.zeros_like(arr) for name, arr in params.tensors()}
    dy = 2.0 * (y - Y) / y.size

    top = caches[-1]["out_dropped"]
    grads["output.W"] += dy.T @ top[:, -1, :]
    grads["output.b"] += dy.sum(axis=0)

    # Gradient w.r.t. each layer's dropped output sequence, top to bottom.
    d_out = np.zeros((B, T, config.hidden_units))
    d_out[:, -1, :] = dy @ params.W_out

    variant = config.cell_variant
    for l in range(config.num_layers - 1, -1, -1):
        lp = params.layers[l]
        cache = caches[l]
        mask = cache["mask"]
        d_raw = d_out * mask[:, None, :] if mask is not None else d_out

        fin = X.shape[2] if l == 0 else config.hidden_units
        dx_seq = np.zeros((B, T, fin))
        dh_next = np.zeros((B, config.hidden_units))
        dc_next = np.zeros((B, config.hidden_units))
        g = {name: grads[f"layer{l}.{name}"] for name, _ in lp.tensors()}

        for t in range(T - 1, -1, -1):
            st = cache["steps"][t]
            dh = d_raw[:, t, :] + dh_next
            tanh_c = st["tanh_c"]
            do = dh * tanh_c
            dc = dc_next + dh * st["o"] * (1.0 - tanh_c * tanh_c)
            df = dc * st["c_prev"]
            dc_next = dc * st["f"]

            sa, f_, o_ = st["sa"], st["f"], st["o"]
            if variant == FAITHFUL:
                tb = st["tb"]
                da = dc * tb * sa * (1.0 - sa)
                db = dc * sa * (1.0 - tb * tb)
                dpre_i = da + db
            else:
                gt = st["g"]
                da = dc * gt * sa * (1.0 - sa)
                dgpre = dc * sa * (1.0 - gt * gt)
                dpre_i = da
            dpre_f = df * f_ * (1.0 - f_)
            dpre_o = do * o_ * (1.0 - o_)

            x_t, h_prev = st["x"], st["h_prev"]
            g["W_xi"] += dpre_i.T @ x_t
            g["W_hi"] += dpre_i.T @ h_prev
            g["b_i1"] += da.sum(axis=0)
            g["W_xf"] += dpre_f.T @ x_t
            g["W_hf"] += dpre_f.T @ h_prev
            g["b_f"] += dpre_f.sum(axis=0)
            g["W_xo"] += dpre_o.T @ x_t
            g["W_ho"] += dpre_o.T @ h_prev
            g["b_o"] += dpre_o.sum(axis=0)

            dx = dpre_i @ lp.W_xi + dpre_f @ lp.W_xf + dpre_o @ lp.W_xo
            dh_prev = dpre_i @ lp.W_hi + dpre_f @ lp.W_hf + dpre_o @ lp.W_ho
            if variant == FAITHFUL:
                g["b_i2"] += db.sum(axis=0)
            else:
                g["b_i2"] += dgpre.sum(axis=0)
                g["W_xg"] += dgpre.T @ x_t
                g["W_hg"] += dgpre.T @ h_prev
                dx += dgpre @ lp.W_xg
                dh_prev += dgpre @ lp.W_hg

            dx_seq[:, t, :] = dx
            dh_next = dh_prev

        if not all(np.all(np.isfinite(arr)) for arr in g.values()):
            raise NumericalError(f"non-finite gradient in layer {l}")
        d_out = dx_seq  # becomes gradient w.r.t. the lower layer's output

    return grads, loss


def clip_gradients(grads: dict, max_norm: float = DEFAULT_GRAD_CLIP) -> float:
    """Scale gradients in place to a global norm cap; returns the raw norm."""
    total = np.sqrt(sum(float(np.sum(a * a)) for a in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for arr in grads.values():
            arr *= scale
    return total


# ---------------------------------------------------------------------------
# ADAM


@dataclass
class OptimizerState:
    """ADAM moment accumulators plus a per-tensor freeze mask."""

    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    frozen: frozenset = frozenset()


def init_optimizer(params: ModelParams, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8,
                   frozen=()) -> OptimizerState:
    names = {name for name, _ in params.tensors()}
    unknown = set(frozen) - names
    if unknown:
        raise ConfigError(f"freeze mask names unknown tensors: {sorted(unknown)}")
    return OptimizerState(
        m={name: np.zeros_like(arr) for name, arr in params.tensors()},
        v={name: np.zeros_like(arr) for name, arr in params.tensors()},
        beta1=beta1, beta2=beta2, eps=eps, frozen=frozenset(frozen),
    )


def adam_step(params: ModelParams, grads: dict, state: OptimizerState,
              learning_rate: float):
    """One bias-corrected ADAM update; frozen tensors stay bitwise intact.

    Mutates params and state under the caller's exclusive access and
    returns them for convenience.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, arr in params.tensors():
        if name in state.frozen:
            continue
        gr = grads[name]
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * gr
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * gr * gr
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        arr -= learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# Checkpoints

_MAGIC = b"SOLNETM\x00"
_FORMAT_VERSION = 1


def save_model(params: ModelParams, config: ModelConfig,
               scaler: ScalerState, path) -> None:
    """Self-sufficient binary checkpoint: config, scaler and parameters.

    Layout: magic, version (u32 LE), header length (u64 LE), JSON header
    (config, scaler, tensor manifest), float64 LE payload, trailing
    SHA-256 of everything before it.
    """
    manifest = [[name, list(arr.shape)] for name, arr in params.tensors()]
    header = json.dumps({
        "config": config.to_dict(),
        "scaler": scaler.to_dict(),
        "tensors": manifest,
    }).encode()

    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(_FORMAT_VERSION.to_bytes(4, "little"))
    buf.write(len(header).to_bytes(8, "little"))
    buf.write(header)
    for _, arr in params.tensors():
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    payload = buf.getvalue()
    digest = hashlib.sha256(payload).digest()
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(digest)


def load_model(path):
    """Read a checkpoint back; returns (params, config, scaler)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(_MAGIC) + 12 + 32:
        raise CheckpointCorruptError("checkpoint file is truncated")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointCorruptError("checkpoint checksum mismatch")
    if body[:len(_MAGIC)] != _MAGIC:
        raise CheckpointCorruptError("not a model checkpoint (bad magic)")
    pos = len(_MAGIC)
    version = int.from_bytes(body[pos:pos + 4], "little")
    pos += 4
    if version > _FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {version} is newer than supported "
            f"version {_FORMAT_VERSION}")
    header_len = int.from_bytes(body[pos:pos + 8], "little")
    pos += 8
    try:
        header = json.loads(body[pos:pos + header_len])
    except ValueError as exc:
        raise CheckpointCorruptError(f"unreadable header: {exc}") from exc
    pos += header_len

    config = ModelConfig.from_dict(header["config"])
    scaler = ScalerState.from_dict(header["scaler"])
    params = init_model(config, seed=0)
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if pos + nbytes > len(body):
            raise CheckpointCorruptError("checkpoint payload is truncated")
        arr = np.frombuffer(body[pos:pos + nbytes], dtype="<f8").reshape(shape)
        params.set_tensor(name, arr.astype(np.float64))
        pos += nbytes
    if pos != len(body):
        raise CheckpointCorruptError("trailing bytes after parameter payload")
    return params, config, scaler
