"""Stacked spatiotemporal-LSTM video predictor.

Each layer is an ST-LSTM cell with two memories: the usual per-layer cell
memory ``C`` carried along time, and a spatiotemporal memory ``M`` that
climbs the stack within a timestep and wraps from the top layer back to the
bottom layer at the next timestep. Frames enter patchified (space-to-depth),
so a 32x32x3 frame with patch 4 is an 8x8 map with 48 channels.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from . import numeric as nm
from .errors import ConfigError, ShapeMismatch
from .numeric import Tensor
from .video import ColorSpace, Video, video_to_hsv


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 4
    hidden_channels: int = 32
    kernel_size: int = 5
    patch_size: int = 4
    input_frames: int = 10
    total_frames: int = 20
    in_channels: int = 3

    def __post_init__(self):
        if self.num_layers < 1 or self.hidden_channels < 1 or self.patch_size < 1:
            raise ConfigError("layer count, width and patch size must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        if not (1 <= self.input_frames < self.total_frames):
            raise ConfigError("need total_frames > input_frames >= 1")
        if self.in_channels != 3:
            raise ConfigError("frames carry exactly 3 channels")

    @property
    def patch_channels(self) -> int:
        return self.in_channels * self.patch_size ** 2

    @property
    def output_frames(self) -> int:
        return self.total_frames - self.input_frames

    def to_dict(self) -> dict:
        return asdict(self)


def patchify(frames: np.ndarray, patch_size: int) -> np.ndarray:
    """Space-to-depth: ``(..., H, W, C)`` -> ``(..., H/p, W/p, p*p*C)``."""
    *lead, h, w, c = frames.shape
    p = patch_size
    if h % p or w % p:
        raise ShapeMismatch(f"frame {h}x{w} not divisible by patch size {p}")
    n = len(lead)
    x = frames.reshape(*lead, h // p, p, w // p, p, c)
    x = x.transpose(*range(n), n, n + 2, n + 1, n + 3, n + 4)
    return np.ascontiguousarray(x.reshape(*lead, h // p, w // p, p * p * c))


def unpatchify(x: np.ndarray, patch_size: int, channels: int = 3) -> np.ndarray:
    *lead, hp, wp, pc = x.shape
    p = patch_size
    if pc != p * p * channels:
        raise ShapeMismatch(f"{pc} channels do not match patch {p} with {channels} colour channels")
    n = len(lead)
    y = x.reshape(*lead, hp, wp, p, p, channels)
    y = y.transpose(*range(n), n, n + 2, n + 1, n + 3, n + 4)
    return np.ascontiguousarray(y.reshape(*lead, hp * p, wp * p, channels))


@dataclass
class STCellState:
    hidden: Tensor
    cell: Tensor
    memory: Tensor

    def __post_init__(self):
        if not (self.hidden.shape == self.cell.shape == self.memory.shape):
            raise ShapeMismatch("hidden, cell and memory must share a shape")


def st_cell_forward(params: dict, x: Tensor, hidden: Tensor, cell: Tensor, memory: Tensor):
    """One ST-LSTM step; returns ``(H, C, M)``.

    ``params`` needs ``conv_x.weight``/``conv_x.bias`` (7h gates from the input),
    ``conv_h.weight`` (4h from H), ``conv_m.weight`` (3h from M),
    ``conv_o.weight`` (h from [C, M]) and ``conv_last.weight``/``conv_last.bias``
    (1x1 fusion of [C, M]).
    """
    nh = cell.shape[-1]
    if hidden.shape != cell.shape or memory.shape != cell.shape:
        raise ShapeMismatch(f"state shapes {hidden.shape}, {cell.shape}, {memory.shape} differ")
    gx = nm.conv2d(x, params["conv_x.weight"], params["conv_x.bias"])
    gh = nm.conv2d(hidden, params["conv_h.weight"])
    gm = nm.conv2d(memory, params["conv_m.weight"])
    if gx.shape[-1] != 7 * nh:
        raise ShapeMismatch(f"conv_x yields {gx.shape[-1]} channels, expected {7 * nh}")
    i_x, f_x, g_x, i_xm, f_xm, g_xm, o_x = nm.split_channels(gx, 7)
    i_h, f_h, g_h, o_h = nm.split_channels(gh, 4)
    i_m, f_m, g_m = nm.split_channels(gm, 3)

    i = nm.sigmoid(i_x + i_h)
    f = nm.sigmoid(f_x + f_h)
    g = nm.tanh(g_x + g_h)
    c_new = f * cell + i * g

    i2 = nm.sigmoid(i_xm + i_m)
    f2 = nm.sigmoid(f_xm + f_m)
    g2 = nm.tanh(g_xm + g_m)
    m_new = f2 * memory + i2 * g2

    mem = nm.concat([c_new, m_new])
    o = nm.sigmoid(o_x + o_h + nm.conv2d(mem, params["conv_o.weight"]))
    h_new = o * nm.tanh(nm.conv2d(mem, params["conv_last.weight"], params["conv_last.bias"]))
    return h_new, c_new, m_new


def _cell_shapes(cin: int, nh: int, k: int) -> list[tuple[str, tuple]]:
    # kernels are (kh, kw, in, out)
    return [
        ("conv_x.weight", (k, k, cin, 7 * nh)),
        ("conv_x.bias", (7 * nh,)),
        ("conv_h.weight", (k, k, nh, 4 * nh)),
        ("conv_m.weight", (k, k, nh, 3 * nh)),
        ("conv_o.weight", (k, k, 2 * nh, nh)),
        ("conv_last.weight", (1, 1, 2 * nh, nh)),
        ("conv_last.bias", (nh,)),
    ]


class PredictorModel:
    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        nh, k = config.hidden_channels, config.kernel_size
        shapes = []
        for layer in range(config.num_layers):
            cin = config.patch_channels if layer == 0 else nh
            shapes += [(f"cells.{layer}.{name}", shape) for name, shape in _cell_shapes(cin, nh, k)]
        shapes += [("head.weight", (1, 1, nh, config.patch_channels)), ("head.bias", (config.patch_channels,))]

        self.params: OrderedDict[str, Tensor] = OrderedDict()
        for name, shape in shapes:
            if name.endswith(".bias"):
                value = np.zeros(shape)
            else:
                bound = math.sqrt(1.0 / int(np.prod(shape[:3])))
                value = rng.uniform(-bound, bound, size=shape)
            self.params[name] = Tensor(value, requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def cell_params(self, layer: int) -> dict:
        prefix = f"cells.{layer}."
        return {n[len(prefix):]: t for n, t in self.params.items() if n.startswith(prefix)}

    def forward(self, frames: np.ndarray, mode: str = "train") -> list[Tensor]:
        """Run the recurrence over patchified frames ``(B, T, h, w, Cp)``.

        In ``"train"`` mode ``T`` is ``total_frames`` (the tail is only used as
        loss target by the caller); in ``"infer"`` mode ``T`` is
        ``input_frames``. Either way conditioning frames are read from
        ``frames`` and later inputs are the model's own predictions. Returns the
        ``output_frames`` predictions, each ``(B, h, w, Cp)`` in (0, 1).
        """
        cfg = self.config
        expected_t = {"train": cfg.total_frames, "infer": cfg.input_frames}.get(mode)
        if expected_t is None:
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
        if frames.ndim != 5 or frames.shape[1] != expected_t or frames.shape[4] != cfg.patch_channels:
            raise ShapeMismatch(
                f"{mode} mode expects (B, {expected_t}, h, w, {cfg.patch_channels}), got {frames.shape}")
        bsz, _, hp, wp, _ = frames.shape
        zeros = np.zeros((bsz, hp, wp, cfg.hidden_channels))
        hidden = [Tensor(zeros) for _ in range(cfg.num_layers)]
        cells = [Tensor(zeros) for _ in range(cfg.num_layers)]
        memory = Tensor(zeros)
        layer_params = [self.cell_params(layer) for layer in range(cfg.num_layers)]
        head_w, head_b = self.params["head.weight"], self.params["head.bias"]

        preds: list[Tensor] = []
        for t in range(cfg.total_frames - 1):
            x = Tensor(frames[:, t]) if t < cfg.input_frames else preds[-1]
            for layer in range(cfg.num_layers):
                inp = x if layer == 0 else hidden[layer - 1]
                hidden[layer], cells[layer], memory = st_cell_forward(
                    layer_params[layer], inp, hidden[layer], cells[layer], memory)
            if t >= cfg.input_frames - 1:
                preds.append(nm.sigmoid(nm.conv2d(hidden[-1], head_w, head_b)))
        return preds

    def sequence_loss(self, frames: np.ndarray) -> Tensor:
        preds = self.forward(frames, "train")
        target = frames[:, self.config.input_frames:]
        total = None
        for k, p in enumerate(preds):
            term = nm.mse_loss(p, Tensor(target[:, k]))
            total = term if total is None else total + term
        return total * (1.0 / len(preds))


def video_batch(videos, patch_size: int) -> np.ndarray:
    """Stack HSV videos into a patchified ``(B, T, h, w, Cp)`` array."""
    return patchify(np.stack([video_to_hsv(v).data for v in videos]), patch_size)


def forward_sequence(model: PredictorModel, video: Video, mode: str = "infer") -> Video:
    """Predict the frames following ``video``'s conditioning frames (HSV out)."""
    batch = video_batch([video], model.config.patch_size)
    with nm.no_grad():
        preds = model.forward(batch, mode)
    out = np.stack([p.data[0] for p in preds])
    frames = unpatchify(out, model.config.patch_size)
    return Video(frames, ColorSpace.HSV, video.frame_interval_minutes)


def repeat_last_baseline(video: Video, input_frames: int, output_frames: int) -> Video:
    """Naive forecaster that holds the last conditioning frame."""
    last = video.data[input_frames - 1]
    return video.with_data(np.repeat(last[None], output_frames, axis=0))
