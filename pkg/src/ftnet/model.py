"""Time-domain enhancement network with feedback stages.

One stage maps a noisy frame plus the previous stage's estimate to a new
estimate: a strided conv front end feeds a convolutional GRU, a strided
encoder shrinks time while widening channels, a stack of dilated gated
residual blocks works at the bottleneck, and a skip-connected transposed
decoder restores the waveform. The whole stage is applied Q times with
shared weights; the estimate and the GRU state loop back between passes.

All convolutions along the way are arranged so every stage consumes and
produces frames of exactly ``config.frame_len`` samples.
"""

from collections import OrderedDict
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Parameter, Tensor

__all__ = [
    "ModelConfig",
    "FTNetParams",
    "StageState",
    "ShapeRow",
    "StructureReport",
    "build_model",
    "initial_state",
    "srnn_forward",
    "convgru_forward",
    "glu_forward",
    "stage_forward",
    "multistage_forward",
    "trace_shapes",
    "count_parameters",
    "analyze_structure",
]


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and run settings; immutable once constructed.

    encoder_channels[0] is the front-end width (also the GRU state width);
    the remaining entries are the strided encoder widths. The decoder
    mirrors them. glu_dilations gives one dilated gated block per entry.
    """

    frame_len: int = 2048
    hop: int = 256
    kernel: int = 11
    encoder_channels: tuple = (16, 16, 32, 64, 128)
    glu_dilations: tuple = (1, 2, 4, 8, 16, 32)
    glu_bottleneck: int = 64
    stages: int = 3
    seed: int = 0
    standard_gru_update: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        c = self.encoder_channels
        if len(c) < 2 or any(int(ch) <= 0 for ch in c):
            raise ConfigError(f"encoder_channels needs >= 2 positive entries, got {c}")
        if self.kernel < 3 or self.kernel % 2 == 0:
            raise ConfigError(f"kernel must be odd and >= 3, got {self.kernel}")
        halvings = len(c) - 1
        if self.frame_len % (1 << halvings) or self.frame_len < (1 << halvings):
            raise ConfigError(
                f"frame_len {self.frame_len} is not divisible by 2^{halvings} "
                f"(one halving per strided layer)"
            )
        if not 1 <= self.hop <= self.frame_len:
            raise ConfigError(f"hop {self.hop} must lie in [1, frame_len]")
        if not self.glu_dilations or any(int(d) <= 0 for d in self.glu_dilations):
            raise ConfigError(f"glu_dilations must be positive, got {self.glu_dilations}")
        if self.glu_bottleneck <= 0:
            raise ConfigError(f"glu_bottleneck must be positive, got {self.glu_bottleneck}")
        if self.stages < 1:
            raise ConfigError(f"stages must be >= 1, got {self.stages}")

    @property
    def bottleneck_len(self):
        return self.frame_len >> (len(self.encoder_channels) - 1)

    def to_dict(self):
        return {
            "frame_len": self.frame_len,
            "hop": self.hop,
            "kernel": self.kernel,
            "encoder_channels": list(self.encoder_channels),
            "glu_dilations": list(self.glu_dilations),
            "glu_bottleneck": self.glu_bottleneck,
            "stages": self.stages,
            "seed": self.seed,
            "standard_gru_update": self.standard_gru_update,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("encoder_channels", "glu_dilations"):
            if key in d:
                v = d[key]
                if isinstance(v, (int, float)):
                    v = (v,)
                d[key] = tuple(int(x) for x in v)
        return cls(**d)

    def override(self, **changes):
        return replace(self, **changes)


class FTNetParams:
    """Ordered bag of named parameters plus the config that shaped them."""

    def __init__(self, config, params):
        self.config = config
        self._params = OrderedDict(params)

    def __getitem__(self, name):
        try:
            return self._params[name]
        except KeyError:
            raise ConfigError(f"no parameter named {name!r}") from None

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def values(self):
        return self._params.values()

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for p in self._params.values():
            p.tensor.grad = None


@dataclass
class StageState:
    """Carry-over between stages: GRU hidden map and previous estimate."""

    hidden: Tensor
    estimate: Tensor


class ShapeRow(NamedTuple):
    name: str
    in_channels: int
    in_length: int
    out_channels: int
    out_length: int


@dataclass(frozen=True)
class StructureReport:
    depth_per_stage: int
    unfolded_depth: int
    glu_receptive_field: int
    parameter_total: int
    parameters_by_layer: "OrderedDict[str, int]"
    shape_table: tuple


# ---------------------------------------------------------------------------
# construction


def _decoder_plan(config):
    """(in_channels, out_channels) per transposed layer, first to last."""
    c = config.encoder_channels
    plan = []
    for j in range(1, len(c)):
        in_ch = 2 * c[len(c) - j]
        out_ch = c[len(c) - j - 1] if j < len(c) - 1 else 1
        plan.append((in_ch, out_ch))
    return plan


def build_model(config):
    """Create all parameters with seeded fan-in-scaled uniform values.

    Weights and biases draw from U(-b, b) with b = 1/sqrt(in_ch * kernel);
    PReLU slopes start at 0.25. Draw order is fixed (table order, weight
    before bias) so one seed always yields bitwise-identical values.
    """
    rng = np.random.default_rng(config.seed)
    k = config.kernel
    c = config.encoder_channels
    params = OrderedDict()

    def draw(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    def add_conv(prefix, in_ch, out_ch, kernel, with_prelu):
        fan = in_ch * kernel
        params[f"{prefix}.weight"] = Parameter(f"{prefix}.weight", draw((out_ch, in_ch, kernel), fan))
        params[f"{prefix}.bias"] = Parameter(f"{prefix}.bias", draw((1, out_ch, 1), fan))
        if with_prelu:
            params[f"{prefix}.prelu"] = Parameter(f"{prefix}.prelu", np.full((1, out_ch, 1), 0.25))

    def add_deconv(prefix, in_ch, out_ch, kernel, with_prelu):
        fan = in_ch * kernel
        # Transposed layout: (C_in, C_out, K).
        params[f"{prefix}.weight"] = Parameter(f"{prefix}.weight", draw((in_ch, out_ch, kernel), fan))
        params[f"{prefix}.bias"] = Parameter(f"{prefix}.bias", draw((1, out_ch, 1), fan))
        if with_prelu:
            params[f"{prefix}.prelu"] = Parameter(f"{prefix}.prelu", np.full((1, out_ch, 1), 0.25))

    add_conv("conv1d_1", 2, c[0], k, with_prelu=True)
    for gate in ("update_in", "update_state", "reset_in", "reset_state", "cand_in", "cand_state"):
        add_conv(f"conv_rnn.{gate}", c[0], c[0], k, with_prelu=False)
    for i in range(1, len(c)):
        add_conv(f"conv1d_{i + 1}", c[i - 1], c[i], k, with_prelu=True)

    bn = config.glu_bottleneck
    wide = c[-1]
    for j in range(1, len(config.glu_dilations) + 1):
        add_conv(f"glu_{j}.in_conv", wide, bn, 1, with_prelu=True)
        add_conv(f"glu_{j}.main_conv", bn, bn, k, with_prelu=False)
        add_conv(f"glu_{j}.gate_conv", bn, bn, k, with_prelu=False)
        add_conv(f"glu_{j}.out_conv", bn, wide, 1, with_prelu=False)

    plan = _decoder_plan(config)
    for j, (in_ch, out_ch) in enumerate(plan, start=1):
        last = j == len(plan)
        add_deconv(f"deconv1d_{j}", in_ch, out_ch, k, with_prelu=not last)

    return FTNetParams(config, params)


def initial_state(x, config):
    """State ahead of the first pass: zero hidden, the noisy input as estimate."""
    batch = x.data.shape[0]
    hidden = Tensor(np.zeros((batch, config.encoder_channels[0], config.frame_len // 2)))
    return StageState(hidden=hidden, estimate=x)


# ---------------------------------------------------------------------------
# forward passes


def _trace(trace, name, before, after):
    if trace is not None:
        trace.append(
            ShapeRow(name, before.shape[1], before.shape[2], after.shape[1], after.shape[2])
        )


def _conv_block(params, name, x, *, stride, dilation=1, act="prelu"):
    """Named conv + activation with the length-preserving/halving pad plan."""
    weight = params[f"{name}.weight"]
    m = weight.data.shape[2] // 2
    if stride == 1:
        pads = (m * dilation, m * dilation)
    else:
        pads = (m, m - 1)
    try:
        out = T.conv1d(
            x, weight.tensor, params[f"{name}.bias"].tensor,
            stride=stride, dilation=dilation, pad_left=pads[0], pad_right=pads[1],
        )
    except ShapeError as exc:
        raise ShapeError(f"{name}: {exc}") from None
    if act == "prelu":
        out = T.prelu(out, params[f"{name}.prelu"].tensor)
    elif act == "sigmoid":
        out = T.sigmoid(out)
    elif act is not None:
        raise ConfigError(f"unknown block activation {act!r}")
    return out


def convgru_forward(params, features, hidden, standard_update=None):
    """One convolutional GRU step.

    features is the fresh front-end map for this stage, hidden the carried
    state; both are (B, C, L) with matching shapes. The default update
    blends the fresh features with the candidate, gated by z:

        z = sigmoid(Wz * features + Uz * hidden)
        r = sigmoid(Wr * features + Ur * hidden)
        n = tanh(Wn * features + Un * (r . hidden))
        out = (1 - z) . features + z . n

    With standard_update=True the first blend term uses ``hidden`` instead
    (the classic GRU interpolation).
    """
    if features.data.shape != hidden.data.shape:
        raise ShapeError(
            f"conv_rnn: features {features.data.shape} vs hidden {hidden.data.shape}"
        )
    if standard_update is None:
        standard_update = params.config.standard_gru_update

    def gate(name_in, name_state, state_input):
        a = _conv_block(params, f"conv_rnn.{name_in}", features, stride=1, act=None)
        b = _conv_block(params, f"conv_rnn.{name_state}", state_input, stride=1, act=None)
        return T.add(a, b)

    z = T.sigmoid(gate("update_in", "update_state", hidden))
    r = T.sigmoid(gate("reset_in", "reset_state", hidden))
    n = T.tanh(
        T.add(
            _conv_block(params, "conv_rnn.cand_in", features, stride=1, act=None),
            _conv_block(params, "conv_rnn.cand_state", T.mul(r, hidden), stride=1, act=None),
        )
    )
    one = Tensor(np.ones_like(z.data))
    keep = features if not standard_update else hidden
    return T.add(T.mul(T.sub(one, z), keep), T.mul(z, n))


def srnn_forward(params, x, prev_estimate, prev_hidden, trace=None):
    """Front end: stack input with the fed-back estimate, embed, update the GRU.

    Returns the new hidden map, which doubles as the feature map handed to
    the encoder and as the state for the next stage.
    """
    if x.data.shape != prev_estimate.data.shape:
        raise ShapeError(
            f"input {x.data.shape} vs fed-back estimate {prev_estimate.data.shape}"
        )
    stacked = T.concat_channels(x, prev_estimate)
    feats = _conv_block(params, "conv1d_1", stacked, stride=2)
    _trace(trace, "conv1d_1", stacked, feats)
    hidden = convgru_forward(params, feats, prev_hidden)
    _trace(trace, "conv_rnn", feats, hidden)
    return hidden


def glu_forward(params, x, index):
    """Dilated gated residual block ``glu_<index>`` (1-based).

    A 1x1 conv narrows to the bottleneck width, two parallel dilated convs
    produce a linear path and a sigmoid gate, their product is widened back
    by a 1x1 conv and added to the input.
    """
    dilations = params.config.glu_dilations
    if not 1 <= index <= len(dilations):
        raise ConfigError(f"glu index {index} outside 1..{len(dilations)}")
    d = int(dilations[index - 1])
    pre = f"glu_{index}"
    h = _conv_block(params, f"{pre}.in_conv", x, stride=1)
    main = _conv_block(params, f"{pre}.main_conv", h, stride=1, dilation=d, act=None)
    gate = _conv_block(params, f"{pre}.gate_conv", h, stride=1, dilation=d, act="sigmoid")
    widened = _conv_block(params, f"{pre}.out_conv", T.mul(main, gate), stride=1, act=None)
    return T.add(x, widened)


def stage_forward(params, x, state, trace=None):
    """One full pass: returns (estimate, new_hidden) for input frames x.

    x: (B, 1, frame_len). state: carry-over from the previous pass (use
    ``initial_state`` ahead of the first).
    """
    config = params.config
    if x.data.shape[1] != 1 or x.data.shape[2] != config.frame_len:
        raise ShapeError(
            f"expected (B, 1, {config.frame_len}) input frames, got {x.data.shape}"
        )
    hidden = srnn_forward(params, x, state.estimate, state.hidden, trace)

    c = config.encoder_channels
    skips = []
    feat = hidden
    for i in range(2, len(c) + 1):
        stride = 1 if i == 2 else 2
        out = _conv_block(params, f"conv1d_{i}", feat, stride=stride)
        _trace(trace, f"conv1d_{i}", feat, out)
        skips.append(out)
        feat = out

    for j in range(1, len(config.glu_dilations) + 1):
        out = glu_forward(params, feat, j)
        _trace(trace, f"glu_{j}", feat, out)
        feat = out

    n_dec = len(c) - 1
    for j in range(1, n_dec + 1):
        skip = skips[-j]
        joined = T.concat_channels(feat, skip)
        _trace(trace, f"skip_{j}", feat, joined)
        last = j == n_dec
        deconv = T.conv1d_transpose(
            joined,
            params[f"deconv1d_{j}.weight"].tensor,
            params[f"deconv1d_{j}.bias"].tensor,
            stride=2, pad=config.kernel // 2, output_pad=1,
        )
        if not last:
            deconv = T.prelu(deconv, params[f"deconv1d_{j}.prelu"].tensor)
        _trace(trace, f"deconv1d_{j}", joined, deconv)
        feat = deconv
    return feat, hidden


def multistage_forward(params, x, stages=None, *, collect_hidden=False):
    """Run the stage ``stages`` times with shared weights and feedback.

    Returns (final_estimate, per_stage_estimates) where the per-stage list
    holds detached copies (values only, no graph) of every pass's output,
    final included. With collect_hidden=True a third list carries detached
    hidden maps. Only the returned final estimate participates in
    backpropagation; the loss is taken on it alone.
    """
    if stages is None:
        stages = params.config.stages
    if stages < 1:
        raise ConfigError(f"stages must be >= 1, got {stages}")
    state = initial_state(x, params.config)
    estimates, hiddens = [], []
    final = None
    for _ in range(stages):
        final, hidden = stage_forward(params, x, state)
        estimates.append(final.detach())
        if collect_hidden:
            hiddens.append(hidden.detach())
        state = StageState(hidden=hidden, estimate=final)
    if collect_hidden:
        return final, estimates, hiddens
    return final, estimates


# ---------------------------------------------------------------------------
# analysis


def trace_shapes(params):
    """Layer-by-layer (name, in/out channels and lengths) for one stage."""
    config = params.config
    x = Tensor(np.zeros((1, 1, config.frame_len)))
    trace = []
    with T.no_grad():
        stage_forward(params, x, initial_state(x, config), trace=trace)
    return tuple(trace)


def _rollup_key(name):
    head, _, rest = name.partition(".")
    if rest.endswith("prelu"):
        return f"{head}.prelu"
    return head


def count_parameters(params):
    """(by_layer, total): element counts rolled up to table rows.

    Weights and biases land under the layer name (GRU gates pooled under
    conv_rnn, each gated block under its glu_<j>); slope vectors land under
    <layer>.prelu so the conv rows match the usual weight+bias bookkeeping.
    """
    by_layer = OrderedDict()
    for name, p in params.items():
        key = _rollup_key(name)
        by_layer[key] = by_layer.get(key, 0) + p.data.size
    return by_layer, sum(by_layer.values())


def analyze_structure(config):
    """Build the model and report depth, receptive field, sizes, shapes.

    depth_per_stage counts serial trainable conv layers on the input-to-
    output path (the GRU counts once; a gated block contributes its in,
    main, and out convs; the parallel gate does not add depth).
    unfolded_depth multiplies by the number of passes. The receptive field
    is that of the dilated stack at bottleneck resolution.
    """
    n_enc = len(config.encoder_channels)
    n_glu = len(config.glu_dilations)
    depth = 2 + (n_enc - 1) + 3 * n_glu + (n_enc - 1)
    rf = 1 + (config.kernel - 1) * sum(config.glu_dilations)
    params = build_model(config)
    by_layer, total = count_parameters(params)
    return StructureReport(
        depth_per_stage=depth,
        unfolded_depth=depth * config.stages,
        glu_receptive_field=rf,
        parameter_total=total,
        parameters_by_layer=by_layer,
        shape_table=trace_shapes(params),
    )
