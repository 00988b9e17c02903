"""Shared attention CNN encoder with a classification head and a reconstruction decoder."""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .attention import (
    ChannelAttentionParams,
    FrequencyAttentionParams,
    channel_attention,
    frequency_attention,
    he_uniform,
    zeros,
)
from .autograd import BatchNormState, Tensor
from .errors import ConfigError, DimensionError, UsageError

DECODER_CHANNELS = (64, 32, 16, 8)


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 2
    block_channels: tuple = (8, 16, 32, 64)
    kernel: int = 3
    num_classes: int = 27
    input_hw: tuple = (94, 64)
    enable_channel_attention: bool = True
    enable_frequency_attention: bool = True
    enable_reconstruction: bool = True
    dropout_p: float = 0.5
    reduction: int = 4
    omega: float = 1.0
    train_omega: bool = False
    decoder_kernel: int = 6
    # "text": conv -> freq attention -> ReLU -> BN;  "equation": conv -> ReLU -> BN -> freq attention
    block_order: str = "text"
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "block_channels", tuple(int(c) for c in self.block_channels))
        object.__setattr__(self, "input_hw", tuple(int(v) for v in self.input_hw))
        ch = self.block_channels
        if len(ch) != 4 or any(b <= a for a, b in zip(ch, ch[1:])):
            raise ConfigError(f"block_channels must be 4 strictly increasing ints, got {ch}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        t, f = self.input_hw
        if t < 16 or f < 16:
            raise ConfigError(f"input (t, f) must both be >= 16 for four 2x downsamples, got {self.input_hw}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.block_order not in ("text", "equation"):
            raise ConfigError(f"block_order must be 'text' or 'equation', got {self.block_order!r}")
        if self.kernel % 2 != 1:
            raise ConfigError("kernel must be odd so padding kernel//2 preserves size")
        if self.decoder_kernel < 2 or self.decoder_kernel % 2:
            raise ConfigError("decoder_kernel must be even so stride-2 stages double exactly")

    @property
    def feature_dim(self):
        return self.block_channels[-1]

    def block_input_sizes(self):
        """Spatial size entering each block."""
        t, f = self.input_hw
        sizes = []
        for _ in self.block_channels:
            sizes.append((t, f))
            t, f = t // 2, f // 2
        return sizes

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class BlockParams:
    conv_weight: Tensor
    conv_bias: Tensor
    bn_gamma: Tensor
    bn_beta: Tensor
    bn_state: BatchNormState
    channel_att: ChannelAttentionParams = None
    freq_att: FrequencyAttentionParams = None

    def tensors(self):
        out = {}
        if self.channel_att is not None:
            out.update({f"ca.{k}": v for k, v in self.channel_att.tensors().items()})
        out["conv.weight"] = self.conv_weight
        out["conv.bias"] = self.conv_bias
        if self.freq_att is not None:
            out.update({f"fa.{k}": v for k, v in self.freq_att.tensors().items()})
        out["bn.gamma"] = self.bn_gamma
        out["bn.beta"] = self.bn_beta
        return out


def conv_block(x, block, config):
    """Channel attention -> conv -> (freq attention, ReLU, BN in configured order) -> 2x2 mean pool."""
    if x.shape[1] != block.conv_weight.shape[1]:
        raise DimensionError(f"block expects {block.conv_weight.shape[1]} channels, got {x.shape[1]}")
    if block.channel_att is not None:
        x = channel_attention(x, block.channel_att)
    x = ag.conv2d(x, block.conv_weight, block.conv_bias, stride=1, padding=config.kernel // 2)
    if config.block_order == "text":
        if block.freq_att is not None:
            x = frequency_attention(x, block.freq_att)
        x = ag.batch_norm2d(ag.relu(x), block.bn_gamma, block.bn_beta, block.bn_state)
    else:
        x = ag.batch_norm2d(ag.relu(x), block.bn_gamma, block.bn_beta, block.bn_state)
        if block.freq_att is not None:
            x = frequency_attention(x, block.freq_att)
    return ag.avg_pool2d(x, 2)


@dataclass
class DecoderStage:
    weight: Tensor  # [Cin, Cout, k, k]
    bias: Tensor


class MTBCACNN:
    """Encoder + classifier + optional decoder.

    Parameters are created from ``config`` and ``seed`` alone; ``training``
    toggles batch-statistics BN and dropout.
    """

    def __init__(self, config=ModelConfig(), seed=0, dtype=None):
        self.config = config
        self.dtype = np.dtype(dtype or ag.get_default_dtype()).type
        self.training = True
        self.dropout_rng = np.random.default_rng(seed + 1)
        rng = np.random.default_rng(seed)
        dt = self.dtype
        k = config.kernel

        self.blocks = []
        cin = config.in_channels
        for cout, (_, f) in zip(config.block_channels, config.block_input_sizes()):
            ca = None
            if config.enable_channel_attention:
                ca = ChannelAttentionParams.create(cin, rng, config.reduction, dt)
            fa = None
            if config.enable_frequency_attention:
                fa = FrequencyAttentionParams.create(f, rng, dt, config.omega, config.train_omega)
            self.blocks.append(
                BlockParams(
                    conv_weight=he_uniform(rng, (cout, cin, k, k), cin * k * k, dt),
                    conv_bias=zeros((cout,), dt),
                    bn_gamma=Tensor(np.ones(cout, dtype=dt), requires_grad=True),
                    bn_beta=zeros((cout,), dt),
                    bn_state=BatchNormState.create(cout, dt, config.bn_momentum, config.bn_eps),
                    channel_att=ca,
                    freq_att=fa,
                )
            )
            cin = cout

        d = config.feature_dim
        self.classifier_weight = he_uniform(rng, (config.num_classes, d), d, dt)
        self.classifier_bias = zeros((config.num_classes,), dt)

        self.decoder = []
        if config.enable_reconstruction:
            kd = config.decoder_kernel
            chans = (d,) + DECODER_CHANNELS[1:] + (config.in_channels,)
            for a, b in zip(chans, chans[1:]):
                self.decoder.append(DecoderStage(he_uniform(rng, (a, b, kd, kd), a * kd * kd // 4, dt), zeros((b,), dt)))
        self._shapes = {name: t.shape for name, t in self.parameters().items()}

    # modes

    def train(self):
        self.training = True
        for b in self.blocks:
            b.bn_state.training = True
        return self

    def eval(self):
        self.training = False
        for b in self.blocks:
            b.bn_state.training = False
        return self

    # parameters

    def parameters(self):
        """Ordered name -> Tensor of every learnable."""
        out = {}
        for i, b in enumerate(self.blocks):
            out.update({f"block{i}.{k}": v for k, v in b.tensors().items()})
        out["classifier.weight"] = self.classifier_weight
        out["classifier.bias"] = self.classifier_bias
        for j, st in enumerate(self.decoder):
            out[f"decoder{j}.weight"] = st.weight
            out[f"decoder{j}.bias"] = st.bias
        return out

    def set_parameter(self, name, tensor):
        """Rebind the learnable called ``name`` (as listed by ``parameters()``) to ``tensor``."""
        if name not in self._shapes:
            raise KeyError(f"no parameter named {name!r}")
        if tensor.shape != self._shapes[name]:
            raise DimensionError(f"{name}: shape {tensor.shape} != expected {self._shapes[name]}")
        head, _, rest = name.partition(".")
        if head.startswith("block"):
            block = self.blocks[int(head[5:])]
            group, _, leaf = rest.partition(".")
            if group == "ca":
                setattr(block.channel_att, leaf, tensor)
            elif group == "fa":
                setattr(block.freq_att, leaf, tensor)
            else:
                setattr(block, f"{group}_{leaf}", tensor)
        elif head == "classifier":
            setattr(self, f"classifier_{rest}", tensor)
        else:
            setattr(self.decoder[int(head[7:])], rest, tensor)

    def buffers(self):
        """BatchNorm running statistics and their seeded flag (not learnable)."""
        out = {}
        for i, b in enumerate(self.blocks):
            out[f"block{i}.bn.running_mean"] = b.bn_state.running_mean
            out[f"block{i}.bn.running_var"] = b.bn_state.running_var
            out[f"block{i}.bn.initialized"] = np.array(float(b.bn_state.initialized), dtype=self.dtype)
        return out

    def state_dict(self):
        out = {k: v.data for k, v in self.parameters().items()}
        out.update(self.buffers())
        return out

    def load_state_dict(self, state):
        params = self.parameters()
        buffers = self.buffers()
        expected = set(params) | set(buffers)
        missing = expected - set(state)
        unexpected = set(state) - expected
        if missing or unexpected:
            raise KeyError(f"state mismatch; missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, t in params.items():
            arr = np.asarray(state[name])
            if arr.shape != t.shape:
                raise DimensionError(f"{name}: shape {arr.shape} != expected {t.shape}")
            t.data = arr.astype(self.dtype)
        for i, b in enumerate(self.blocks):
            b.bn_state.running_mean = np.asarray(state[f"block{i}.bn.running_mean"]).astype(self.dtype)
            b.bn_state.running_var = np.asarray(state[f"block{i}.bn.running_var"]).astype(self.dtype)
            b.bn_state.initialized = bool(np.asarray(state[f"block{i}.bn.initialized"]) > 0)

    # forward pieces

    def _check_input(self, x):
        want = (self.config.in_channels,) + self.config.input_hw
        if x.ndim != 4 or x.shape[1:] != want:
            raise DimensionError(f"expected input [B,{want[0]},{want[1]},{want[2]}], got {x.shape}")

    def encode(self, x):
        """[B, 2, t, f] -> [B, 64] pooled feature vector."""
        self._check_input(x)
        for b in self.blocks:
            x = conv_block(x, b, self.config)
        v = ag.adaptive_avg_pool2d(x, (1, 1))
        return v.reshape(x.shape[0], self.config.feature_dim)

    def classify(self, v):
        if self.training:
            v = ag.dropout(v, self.config.dropout_p, self.dropout_rng, training=True)
        return ag.linear(v, self.classifier_weight, self.classifier_bias)

    def reconstruct(self, v):
        if not self.config.enable_reconstruction:
            raise UsageError("reconstruction head is disabled in this configuration")
        x = v.reshape(v.shape[0], self.config.feature_dim, 1, 1)
        pad = (self.config.decoder_kernel - 2) // 2
        for j, st in enumerate(self.decoder):
            x = ag.conv_transpose2d(x, st.weight, st.bias, stride=2, padding=pad)
            if j < len(self.decoder) - 1:
                x = ag.relu(x)
        return ag.resize_bilinear(x, self.config.input_hw)

    def forward(self, x):
        """Return ``(logits, reconstruction)``; reconstruction is None when disabled."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        v = self.encode(x)
        logits = self.classify(v)
        recon = self.reconstruct(v) if self.config.enable_reconstruction else None
        return logits, recon

    __call__ = forward

    def predict_proba(self, x, batch_size=64):
        """Eval-mode softmax probabilities for a numpy batch, without building a graph."""
        was_training = self.training
        self.eval()
        out = []
        try:
            with ag.no_grad():
                for i in range(0, len(x), batch_size):
                    xb = Tensor(np.asarray(x[i : i + batch_size], dtype=self.dtype))
                    out.append(ag.softmax(self.classify(self.encode(xb)), axis=-1).data)
        finally:
            if was_training:
                self.train()
        return np.concatenate(out) if out else np.zeros((0, self.config.num_classes))


def uncertainty_param_count(config):
    """Two log-variance scalars when the joint objective is active."""
    return 2 if config.enable_reconstruction else 0


def param_shapes(config):
    return {k: v.shape for k, v in MTBCACNN(config).parameters().items()}


def count_params(config):
    """Scalar learnables: network weights, BN affine terms and uncertainty scalars."""
    return sum(int(np.prod(s)) for s in param_shapes(config).values()) + uncertainty_param_count(config)
