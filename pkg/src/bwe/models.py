"""U-Net and ResNet waveform-to-waveform enhancement networks.

Both networks map a stereo ``(batch, 2, length)`` signal to a tensor of the
same shape and add their input to the output, so they only model the
residual between band-limited input and full-bandwidth target.
"""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Parameter, RunningStats, Tensor

STEREO = 2


class ConfigError(ValueError):
    pass


class InitScheme(str, enum.Enum):
    SCALED = "scaled"  # N(0, 1/fan_in)
    UNIT = "unit"  # N(0, 1)


@dataclass
class UNetConfig:
    num_scales: int = 4
    channels_per_scale: list[int] = field(default_factory=lambda: [16, 32, 64, 128])
    kernel_sizes: list[int] = field(default_factory=lambda: [9, 9, 9, 9])
    use_batch_norm: bool = False
    use_dropout: bool = False
    dropout_p: float = 0.5

    def validate(self):
        if self.num_scales < 1:
            raise ConfigError("num_scales must be >= 1")
        if len(self.channels_per_scale) != self.num_scales:
            raise ConfigError("channels_per_scale needs one entry per scale")
        if len(self.kernel_sizes) != self.num_scales:
            raise ConfigError("kernel_sizes needs one entry per scale")
        if any(c < 1 for c in self.channels_per_scale):
            raise ConfigError("channel counts must be positive")
        if any(k < 1 or k % 2 == 0 for k in self.kernel_sizes):
            raise ConfigError("kernel sizes must be positive and odd")
        _check_p(self.dropout_p)

    @classmethod
    def paper_scale(cls):
        """A ~61M-parameter starting point; the published schedule is not recoverable."""
        return cls(4, [128, 384, 512, 512], [65, 33, 17, 9])


@dataclass
class ResNetConfig:
    num_blocks: int = 8
    channels: int = 32
    kernel_size: int = 7
    residual_scale: float = 0.1
    use_batch_norm: bool = False
    use_dropout: bool = False
    dropout_p: float = 0.5

    def validate(self):
        if self.num_blocks < 1:
            raise ConfigError("num_blocks must be >= 1")
        if self.channels < 1:
            raise ConfigError("channels must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be positive and odd")
        # 0 is allowed so the branch can be switched off entirely
        if not 0 <= self.residual_scale <= 1:
            raise ConfigError("residual_scale must lie in [0, 1]")
        _check_p(self.dropout_p)

    @classmethod
    def paper_scale(cls):
        """15 blocks of 512 channels, kernel 7: about 55.1M parameters."""
        return cls(num_blocks=15, channels=512, kernel_size=7)


def _check_p(p):
    if not 0 <= p < 1:
        raise ConfigError(f"dropout_p must be in [0, 1), got {p}")


class Conv:
    def __init__(self, name, in_ch, out_ch, kernel, stride, rng, init, dtype, zero=False):
        self.in_ch, self.out_ch, self.kernel, self.stride = in_ch, out_ch, kernel, stride
        shape = (out_ch, in_ch, kernel)
        if zero:
            w = np.zeros(shape)
        elif InitScheme(init) is InitScheme.UNIT:
            w = rng.standard_normal(shape)
        else:
            w = rng.standard_normal(shape) / np.sqrt(in_ch * kernel)
        self.weight = Parameter(f"{name}.weight", w, dtype)
        self.bias = Parameter(f"{name}.bias", np.zeros(out_ch), dtype)
        self.name = name

    def __call__(self, x: Tensor) -> Tensor:
        return ag.conv1d(x, self.weight.tensor, self.bias.tensor, self.stride)

    def parameters(self):
        return [self.weight, self.bias]

    def zero_(self):
        self.weight.tensor.data[...] = 0
        self.bias.tensor.data[...] = 0


class BatchNorm:
    def __init__(self, name, channels, dtype):
        self.gamma = Parameter(f"{name}.gamma", np.ones(channels), dtype)
        self.beta = Parameter(f"{name}.beta", np.zeros(channels), dtype)
        self.stats = RunningStats.zeros(channels, dtype)
        self.name = name

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ag.batch_norm(x, self.gamma.tensor, self.beta.tensor, self.stats, training)

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {
            f"{self.name}.running_mean": self.stats.mean,
            f"{self.name}.running_var": self.stats.var,
            f"{self.name}.updates": np.array([self.stats.updates], dtype=np.float32),
        }

    def load_buffers(self, values):
        self.stats.mean[...] = values[f"{self.name}.running_mean"]
        self.stats.var[...] = values[f"{self.name}.running_var"]
        self.stats.updates = int(values[f"{self.name}.updates"][0])


class Network:
    """Base class: parameter registry, train/eval mode and the additive skip.

    The bare base class is a passthrough with no layers.
    """

    arch = "passthrough"

    def __init__(self, config=None, seed=0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.training = True
        self.rng = np.random.default_rng(seed)
        self._convs: list[Conv] = []
        self._norms: list[BatchNorm] = []

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    @property
    def mode(self) -> str:
        return "train" if self.training else "eval"

    def parameters(self) -> list[Parameter]:
        params = []
        for layer in self._convs + self._norms:
            params.extend(layer.parameters())
        return sorted(params, key=lambda p: p.name)

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for bn in self._norms:
            out.update(bn.buffers())
        return out

    def load_buffers(self, values):
        for bn in self._norms:
            bn.load_buffers(values)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def check_input(self, x: Tensor):
        if x.ndim != 3 or x.shape[1] != STEREO:
            raise ConfigError(f"expected input of shape (batch, {STEREO}, length), got {x.shape}")

    def residual(self, x: Tensor) -> Tensor | None:
        return None

    def forward(self, x: Tensor) -> Tensor:
        self.check_input(x)
        r = self.residual(x)
        return x if r is None else ag.add(x, r)

    __call__ = forward

    def conv_plan(self, length: int) -> list[tuple[Conv, int, int]]:
        """``(conv, input_length, output_length)`` for every conv in execution order."""
        return []

    def describe(self) -> dict:
        return {"arch": self.arch, "config": asdict(self.config) if self.config is not None else {}}


class UNet(Network):
    arch = "unet"

    def __init__(self, config: UNetConfig, init=InitScheme.SCALED, seed=0, dtype=np.float32,
                 zero_final=True):
        config.validate()
        super().__init__(config, seed, dtype)
        rng = np.random.default_rng(seed)
        ch, ks, n = config.channels_per_scale, config.kernel_sizes, config.num_scales
        self.down, self.down_bn, self.up = [], [], []
        in_ch = STEREO
        for i in range(n):
            self.down.append(Conv(f"down{i}", in_ch, ch[i], ks[i], 2, rng, init, dtype))
            if config.use_batch_norm:
                self.down_bn.append(BatchNorm(f"down{i}.bn", ch[i], dtype))
            in_ch = ch[i]
        for j in range(n):
            scale = n - 1 - j
            in_ch = ch[n - 1] if j == 0 else ch[scale + 1] + ch[scale]
            self.up.append(Conv(f"up{j}", in_ch, 2 * ch[scale], ks[scale], 1, rng, init, dtype))
        self.final = Conv("final", ch[0], STEREO, ks[0], 1, rng, init, dtype, zero=zero_final)
        self._convs = self.down + self.up + [self.final]
        self._norms = list(self.down_bn)

    def check_input(self, x):
        super().check_input(x)
        factor = 2 ** self.config.num_scales
        if x.shape[2] % factor:
            raise ConfigError(f"U-Net input length {x.shape[2]} must be divisible by {factor}")

    def residual(self, x):
        skips = []
        h = x
        for i, conv in enumerate(self.down):
            h = conv(h)
            if self.down_bn:
                h = self.down_bn[i](h, self.training)
            h = ag.relu(h)
            skips.append(h)
        n = len(self.up)
        for j, conv in enumerate(self.up):
            if j > 0:
                h = ag.concat([h, skips[n - 1 - j]], axis=1)
            h = conv(h)
            if self.config.use_dropout:
                h = ag.dropout(h, self.config.dropout_p, self.training, self.rng)
            h = ag.relu(h)
            h = ag.subpixel_shuffle(h, 2)
        return self.final(h)

    def conv_plan(self, length):
        plan = []
        n = self.config.num_scales
        for i, conv in enumerate(self.down):
            plan.append((conv, length >> i, length >> (i + 1)))
        for j, conv in enumerate(self.up):
            size = length >> (n - j)
            plan.append((conv, size, size))
        plan.append((self.final, length, length))
        return plan


class ResNet(Network):
    arch = "resnet"

    def __init__(self, config: ResNetConfig, init=InitScheme.SCALED, seed=0, dtype=np.float32,
                 zero_final=True):
        config.validate()
        super().__init__(config, seed, dtype)
        rng = np.random.default_rng(seed)
        c, k = config.channels, config.kernel_size
        self.entry = Conv("entry", STEREO, c, k, 1, rng, init, dtype)
        self.blocks = []
        norms = []
        for b in range(config.num_blocks):
            first = Conv(f"block{b}.conv0", c, c, k, 1, rng, init, dtype)
            second = Conv(f"block{b}.conv1", c, c, k, 1, rng, init, dtype)
            bns = None
            if config.use_batch_norm:
                bns = (BatchNorm(f"block{b}.bn0", c, dtype), BatchNorm(f"block{b}.bn1", c, dtype))
                norms.extend(bns)
            self.blocks.append((first, second, bns))
        self.final = Conv("final", c, STEREO, k, 1, rng, init, dtype, zero=zero_final)
        self._convs = [self.entry] + [cv for f, s, _ in self.blocks for cv in (f, s)] + [self.final]
        self._norms = norms

    def residual(self, x):
        cfg = self.config
        h = self.entry(x)
        for first, second, bns in self.blocks:
            r = first(h)
            if bns:
                r = bns[0](r, self.training)
            r = ag.relu(r)
            if cfg.use_dropout:
                r = ag.dropout(r, cfg.dropout_p, self.training, self.rng)
            r = second(r)
            if bns:
                r = bns[1](r, self.training)
            h = ag.add(h, ag.scale(r, cfg.residual_scale))
        return self.final(h)

    def conv_plan(self, length):
        return [(conv, length, length) for conv in self._convs]


def build_unet(config: UNetConfig | None = None, init=InitScheme.SCALED, seed=0,
               dtype=np.float32, zero_final=True) -> UNet:
    return UNet(config or UNetConfig(), init, seed, dtype, zero_final)


def build_resnet(config: ResNetConfig | None = None, init=InitScheme.SCALED, seed=0,
                 dtype=np.float32, zero_final=True) -> ResNet:
    return ResNet(config or ResNetConfig(), init, seed, dtype, zero_final)


def build_network(arch: str, config=None, **kw) -> Network:
    arch = arch.lower()
    if arch == "unet":
        return build_unet(config, **kw)
    if arch == "resnet":
        return build_resnet(config, **kw)
    if arch == "passthrough":
        return Network(None, seed=kw.get("seed", 0), dtype=kw.get("dtype", np.float32))
    raise ConfigError(f"unknown architecture {arch!r}")


def config_from_dict(arch: str, values: dict):
    cls = {"unet": UNetConfig, "resnet": ResNetConfig}.get(arch.lower())
    if cls is None:
        return None
    return cls(**values)


def count_params_and_macs(net: Network, input_length: int) -> tuple[int, int]:
    """Exact parameter count and multiply-accumulates for one forward pass.

    MACs count only convolution products, ``out_len * out_ch * in_ch * k``
    per conv; bias additions, normalization and elementwise ops are excluded.
    """
    macs = sum(out_len * c.out_ch * c.in_ch * c.kernel for c, _, out_len in net.conv_plan(input_length))
    return net.num_parameters(), int(macs)
