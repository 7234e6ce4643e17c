"""SHRED-(r)S4D: stacked S4D layers feeding a shallow fully-connected decoder.

Differentiation is torch autograd in float64. Complex SSM parameters are
stored as real tensors (log of -Re(a), Im(a), Re/Im of b and c) so every
trainable leaf is real and Re(a) < 0 holds after any update.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from rs4d.errors import ConfigError, SizeError
from rs4d.initialization import InitSpec, energy_matrix, h2_norm, init_diagonal
from rs4d.kernels import DiagonalSSM
from rs4d.numerics import next_power_of_two, qr_orthonormalize
from rs4d.s4dc import shifted_power_step

DTYPE = torch.float64

SSM_PARAM_NAMES = ("log_neg_re", "a_im", "b_re", "b_im", "c_re", "c_im", "log_dt")


def vandermonde_kernel(dta: torch.Tensor, weights: torch.Tensor, length: int) -> torch.Tensor:
    """Re sum_n weights[..., n] * exp(dta[n] * l), l = 0..length-1.

    dta: (H, N) complex, weights: (H, C, N) complex -> (H, C, length) real.
    Powers are split as l = j + inner*k so only O(N sqrt(L)) exponentials
    are formed and the contraction is a batched matmul.
    """
    inner = 1 << ((max(length, 1) - 1).bit_length() + 1) // 2
    outer = -(-length // inner)
    low = torch.exp(dta.unsqueeze(-1) * torch.arange(inner, dtype=DTYPE))  # (H, N, inner)
    high = torch.exp(dta.unsqueeze(-1) * (inner * torch.arange(outer, dtype=DTYPE)))  # (H, N, outer)
    hh, cc, nn_ = weights.shape
    lhs = (weights.unsqueeze(-1) * low.unsqueeze(1)).transpose(2, 3).reshape(hh, cc * inner, nn_)
    out = torch.bmm(lhs, high).reshape(hh, cc, inner, outer)
    return out.transpose(2, 3).reshape(hh, cc, inner * outer)[..., :length].real


def fft_conv(u: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
    """Causal convolution along the last axis. u: (B, H, L), k: (H, C, L) -> (B, H, C, L)."""
    length = u.shape[-1]
    nfft = 2 * length
    uf = torch.fft.rfft(u, n=nfft)
    kf = torch.fft.rfft(k, n=nfft)
    return torch.fft.irfft(uf.unsqueeze(2) * kf.unsqueeze(0), n=nfft)[..., :length]


class S4DLayer(nn.Module):
    """H independent diagonal SSMs (one per feature, C output channels each),
    GELU, position-wise mixing of the H*C outputs, residual add, LayerNorm."""

    def __init__(
        self,
        h: int,
        n: int,
        init: str = "s4d_lin",
        channels: int = 1,
        dt_min: float = 1e-3,
        dt_max: float = 1e-1,
        rng: np.random.Generator | None = None,
        residual: bool = True,
        norm: bool = True,
        s4dc: bool = False,
    ):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.h, self.n, self.channels, self.init_kind = h, n, channels, init
        self.residual, self.use_norm, self.s4dc = residual, norm, s4dc
        spec = InitSpec(init, n, dt_min, dt_max, channels)
        systems = [init_diagonal(spec, rng) for _ in range(h)]
        a = np.stack([s.a for s in systems])
        b = np.stack([s.b for s in systems])
        c = np.stack([s.c for s in systems])
        as_param = lambda arr: nn.Parameter(torch.tensor(np.ascontiguousarray(arr), dtype=DTYPE))
        self.log_neg_re = as_param(np.log(-a.real))
        self.a_im = as_param(a.imag)
        self.b_re = as_param(b.real)
        self.b_im = as_param(b.imag)
        self.c_re = as_param(c.real)
        self.c_im = as_param(c.imag)
        self.log_dt = as_param(np.array([s.log_dt for s in systems]))
        if s4dc:
            x = np.stack([qr_orthonormalize((s.b[None, :] * s.c).T) for s in systems])  # (H, N, C)
            self.register_buffer("x_re", torch.tensor(x.real, dtype=DTYPE))
            self.register_buffer("x_im", torch.tensor(x.imag, dtype=DTYPE))
        self.mixing = nn.Linear(h * channels, h).to(DTYPE)
        self.norm = nn.LayerNorm(h).to(DTYPE) if norm else nn.Identity()

    def poles(self) -> torch.Tensor:
        return torch.complex(-torch.exp(self.log_neg_re), self.a_im)

    def kernel(self, length: int) -> torch.Tensor:
        """ZOH-discretized convolution kernel, shape (H, C, length)."""
        a = self.poles()
        dt = torch.exp(self.log_dt).unsqueeze(-1)
        dta = a * dt
        gain = torch.expm1(dta) / a
        if self.s4dc:
            x = torch.complex(self.x_re, self.x_im).transpose(1, 2)  # (H, C, N)
            weights = x * gain.unsqueeze(1)
        else:
            b = torch.complex(self.b_re, self.b_im)
            c = torch.complex(self.c_re, self.c_im)
            weights = c * (b * gain).unsqueeze(1)
        return vandermonde_kernel(dta, weights, length)

    def ssm(self, u: torch.Tensor) -> torch.Tensor:
        """(B, L, H) -> (B, L, H*C) raw SSM bank outputs."""
        bsz, length, _ = u.shape
        y = fft_conv(u.transpose(1, 2), self.kernel(length))  # (B, H, C, L)
        return y.reshape(bsz, self.h * self.channels, length).transpose(1, 2)

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        if u.shape[-1] != self.h:
            raise SizeError(f"layer expects {self.h} features, got {u.shape[-1]}")
        y = self.mixing(F.gelu(self.ssm(u)))
        if self.residual:
            y = y + u
        return self.norm(y)

    def systems(self) -> list[DiagonalSSM]:
        """Per-feature continuous systems as numpy DiagonalSSM objects."""
        with torch.no_grad():
            a = self.poles().numpy()
            b = torch.complex(self.b_re, self.b_im).numpy()
            if self.s4dc:
                x = torch.complex(self.x_re, self.x_im).numpy()
                c = np.transpose(x, (0, 2, 1)) / b[:, None, :]
            else:
                c = torch.complex(self.c_re, self.c_im).numpy()
            log_dt = self.log_dt.numpy()
        return [DiagonalSSM(a[i], b[i], c[i], float(log_dt[i])) for i in range(self.h)]

    @torch.no_grad()
    def s4dc_update(self) -> None:
        """Rebuild the energy matrix from the current poles and take one power step on every X."""
        if not self.s4dc:
            return
        a = self.poles().numpy()
        x = torch.complex(self.x_re, self.x_im).numpy()
        new = np.stack([shifted_power_step(x[i], energy_matrix(a[i])) for i in range(self.h)])
        self.x_re.copy_(torch.from_numpy(new.real.copy()))
        self.x_im.copy_(torch.from_numpy(new.imag.copy()))


class Decoder(nn.Sequential):
    def __init__(self, in_dim: int, hidden: tuple[int, ...], out_dim: int):
        layers: list[nn.Module] = []
        prev = in_dim
        for width in hidden:
            layers += [nn.Linear(prev, width).to(DTYPE), nn.ReLU()]
            prev = width
        layers.append(nn.Linear(prev, out_dim).to(DTYPE))
        super().__init__(*layers)


@dataclass
class ModelConfig:
    input_dim: int = 3
    output_dim: int = 1
    hidden: int = 64
    state: int = 64
    layers: int = 2
    channels: int = 1
    robust: bool = True
    bw_state: int | None = None
    init: str = "s4d_lin"
    decoder_hidden: tuple[int, ...] = (128, 128)
    dt_min: float = 1e-3
    dt_max: float = 1e-1
    s4dc: bool = False
    residual_first: bool = True
    layer_norm: bool = True
    seed: int = 0
    layer_inits: list[str] = field(init=False)

    def __post_init__(self):
        if self.robust and self.layers < 2:
            raise ConfigError("robust mode needs at least 2 recurrent layers")
        first = "s4d_bw" if self.robust else self.init
        self.layer_inits = [first] + [self.init] * (self.layers - 1)


class ShredModel(nn.Module):
    """Linear sensor encoder -> (r)S4D block -> position-wise shallow decoder."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        rng = np.random.default_rng(cfg.seed)
        self.encoder = nn.Linear(cfg.input_dim, cfg.hidden).to(DTYPE)
        blocks = []
        for i, kind in enumerate(cfg.layer_inits):
            n = cfg.bw_state if (kind == "s4d_bw" and cfg.bw_state) else cfg.state
            blocks.append(
                S4DLayer(
                    cfg.hidden,
                    n,
                    kind,
                    cfg.channels,
                    cfg.dt_min,
                    cfg.dt_max,
                    rng=rng,
                    residual=cfg.residual_first or i > 0,
                    norm=cfg.layer_norm,
                    # S4DC constrains the HiPPO memorization layers only
                    s4dc=cfg.s4dc and kind != "s4d_bw",
                )
            )
        self.layers = nn.ModuleList(blocks)
        self.decoder = Decoder(cfg.hidden, tuple(cfg.decoder_hidden), cfg.output_dim)

    def hidden_sequence(self, inputs: torch.Tensor) -> torch.Tensor:
        """(B, L, input_dim) -> (B, L, hidden). L is zero-padded at the end to a
        power of two; causality makes the padding invisible to real steps."""
        length = inputs.shape[1]
        if inputs.shape[-1] != self.cfg.input_dim:
            raise SizeError(f"expected {self.cfg.input_dim} input features, got {inputs.shape[-1]}")
        padded = next_power_of_two(length)
        if padded != length:
            inputs = F.pad(inputs, (0, 0, 0, padded - length))
        z = self.encoder(inputs)
        for layer in self.layers:
            z = layer(z)
        return z[:, :length]

    def forward(self, inputs: torch.Tensor, eval_index: torch.Tensor) -> torch.Tensor:
        """Predictions at the evaluated steps: (B, E, output_dim)."""
        z = self.hidden_sequence(inputs)
        return self.decoder(z[:, eval_index])

    def s4dc_update(self) -> None:
        for layer in self.layers:
            layer.s4dc_update()


def loss_last_t(predictions: torch.Tensor, targets: torch.Tensor, t_eval: int) -> torch.Tensor:
    """MSE over the final ``t_eval`` steps (axis 1), all batch elements and outputs."""
    if t_eval < 1:
        raise SizeError("t_eval must be >= 1")
    if t_eval > predictions.shape[1]:
        raise SizeError(f"t_eval={t_eval} exceeds {predictions.shape[1]} steps")
    if predictions.shape != targets.shape:
        raise SizeError(f"prediction shape {tuple(predictions.shape)} != target shape {tuple(targets.shape)}")
    return torch.mean((predictions[:, -t_eval:] - targets[:, -t_eval:]) ** 2)


class ParamTape:
    """Named trainable parameters, their gradients and Adam state.

    SSM parameters get their own (smaller) learning rate.
    """

    def __init__(self, model: nn.Module, lr: float = 1e-3, ssm_lr: float = 1e-4,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.model = model
        ssm, other = [], []
        for name, p in model.named_parameters():
            (ssm if name.rsplit(".", 1)[-1] in SSM_PARAM_NAMES else other).append(p)
        groups = [g for g in ({"params": other, "lr": lr}, {"params": ssm, "lr": ssm_lr}) if g["params"]]
        self.optimizer = torch.optim.Adam(groups, betas=betas, eps=eps)
        self.steps = 0
        self._pending = False

    @property
    def parameters(self) -> dict[str, torch.Tensor]:
        return dict(self.model.named_parameters())

    @property
    def gradients(self) -> dict[str, torch.Tensor]:
        return {
            name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
            for name, p in self.model.named_parameters()
        }

    def zero_grad(self) -> None:
        self.optimizer.zero_grad(set_to_none=False)
        self._pending = False

    def backward(self, loss: torch.Tensor) -> dict[str, torch.Tensor]:
        if not isinstance(loss, torch.Tensor) or loss.grad_fn is None:
            raise RuntimeError("backward called without a recorded forward pass")
        self.zero_grad()
        loss.backward()
        self._pending = True
        return self.gradients

    def adam_step(self) -> None:
        if not self._pending:
            raise RuntimeError("adam_step needs gradients from backward()")
        self.optimizer.step()
        self.steps += 1
        self._pending = False


# checkpoint file: "S4CK", u32 version, u32 block count, then per block
# u32 name length, name, u32 rank, u32 dims, float64 payload (little-endian)
CHECKPOINT_MAGIC = b"S4CK"
CHECKPOINT_VERSION = 1


def save_checkpoint(model: nn.Module, path: str | Path) -> None:
    state = model.state_dict()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(state)))
        for name, tensor in state.items():
            raw = name.encode("utf-8")
            arr = tensor.detach().cpu().numpy().astype("<f8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())


def read_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ConfigError(f"{path}: not a checkpoint file")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    blocks = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off : off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", data, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        blocks[name] = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(dims).copy()
        off += 8 * size
    return blocks


def load_checkpoint(model: nn.Module, path: str | Path) -> None:
    blocks = read_checkpoint(path)
    state = model.state_dict()
    if set(blocks) != set(state):
        missing = sorted(set(state) ^ set(blocks))
        raise ConfigError(f"checkpoint parameters do not match the model config: {missing[:5]}")
    for name, tensor in state.items():
        if tuple(blocks[name].shape) != tuple(tensor.shape):
            raise ConfigError(
                f"checkpoint block {name} has shape {blocks[name].shape}, model expects {tuple(tensor.shape)}"
            )
    model.load_state_dict({k: torch.from_numpy(v) for k, v in blocks.items()})


def parameter_norms(model: nn.Module) -> dict[str, float]:
    return {name: float(p.detach().norm()) for name, p in model.named_parameters()}


def mean_h2(layer: S4DLayer) -> float:
    return float(np.mean([h2_norm(s).norm_sq for s in layer.systems()]))


__all__ = [
    "S4DLayer",
    "ShredModel",
    "ModelConfig",
    "ParamTape",
    "loss_last_t",
    "save_checkpoint",
    "load_checkpoint",
    "read_checkpoint",
    "vandermonde_kernel",
    "fft_conv",
]
