"""Torch internals of the convolutional VAE (imported lazily)."""

from __future__ import annotations

import struct

import numpy as np
import torch
from torch import nn

from .errors import DivergedTraining

WEIGHTS_MAGIC = b"FDAV"
WEIGHTS_VERSION = 1


class VaeNet(nn.Module):
    """Encoder: stride-2 3x3 conv stack + dense mean/log-variance heads.
    Decoder mirrors the stack with transposed convolutions and returns
    logits (sigmoid applied by callers)."""

    def __init__(self, resolution: int, channels: tuple[int, ...], latent_dim: int):
        super().__init__()
        self.resolution = resolution
        self.channels = tuple(channels)
        self.latent_dim = latent_dim

        enc = []
        prev = 1
        for ch in channels:
            enc.append(nn.Conv2d(prev, ch, kernel_size=3, stride=2, padding=1))
            enc.append(nn.ReLU(inplace=True))
            prev = ch
        self.encoder = nn.Sequential(*enc)
        self.final_spatial = resolution // (2 ** len(channels))
        flat = channels[-1] * self.final_spatial**2
        self.head_mean = nn.Linear(flat, latent_dim)
        self.head_logvar = nn.Linear(flat, latent_dim)

        self.decoder_input = nn.Linear(latent_dim, flat)
        dec = []
        rev = list(reversed(channels))
        for i, ch in enumerate(rev):
            out = rev[i + 1] if i + 1 < len(rev) else 1
            dec.append(
                nn.ConvTranspose2d(
                    ch, out, kernel_size=3, stride=2, padding=1, output_padding=1
                )
            )
            if i + 1 < len(rev):
                dec.append(nn.ReLU(inplace=True))
        self.decoder = nn.Sequential(*dec)

    def encode(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.encoder(x).flatten(1)
        return self.head_mean(h), self.head_logvar(h)

    def decode_logits(self, z: torch.Tensor) -> torch.Tensor:
        h = torch.relu(self.decoder_input(z))
        h = h.view(-1, self.channels[-1], self.final_spatial, self.final_spatial)
        return self.decoder(h)

    def loss(self, x: torch.Tensor, eps: torch.Tensor, kl_weight: float) -> torch.Tensor:
        """Mean over the batch of summed per-pixel BCE plus weighted KL."""
        mean, logvar = self.encode(x)
        z = mean + eps * torch.exp(0.5 * logvar)
        logits = self.decode_logits(z)
        bce = nn.functional.binary_cross_entropy_with_logits(
            logits, x, reduction="none"
        ).sum(dim=(1, 2, 3))
        kl = -0.5 * (1.0 + logvar - mean.pow(2) - logvar.exp()).sum(dim=1)
        return (bce + kl_weight * kl).mean()


def train(net: VaeNet, data: np.ndarray, config) -> list[float]:
    """Adam training loop; restarts with lr/10 on non-finite loss."""
    x_all = torch.from_numpy(data.astype(np.float32)).unsqueeze(1)
    lr = config.learning_rate
    for attempt in range(4):
        torch.manual_seed(config.rng_seed + attempt)
        for module in net.modules():
            if hasattr(module, "reset_parameters"):
                module.reset_parameters()
        optimizer = torch.optim.Adam(net.parameters(), lr=lr)
        generator = torch.Generator().manual_seed(config.rng_seed + attempt)
        history: list[float] = []
        diverged = False
        for _ in range(config.epochs):
            order = torch.randperm(x_all.shape[0], generator=generator)
            epoch_losses = []
            for start in range(0, x_all.shape[0], config.batch_size):
                batch = x_all[order[start : start + config.batch_size]]
                eps = torch.randn(
                    (batch.shape[0], net.latent_dim), generator=generator
                )
                loss = net.loss(batch, eps, config.kl_weight)
                if not torch.isfinite(loss):
                    diverged = True
                    break
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                epoch_losses.append(float(loss.detach()))
            if diverged:
                break
            history.append(float(np.mean(epoch_losses)))
        if not diverged:
            return history
        lr /= 10.0
    raise DivergedTraining("loss non-finite after 3 learning-rate restarts")


@torch.no_grad()
def encode_means(net: VaeNet, grids: np.ndarray) -> np.ndarray:
    x = torch.from_numpy(grids.astype(np.float32)).unsqueeze(1)
    mean, _ = net.encode(x)
    return mean.numpy().astype(float)


@torch.no_grad()
def decode_probabilities(net: VaeNet, latents: np.ndarray) -> np.ndarray:
    z = torch.from_numpy(np.atleast_2d(latents).astype(np.float32))
    return torch.sigmoid(net.decode_logits(z)).squeeze(1).numpy().astype(float)


def save_weights(path, net: VaeNet) -> None:
    """FDAV container: magic, version u32, layer table, then all weights
    as little-endian f32 in table order."""
    state = net.state_dict()
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<I", WEIGHTS_VERSION))
        fh.write(struct.pack("<I", len(state)))
        for name, tensor in state.items():
            encoded = name.encode()
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            dims = tuple(tensor.shape)
            fh.write(struct.pack("<I", len(dims)))
            fh.write(struct.pack(f"<{len(dims)}I", *dims) if dims else b"")
        for tensor in state.values():
            fh.write(tensor.detach().numpy().astype("<f4").tobytes(order="C"))


def load_weights(path, net: VaeNet) -> None:
    with open(path, "rb") as fh:
        if fh.read(4) != WEIGHTS_MAGIC:
            raise ValueError("bad magic, not a VAE weights file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != WEIGHTS_VERSION:
            raise ValueError(f"unsupported weights version {version}")
        (count,) = struct.unpack("<I", fh.read(4))
        table = []
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode()
            (ndim,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
            table.append((name, dims))
        state = {}
        for name, dims in table:
            numel = int(np.prod(dims)) if dims else 1
            raw = np.frombuffer(fh.read(4 * numel), dtype="<f4")
            state[name] = torch.from_numpy(raw.reshape(dims).astype(np.float32).copy())
    net.load_state_dict(state)
