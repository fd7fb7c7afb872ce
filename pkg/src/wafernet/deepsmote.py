"""Latent-space SMOTE: a small conv autoencoder plus neighbour interpolation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NonFiniteError, OptimizerError, SpecError, TrainingError, UsageError
from .imageops import resize_bilinear
from .layers import Activation, Conv2d, Dense, Flatten, Reshape, UnitClamp, Upsample2x
from .models import ModelGraph
from .synth import WaferClass
from .tensor import GradTape, Tensor, mse_loss
from .train import Adam, minibatches

ENCODER_WIDTHS = (16, 32, 64, 128)


@dataclass
class AutoencoderPair:
    encoder: ModelGraph
    decoder: ModelGraph
    latent_dim: int
    input_res: int
    trained: bool = False
    history: list = field(default_factory=list)

    def parameters(self):
        return self.encoder.parameters() + self.decoder.parameters()

    def encode(self, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
        outs = [self.encoder.forward(x[i:i + batch_size]).data for i in range(0, len(x), batch_size)]
        return np.concatenate(outs) if outs else np.zeros((0, self.latent_dim), np.float32)

    def decode(self, z: np.ndarray, batch_size: int = 64) -> np.ndarray:
        outs = [self.decoder.forward(z[i:i + batch_size]).data for i in range(0, len(z), batch_size)]
        if not outs:
            return np.zeros((0, 1, self.input_res, self.input_res), np.float32)
        return np.concatenate(outs)

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        return self.decode(self.encode(x))


def build_autoencoder(latent_dim: int = 64, input_res: int = 64, seed: int = 0,
                      dtype=np.float32) -> AutoencoderPair:
    """Encoder: four k4/s2/p1 conv+relu blocks then a dense map to the latent.

    Decoder: dense + reshape, then four (nearest 2x upsample, 3x3 conv) blocks
    ending in one channel squashed to [0, 1].
    """
    if input_res < 16 or input_res % 16:
        raise ConfigurationError(f"autoencoder resolution must be a multiple of 16, got {input_res}")
    if latent_dim < 1:
        raise ConfigurationError(f"latent_dim must be positive, got {latent_dim}")
    seeds = np.random.SeedSequence(seed)
    side = input_res // 16
    flat = ENCODER_WIDTHS[-1] * side * side

    enc, cin = [], 1
    for i, w in enumerate(ENCODER_WIDTHS, start=1):
        enc += [Conv2d(cin, w, 4, 2, 1, name=f"enc{i}", rng=seeds, dtype=dtype), Activation("relu")]
        cin = w
    enc += [Flatten(), Dense(flat, latent_dim, name="enc_fc", rng=seeds, dtype=dtype)]

    dec = [Dense(latent_dim, flat, name="dec_fc", rng=seeds, dtype=dtype), Activation("relu"),
           Reshape((ENCODER_WIDTHS[-1], side, side))]
    widths = ENCODER_WIDTHS[::-1][1:] + (1,)
    cin = ENCODER_WIDTHS[-1]
    for i, w in enumerate(widths, start=1):
        dec += [Upsample2x(), Conv2d(cin, w, 3, 1, 1, name=f"dec{i}", rng=seeds, dtype=dtype)]
        if i < len(widths):
            dec.append(Activation("relu"))
        cin = w
    dec.append(UnitClamp())

    encoder = ModelGraph("Encoder", enc, (1, input_res, input_res))
    decoder = ModelGraph("Decoder", dec, (latent_dim,))
    return AutoencoderPair(encoder, decoder, latent_dim, input_res)


def _as_unit_batch(images, res: int) -> np.ndarray:
    """uint8 HxW stack (or float N[x1]xHxW in [0, 1]) -> float32 Nx1xRxR."""
    x = np.asarray(images)
    if x.dtype == np.uint8:
        x = x.astype(np.float64) / 255.0
    if x.ndim == 3:
        x = x[:, None]
    if x.shape[-1] != res or x.shape[-2] != res:
        x = resize_bilinear(x, res)
    return x.astype(np.float32)


def _reconstruction_mse(pair, x, batch_size=64) -> float:
    total = 0.0
    for i in range(0, len(x), batch_size):
        xb = x[i:i + batch_size]
        d = pair.reconstruct(xb).astype(np.float64) - xb
        total += float((d * d).sum())
    return total / x.size


def train_autoencoder(images, epochs: int = 50, lr: float = 1e-3, seed: int = 0, *,
                      pair: AutoencoderPair | None = None, latent_dim: int = 64,
                      input_res: int = 64, batch_size: int = 16) -> AutoencoderPair:
    """Minimize reconstruction MSE with Adam.

    ``pair.history`` holds the full-data MSE before training followed by one
    entry per epoch.
    """
    if pair is None:
        pair = build_autoencoder(latent_dim, input_res, seed)
    x = _as_unit_batch(images, pair.input_res)
    if len(x) < 8:
        raise TrainingError(f"need at least 8 images to train the autoencoder, got {len(x)}")
    opt = Adam(pair.parameters())
    pair.history = [_reconstruction_mse(pair, x)]
    for epoch in range(1, epochs + 1):
        for b, idx in enumerate(minibatches(len(x), batch_size, epoch, seed)):
            opt.zero_grad()
            try:
                with GradTape() as tape:
                    xb = Tensor(x[idx])
                    loss = mse_loss(pair.decoder.forward(pair.encoder.forward(xb, train=True), train=True), x[idx])
                if not math.isfinite(loss.item()):
                    raise NonFiniteError("reconstruction loss is not finite")
                tape.backward(loss)
                opt.step(lr)
            except (NonFiniteError, OptimizerError) as exc:
                raise TrainingError(f"autoencoder epoch {epoch}, batch {b}: {exc}", epoch, b) from exc
        pair.history.append(_reconstruction_mse(pair, x))
    pair.trained = pair.trained or epochs > 0
    return pair


# -- SMOTE in latent space ------------------------------------------------------------------

@dataclass(frozen=True)
class SmoteSpec:
    k: int = 5
    n: int = 0
    seed: int = 0


@dataclass
class SmoteResult:
    points: np.ndarray
    parents: np.ndarray      # (n, 2): index of z_i and of the chosen neighbour
    lambdas: np.ndarray
    neighbors: np.ndarray    # (N, k) neighbour table used


def nearest_neighbors(z: np.ndarray, k: int, chunk: int = 256) -> np.ndarray:
    """Indices of the k Euclidean nearest neighbours of each row, self excluded.

    Ties resolve to the lower index.
    """
    z = np.asarray(z, dtype=np.float64)
    n = len(z)
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, chunk):
        block = z[start:start + chunk]
        d2 = ((block[:, None, :] - z[None, :, :]) ** 2).sum(axis=-1)
        rows = np.arange(len(block))
        d2[rows, start + rows] = np.inf
        out[start:start + len(block)] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def smote_latent(latents, spec: SmoteSpec, lam: float | None = None) -> SmoteResult:
    """``z = z_i + lam * (z_nn - z_i)`` for ``spec.n`` random (i, neighbour) pairs."""
    z = np.asarray(latents, dtype=np.float64)
    if z.ndim != 2:
        raise SpecError(f"latents must be a 2-D array, got shape {z.shape}")
    if spec.k < 1 or spec.k >= len(z):
        raise SpecError(f"k={spec.k} needs 1 <= k < population ({len(z)})")
    nbrs = nearest_neighbors(z, spec.k)
    rng = np.random.default_rng(spec.seed)
    i = rng.integers(len(z), size=spec.n)
    j = nbrs[i, rng.integers(spec.k, size=spec.n)]
    lams = rng.random(spec.n) if lam is None else np.full(spec.n, float(lam))
    pts = z[i] + lams[:, None] * (z[j] - z[i])
    return SmoteResult(pts, np.stack([i, j], axis=1), lams, nbrs)


def oversample_deepsmote(ds, cls, target_count: int, pair: AutoencoderPair,
                         spec: SmoteSpec = SmoteSpec()):
    """Decode synthetic latents of ``cls`` until it has ``target_count`` samples."""
    from .data import Sample

    if not pair.trained:
        raise UsageError("autoencoder pair is still at initialization; train it first")
    cls = WaferClass(cls)
    members = ds.of_class(cls)
    if not members:
        raise UsageError(f"class {cls.name} not present in dataset")
    need = target_count - len(members)
    if need <= 0:
        return ds
    x = _as_unit_batch(np.stack([s.image for s in members]), pair.input_res)
    z = pair.encode(x)
    res = smote_latent(z, SmoteSpec(spec.k, need, spec.seed))
    decoded = pair.decode(res.points.astype(np.float32))[:, 0].astype(np.float64)
    h, w = members[0].image.shape
    if (h, w) != decoded.shape[1:]:
        decoded = resize_bilinear(decoded, h, w)
    imgs = np.clip(np.rint(decoded * 255.0), 0, 255).astype(np.uint8)
    extra = [Sample(im, cls, None, f"deepsmote/{cls.name.lower()}_{j:05d}.pgm") for j, im in enumerate(imgs)]
    return ds.extended(extra)
