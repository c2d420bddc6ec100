"""Linear autoencoder that maps tokens into the routing latent space.

The encoder/decoder pair is a single affine map each; reconstruction keeps the
latent space informative while the mixture model is fitted on it. The tokens
entering :func:`encode` and the reconstruction targets are both treated as
constants, so no loss defined downstream of the projector can ever push
gradient into the backbone token representations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class AutoencoderParams:
    enc_weight: np.ndarray  # (r, d)
    enc_bias: np.ndarray  # (r,)
    dec_weight: np.ndarray  # (d, r)
    dec_bias: np.ndarray  # (d,)

    def __post_init__(self) -> None:
        self.enc_weight = np.asarray(self.enc_weight, dtype=np.float64)
        self.enc_bias = np.asarray(self.enc_bias, dtype=np.float64)
        self.dec_weight = np.asarray(self.dec_weight, dtype=np.float64)
        self.dec_bias = np.asarray(self.dec_bias, dtype=np.float64)
        r, d = self.enc_weight.shape
        if r > d:
            raise ValueError(f"latent dim {r} must not exceed token dim {d}")
        if self.enc_bias.shape != (r,):
            raise ValueError("enc_bias shape mismatch")
        if self.dec_weight.shape != (d, r):
            raise ValueError("dec_weight shape mismatch")
        if self.dec_bias.shape != (d,):
            raise ValueError("dec_bias shape mismatch")

    @property
    def latent_dim(self) -> int:
        return self.enc_weight.shape[0]

    @property
    def dim(self) -> int:
        return self.enc_weight.shape[1]

    def copy(self) -> "AutoencoderParams":
        return AutoencoderParams(
            self.enc_weight.copy(),
            self.enc_bias.copy(),
            self.dec_weight.copy(),
            self.dec_bias.copy(),
        )

    def to_json_dict(self) -> dict:
        return {
            "latent_dim": self.latent_dim,
            "dim": self.dim,
            "enc_weight": self.enc_weight.ravel().tolist(),
            "enc_bias": self.enc_bias.tolist(),
            "dec_weight": self.dec_weight.ravel().tolist(),
            "dec_bias": self.dec_bias.tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "AutoencoderParams":
        r, dim = int(d["latent_dim"]), int(d["dim"])
        return cls(
            np.asarray(d["enc_weight"], dtype=np.float64).reshape(r, dim),
            np.asarray(d["enc_bias"], dtype=np.float64),
            np.asarray(d["dec_weight"], dtype=np.float64).reshape(dim, r),
            np.asarray(d["dec_bias"], dtype=np.float64),
        )


@dataclass
class AeGrads:
    enc_weight: np.ndarray
    enc_bias: np.ndarray
    dec_weight: np.ndarray
    dec_bias: np.ndarray


def init_autoencoder(dim: int, latent_dim: int, rng: np.random.Generator) -> AutoencoderParams:
    """Fan-in uniform init (+-1/sqrt(fan_in)), zero biases; requires r < d."""
    if not 1 <= latent_dim < dim:
        raise ValueError(f"latent_dim {latent_dim} must satisfy 1 <= r < d={dim}")
    enc_scale = 1.0 / np.sqrt(dim)
    dec_scale = 1.0 / np.sqrt(latent_dim)
    return AutoencoderParams(
        rng.uniform(-enc_scale, enc_scale, size=(latent_dim, dim)),
        np.zeros(latent_dim),
        rng.uniform(-dec_scale, dec_scale, size=(dim, latent_dim)),
        np.zeros(dim),
    )


def _as_tokens(U: np.ndarray, dim: int) -> np.ndarray:
    U = np.asarray(U, dtype=np.float64)
    if U.ndim != 2 or U.shape[1] != dim:
        raise ValueError(f"token batch shape {U.shape} incompatible with dim {dim}")
    return U


def encode(params: AutoencoderParams, U: np.ndarray) -> np.ndarray:
    """z_t = enc_weight @ u_t + enc_bias, batched as (T, r)."""
    U = _as_tokens(U, params.dim)
    return U @ params.enc_weight.T + params.enc_bias


def decode(params: AutoencoderParams, Z: np.ndarray) -> np.ndarray:
    """u_hat_t = dec_weight @ z_t + dec_bias, batched as (T, d)."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != params.latent_dim:
        raise ValueError(f"latent batch shape {Z.shape} incompatible with r {params.latent_dim}")
    return Z @ params.dec_weight.T + params.dec_bias


def recon_loss(params: AutoencoderParams, U: np.ndarray) -> float:
    """Mean over tokens of the squared reconstruction error (summed over dims)."""
    U = _as_tokens(U, params.dim)
    resid = decode(params, encode(params, U)) - U
    return float((resid * resid).sum() / U.shape[0])


def recon_grad(params: AutoencoderParams, U: np.ndarray) -> AeGrads:
    """Exact gradient of :func:`recon_loss` for the four parameter blocks.

    The tokens are constants under the stop-gradient contract, so there is no
    U block here at all.
    """
    U = _as_tokens(U, params.dim)
    Z = encode(params, U)
    resid = decode(params, Z) - U
    g_out = (2.0 / U.shape[0]) * resid  # (T, d)
    g_dec_w = g_out.T @ Z
    g_dec_b = g_out.sum(axis=0)
    g_z = g_out @ params.dec_weight  # (T, r)
    g_enc_w = g_z.T @ U
    g_enc_b = g_z.sum(axis=0)
    return AeGrads(g_enc_w, g_enc_b, g_dec_w, g_dec_b)
