"""Two-level feature distillation: per-feature denoising AEs, then VAE fusion.

Each descriptor ``g_i`` goes through its own autoencoder; the encoder
outputs are concatenated in (hog, lbp, raw) order into ``w`` and a VAE maps
``w`` to a diagonal Gaussian ``(mu, sigma)``.  Both levels are trained
jointly on

    L = sum_i ||g_i_hat - g_i||^2 + ||w_hat - w||^2 + KL(q(z|w) || N(0, I))

with squared norms summed over vector dimensions and averaged over the
batch.  Gradients of the second term reach the AEs both through the VAE
encoder and through the reconstruction target ``w`` itself.

The catalog of Gaussians (one per training inlier, in input order) is built
with a single deterministic pass of the VAE encoder over uncorrupted inputs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import seeds
from .errors import ConfigError, DataError, NumericError, TrainingDiverged
from .nnet import BCE_EPS, DenseNet, TrainConfig, make_optimizer

logger = logging.getLogger(__name__)

WIDTHS = {"same": 1.0, "double": 2.0, "half": 0.5}
AE_MODES = ("individual", "concatenated", "none")
FUSIONS = ("vae", "ae", "none")


@dataclass
class GaussianParams:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.mu.shape != self.sigma.shape:
            raise ConfigError("mu and sigma must share a shape")


class LatentCatalog:
    """The per-inlier Gaussians, stored as two ``(n, d)`` arrays.

    ``sigma`` is None for deterministic (plain AE) spaces, where only the
    codes exist.
    """

    def __init__(self, mu, sigma=None):
        self.mu = np.asarray(mu, dtype=np.float64)
        self.sigma = None if sigma is None else np.asarray(sigma, dtype=np.float64)
        if self.mu.ndim != 2:
            raise ConfigError("catalog means must be a 2-D array")
        if self.sigma is not None and self.sigma.shape != self.mu.shape:
            raise ConfigError("catalog sigma must match mu")

    def __len__(self):
        return len(self.mu)

    def __getitem__(self, i):
        sigma = np.zeros_like(self.mu[i]) if self.sigma is None else self.sigma[i]
        return GaussianParams(self.mu[i], sigma)

    @property
    def entries(self):
        return [self[i] for i in range(len(self))]

    @property
    def dim(self):
        return self.mu.shape[1]


# -- Gaussian helpers --------------------------------------------------------


def kl_to_standard_normal(p):
    """KL(N(mu, diag sigma^2) || N(0, I)), summed over dimensions (and rows)."""
    mu = np.asarray(p.mu, dtype=np.float64)
    sigma = np.asarray(p.sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise NumericError("sigma must be strictly positive")
    var = sigma * sigma
    return float(0.5 * np.sum(var + mu * mu - 1.0 - np.log(var)))


def reparam_sample(p, seed=None, eps=None):
    """``mu + sigma * eps`` with ``eps ~ N(0, I)`` drawn from ``seed``."""
    mu = np.asarray(p.mu, dtype=np.float64)
    if eps is None:
        eps = np.random.default_rng(seed).standard_normal(mu.shape)
    return mu + np.asarray(p.sigma) * eps


# -- network builders --------------------------------------------------------


def _width(in_dim, width):
    if width not in WIDTHS:
        raise ConfigError(f"width must be one of {sorted(WIDTHS)}, got {width!r}")
    return max(1, int(round(WIDTHS[width] * in_dim)))


class FeatureAE:
    """Denoising autoencoder for one descriptor (or their concatenation)."""

    def __init__(self, encoder, decoder, feature_index=0, noise_sigma=0.1):
        if decoder.shapes != [s[::-1] for s in reversed(encoder.shapes)]:
            raise ConfigError("decoder must mirror the encoder layer shapes")
        self.encoder = encoder
        self.decoder = decoder
        self.feature_index = feature_index
        self.noise_sigma = noise_sigma

    @classmethod
    def build(cls, in_dim, layers=1, width="same", activation="relu", *,
              unit_range=True, feature_index=0, noise_sigma=0.1, seed=0):
        if layers < 1:
            raise ConfigError("ae.layers must be >= 1")
        hidden = _width(in_dim, width)
        enc = DenseNet.build([in_dim] + [hidden] * layers, activation, seed=seed)
        out_act = "sigmoid" if unit_range else "linear"
        dec = DenseNet.build(
            [hidden] * layers + [in_dim],
            [activation] * (layers - 1) + [out_act],
            seed=seeds.splitmix64(seed),
        )
        return cls(enc, dec, feature_index, noise_sigma)

    @property
    def code_dim(self):
        return self.encoder.out_dim

    def nets(self):
        return [self.encoder, self.decoder]

    def encode(self, g):
        return self.encoder.forward(g, cache=False)

    def reconstruct(self, g):
        return self.decoder.forward(self.encode(g), cache=False)


class FusionVAE:
    """Encoder trunk with parallel mu / log-variance heads and a decoder."""

    def __init__(self, trunk, mu_head, logvar_head, decoder):
        if mu_head.out_dim != logvar_head.out_dim:
            raise ConfigError("mu and log-variance heads must have the same size")
        if mu_head.in_dim != trunk.out_dim or logvar_head.in_dim != trunk.out_dim:
            raise ConfigError("heads must consume the trunk output")
        if decoder.in_dim != mu_head.out_dim or decoder.out_dim != trunk.in_dim:
            raise ConfigError("decoder must map the latent space back to w")
        self.trunk = trunk
        self.mu_head = mu_head
        self.logvar_head = logvar_head
        self.decoder = decoder

    @classmethod
    def build(cls, in_dim, latent_dim=2, layers=1, width="same", activation="relu", seed=0):
        if layers < 1:
            raise ConfigError("vae.layers must be >= 1")
        if latent_dim < 1:
            raise ConfigError("vae.latent_dim must be >= 1")
        hidden = _width(in_dim, width)
        s = [seed]
        for _ in range(3):
            s.append(seeds.splitmix64(s[-1]))
        trunk = DenseNet.build([in_dim] + [hidden] * layers, activation, seed=s[0])
        mu_head = DenseNet.build([hidden, latent_dim], "linear", seed=s[1])
        lv_head = DenseNet.build([hidden, latent_dim], "linear", seed=s[2])
        dec = DenseNet.build(
            [latent_dim] + [hidden] * layers + [in_dim],
            [activation] * layers + ["linear"],
            seed=s[3],
        )
        return cls(trunk, mu_head, lv_head, dec)

    @property
    def latent_dim(self):
        return self.mu_head.out_dim

    def nets(self):
        return [self.trunk, self.mu_head, self.logvar_head, self.decoder]


class FusionAE:
    """Deterministic stand-in for the VAE (ablation): w -> code -> w_hat."""

    def __init__(self, encoder, decoder):
        self.encoder = encoder
        self.decoder = decoder

    @classmethod
    def build(cls, in_dim, latent_dim=2, layers=1, width="same", activation="relu", seed=0):
        hidden = _width(in_dim, width)
        enc = DenseNet.build(
            [in_dim] + [hidden] * layers + [latent_dim],
            [activation] * layers + ["linear"],
            seed=seed,
        )
        dec = DenseNet.build(
            [latent_dim] + [hidden] * layers + [in_dim],
            [activation] * layers + ["linear"],
            seed=seeds.splitmix64(seed),
        )
        return cls(enc, dec)

    @property
    def latent_dim(self):
        return self.encoder.out_dim

    def nets(self):
        return [self.encoder, self.decoder]


# -- functional pieces ---------------------------------------------------------


def encode_feature(ae, g):
    return ae.encode(g)


def concat_latents(codes):
    if not codes or any(c is None for c in codes):
        raise ConfigError("every feature code must be present")
    return np.concatenate([np.atleast_2d(c) for c in codes], axis=1)


def _sq(residual):
    return float(np.sum(residual * residual))


def feature_loss(aes, features):
    """Sum over AEs of the squared reconstruction error (mean over rows)."""
    if len(aes) != len(features):
        raise ConfigError(f"{len(aes)} autoencoders but {len(features)} feature sets")
    total = 0.0
    for ae, g in zip(aes, features):
        g = np.atleast_2d(np.asarray(g, dtype=np.float64))
        total += _sq(ae.reconstruct(g) - g) / len(g)
    return total


def vae_encode(vae, w):
    h = vae.trunk.forward(w, cache=False)
    mu = vae.mu_head.forward(h, cache=False)
    logvar = vae.logvar_head.forward(h, cache=False)
    sigma = np.exp(0.5 * logvar)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma)) and np.all(sigma > 0)):
        raise NumericError("VAE heads produced non-finite or non-positive parameters")
    if np.ndim(w) == 1:
        return GaussianParams(mu[0], sigma[0])
    return GaussianParams(mu, sigma)


# -- the stack ------------------------------------------------------------------


@dataclass
class HierarchyConfig:
    ae_mode: str = "individual"
    ae_layers: int = 1
    ae_width: str = "same"
    ae_activation: str = "relu"
    ae_loss: str = "sse"
    ae_noise: float = 0.1
    fusion: str = "vae"
    vae_layers: int = 1
    vae_width: str = "same"
    vae_activation: str = "relu"
    latent_dim: int = 2
    staged: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.ae_mode not in AE_MODES:
            raise ConfigError(f"ae.mode must be one of {AE_MODES}")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"fusion must be one of {FUSIONS}")
        if self.ae_loss not in ("sse", "bce"):
            raise ConfigError("ae.loss must be 'sse' or 'bce'")
        if self.ae_noise < 0:
            raise ConfigError("ae.noise must be >= 0")


class Hierarchy:
    """AEs + fusion network, with joint loss/gradient evaluation."""

    def __init__(self, aes, fusion, ae_mode="individual", feature_dims=(), ae_loss="sse",
                 unit_range=()):
        self.aes = list(aes)
        self.fusion = fusion
        self.ae_mode = ae_mode
        self.feature_dims = tuple(int(d) for d in feature_dims)
        self.ae_loss = ae_loss
        self.unit_range = tuple(bool(u) for u in unit_range)

    @classmethod
    def build(cls, feature_dims, cfg, seed=0, unit_range=None):
        feature_dims = tuple(feature_dims)
        if unit_range is None:
            unit_range = (True,) * len(feature_dims)
        ae_seed = seeds.derive(seed, "ae-init")
        if cfg.ae_mode == "individual":
            groups = [(i, d, u) for i, (d, u) in enumerate(zip(feature_dims, unit_range))]
        elif cfg.ae_mode == "concatenated":
            groups = [(0, sum(feature_dims), all(unit_range))]
        else:
            groups = []
        aes = [
            FeatureAE.build(
                d, cfg.ae_layers, cfg.ae_width, cfg.ae_activation, unit_range=u,
                feature_index=i, noise_sigma=cfg.ae_noise,
                seed=seeds.derive(ae_seed, "ae", i),
            )
            for i, d, u in groups
        ]
        w_dim = sum(ae.code_dim for ae in aes) if aes else sum(feature_dims)
        vae_seed = seeds.derive(seed, "vae-init")
        if cfg.fusion == "vae":
            fusion = FusionVAE.build(w_dim, cfg.latent_dim, cfg.vae_layers, cfg.vae_width,
                                     cfg.vae_activation, seed=vae_seed)
        elif cfg.fusion == "ae":
            fusion = FusionAE.build(w_dim, cfg.latent_dim, cfg.vae_layers, cfg.vae_width,
                                    cfg.vae_activation, seed=vae_seed)
        else:
            fusion = None
        return cls(aes, fusion, cfg.ae_mode, feature_dims, cfg.ae_loss, unit_range)

    # inference ---------------------------------------------------------------

    def _ae_inputs(self, features):
        if len(features) != len(self.feature_dims):
            raise ConfigError(
                f"expected {len(self.feature_dims)} feature sets, got {len(features)}"
            )
        features = [np.atleast_2d(np.asarray(f, dtype=np.float64)) for f in features]
        for f, d in zip(features, self.feature_dims):
            if f.shape[1] != d:
                raise ConfigError(f"feature dimension {f.shape[1]} != fitted {d}")
        if self.ae_mode == "concatenated":
            return [np.concatenate(features, axis=1)]
        return features

    def codes(self, features):
        inputs = self._ae_inputs(features)
        if not self.aes:
            return inputs
        return [ae.encode(x) for ae, x in zip(self.aes, inputs)]

    def w(self, features):
        return concat_latents(self.codes(features))

    def encode(self, features):
        """Distribution-space coordinates.

        Returns GaussianParams for VAE fusion, otherwise the deterministic
        code (fusion='ae') or ``w`` itself (fusion='none') with zero sigma.
        """
        w = self.w(features)
        if isinstance(self.fusion, FusionVAE):
            return vae_encode(self.fusion, w)
        if isinstance(self.fusion, FusionAE):
            z = self.fusion.encoder.forward(w, cache=False)
            return GaussianParams(z, np.zeros_like(z))
        return GaussianParams(w, np.zeros_like(w))

    def catalog(self, features):
        p = self.encode(features)
        sigma = p.sigma if isinstance(self.fusion, FusionVAE) else None
        return LatentCatalog(p.mu, sigma)

    def nets(self, which="all"):
        out = []
        if which in ("all", "aes"):
            for ae in self.aes:
                out.extend(ae.nets())
        if which in ("all", "fusion") and self.fusion is not None:
            out.extend(self.fusion.nets())
        return out

    def parameters(self, which="all"):
        return [p for net in self.nets(which) for p in net.parameters()]

    # training ------------------------------------------------------------------

    def _recon_term(self, pred, target):
        """Per-batch reconstruction loss (sum over dims, mean over rows) and grad."""
        n = len(target)
        if self.ae_loss == "bce":
            p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
            value = -np.sum(target * np.log(p) + (1 - target) * np.log1p(-p)) / n
            grad = (p - target) / (p * (1 - p)) / n
            grad[(pred < BCE_EPS) | (pred > 1 - BCE_EPS)] = 0.0
            return float(value), grad
        r = pred - target
        return _sq(r) / n, 2.0 * r / n

    def loss_and_grads(self, features, eps=None, noise=None, which="all"):
        """Joint loss ``L_f + L_h`` and gradients for ``parameters(which)``.

        ``eps`` is the reparameterisation noise (rows x latent_dim) and
        ``noise`` the list of input corruptions, one per AE.  Passing them
        explicitly freezes every random element, which is what finite
        difference checks need.  Returns ``(total, parts, grads)``.
        """
        inputs = self._ae_inputs(features)
        n = len(inputs[0])
        codes, recon_grads = [], []
        lf = 0.0
        for k, (ae, x) in enumerate(zip(self.aes, inputs)):
            xin = x if noise is None else x + noise[k]
            c = ae.encoder.forward(xin)
            rec = ae.decoder.forward(c)
            value, g = self._recon_term(rec, x)
            lf += value
            codes.append(c)
            recon_grads.append(g)
        w = concat_latents(codes if self.aes else inputs)

        lh = kl = 0.0
        g_w = np.zeros_like(w)
        fusion_grads = []
        # the AE-only phase of staged training optimises L_f alone
        f = None if which == "aes" else self.fusion
        if isinstance(f, FusionVAE):
            h = f.trunk.forward(w)
            mu = f.mu_head.forward(h)
            logvar = f.logvar_head.forward(h)
            sigma = np.exp(0.5 * logvar)
            if eps is None:
                eps = np.zeros_like(mu)
            z = mu + sigma * eps
            w_hat = f.decoder.forward(z)
            r = w_hat - w
            rec = _sq(r) / n
            kl = float(0.5 * np.sum(np.exp(logvar) + mu * mu - 1.0 - logvar)) / n
            lh = rec + kl
            dec_g, g_z = f.decoder.backward(2.0 * r / n)
            g_mu = g_z + mu / n
            g_lv = 0.5 * g_z * sigma * eps + 0.5 * (np.exp(logvar) - 1.0) / n
            mu_g, g_h1 = f.mu_head.backward(g_mu)
            lv_g, g_h2 = f.logvar_head.backward(g_lv)
            trunk_g, g_w = f.trunk.backward(g_h1 + g_h2)
            g_w = g_w - 2.0 * r / n
            fusion_grads = [trunk_g, mu_g, lv_g, dec_g]
        elif isinstance(f, FusionAE):
            z = f.encoder.forward(w)
            w_hat = f.decoder.forward(z)
            r = w_hat - w
            lh = _sq(r) / n
            dec_g, g_z = f.decoder.backward(2.0 * r / n)
            enc_g, g_w = f.encoder.backward(g_z)
            g_w = g_w - 2.0 * r / n
            fusion_grads = [enc_g, dec_g]

        ae_grads = []
        if which in ("all", "aes"):
            offset = 0
            for ae, c, g_rec in zip(self.aes, codes, recon_grads):
                dec_g, g_c = ae.decoder.backward(g_rec)
                g_c = g_c + g_w[:, offset : offset + c.shape[1]]
                offset += c.shape[1]
                enc_g, _ = ae.encoder.backward(g_c)
                ae_grads.extend([enc_g, dec_g])

        grads = []
        selected = []
        if which in ("all", "aes"):
            selected += ae_grads
        if which in ("all", "fusion"):
            selected += fusion_grads
        for net_g in selected:
            for dw, db in net_g:
                grads.extend((dw, db))
        parts = {"feature": lf, "fusion": lh, "kl": kl}
        return lf + lh, parts, grads


def hierarchy_loss(h, features, eps=None, noise=None):
    return h.loss_and_grads(features, eps=eps, noise=noise)[0]


def _fit_phase(h, features, train, which, rng_noise, rng_shuffle, phase, latent_dim):
    params = h.parameters(which)
    if not params:
        return []
    opt = make_optimizer(params, train)
    n = len(features[0])
    history, batch_losses = [], []
    use_noise = which in ("all", "aes") and h.aes
    for epoch in range(train.epochs):
        order = rng_shuffle.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, train.batch_size)):
            idx = order[start : start + train.batch_size]
            batch = [f[idx] for f in features]
            noise = None
            if use_noise:
                inputs = h._ae_inputs(batch)
                noise = [rng_noise.normal(0.0, ae.noise_sigma, size=x.shape)
                         for ae, x in zip(h.aes, inputs)]
            eps = rng_noise.standard_normal((len(idx), latent_dim)) if latent_dim else None
            value, _, grads = h.loss_and_grads(batch, eps=eps, noise=noise, which=which)
            batch_losses.append(value)
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, b, batch_losses)
            opt.step(grads)
            total += value * len(idx)
        history.append(total / n)
        logger.debug("%s epoch %d loss %.6g", phase, epoch, history[-1])
    return history


def fit_hierarchy(features, cfg=None, seed=0):
    """Train the stack on inlier features; returns ``(hierarchy, catalog, history)``.

    ``features`` is a list of ``(n, d_i)`` matrices in canonical order.
    """
    cfg = cfg or HierarchyConfig()
    features = [np.asarray(f, dtype=np.float64) for f in features]
    if not features or len(features[0]) < 2:
        raise DataError("at least two training inliers are required")
    if len({len(f) for f in features}) != 1:
        raise DataError("all feature matrices need the same number of rows")
    unit = [bool(f.min() >= 0.0 and f.max() <= 1.0) for f in features]
    h = Hierarchy.build([f.shape[1] for f in features], cfg, seed=seed, unit_range=unit)
    rng_noise = np.random.default_rng(seeds.derive(seed, "vae-noise"))
    rng_shuffle = np.random.default_rng(seeds.derive(seed, "shuffle"))
    latent = h.fusion.latent_dim if isinstance(h.fusion, FusionVAE) else 0
    if cfg.staged:
        history = _fit_phase(h, features, cfg.train, "aes", rng_noise, rng_shuffle, "ae", 0)
        history += _fit_phase(h, features, cfg.train, "fusion", rng_noise, rng_shuffle,
                              "fusion", latent)
    else:
        history = _fit_phase(h, features, cfg.train, "all", rng_noise, rng_shuffle,
                             "joint", latent)
    return h, h.catalog(features), history
