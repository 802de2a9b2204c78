"""Pipeline configuration.

Config files are flat ``key=value`` text with dotted keys::

    # comment
    ae.layers=1
    vae.latent_dim=2
    svm.kernel=rbf
    features=hog,lbp,raw

Unknown keys are errors.  The defaults reproduce the MNIST preset: HoG
(1x1 blocks, 9 orientations, 14x14 cells), uniform LBP (4 points, radius
8), raw pixels; one 'same'-width ReLU layer per AE; a 2-D VAE; l2
selection with alpha=3, beta=5; RBF SVM with gamma=1, C=0.1.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields

from .boundary import RULES
from .classify import KERNELS
from .errors import ConfigError
from .features import HogConfig, LbpConfig, canonical_features
from .hierarchy import AE_MODES, FUSIONS, WIDTHS, HierarchyConfig
from .nnet import ACTIVATIONS, TrainConfig

SYNTHESIS_MODES = ("stochastic", "deterministic", "jitter", "none")
CLASSIFIERS = ("svm", "nb", "mlp", "ocsvm")
SELECTORS = RULES + ("none",)

ALPHA_GRID = (1.0, 1.25, 1.5, 1.75, 2.0)
BETA_GRID = (1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0)


@dataclass
class PipelineConfig:
    features: tuple = field(default=("hog", "lbp", "raw"), metadata={"key": "features"})
    hog_orientations: int = field(default=9, metadata={"key": "hog.orientations"})
    hog_pixels_per_cell: tuple = field(default=(14, 14), metadata={"key": "hog.pixels_per_cell"})
    hog_cells_per_block: tuple = field(default=(1, 1), metadata={"key": "hog.cells_per_block"})
    lbp_points: int = field(default=4, metadata={"key": "lbp.points"})
    lbp_radius: float = field(default=8.0, metadata={"key": "lbp.radius"})
    lbp_method: str = field(default="uniform", metadata={"key": "lbp.method"})

    ae_mode: str = field(default="individual", metadata={"key": "ae.mode"})
    ae_layers: int = field(default=1, metadata={"key": "ae.layers"})
    ae_width: str = field(default="same", metadata={"key": "ae.width"})
    ae_activation: str = field(default="relu", metadata={"key": "ae.activation"})
    ae_loss: str = field(default="sse", metadata={"key": "ae.loss"})
    ae_noise: float = field(default=0.1, metadata={"key": "ae.noise"})

    fusion: str = field(default="vae", metadata={"key": "fusion"})
    vae_layers: int = field(default=1, metadata={"key": "vae.layers"})
    vae_width: str = field(default="same", metadata={"key": "vae.width"})
    vae_activation: str = field(default="relu", metadata={"key": "vae.activation"})
    vae_latent_dim: int = field(default=2, metadata={"key": "vae.latent_dim"})

    train_optimizer: str = field(default="adam", metadata={"key": "train.optimizer"})
    train_lr: float = field(default=1e-3, metadata={"key": "train.lr"})
    train_batch_size: int = field(default=128, metadata={"key": "train.batch_size"})
    train_epochs: int = field(default=50, metadata={"key": "train.epochs"})
    train_staged: bool = field(default=False, metadata={"key": "train.staged"})

    selector: str = field(default="l2", metadata={"key": "selector"})
    synthesis: str = field(default="stochastic", metadata={"key": "synthesis"})
    alpha: float = field(default=3.0, metadata={"key": "alpha"})
    beta: float = field(default=5.0, metadata={"key": "beta"})
    synthesis_count: int = field(default=0, metadata={"key": "synthesis.count"})
    jitter_sigma: float = field(default=1.5, metadata={"key": "jitter.sigma"})

    classifier: str = field(default="svm", metadata={"key": "classifier"})
    classifier_use_sample: bool = field(default=False, metadata={"key": "classifier.use_sample"})
    svm_kernel: str = field(default="rbf", metadata={"key": "svm.kernel"})
    svm_gamma: float = field(default=1.0, metadata={"key": "svm.gamma"})
    svm_C: float = field(default=0.1, metadata={"key": "svm.C"})
    svm_degree: int = field(default=3, metadata={"key": "svm.degree"})
    svm_coef0: float = field(default=0.0, metadata={"key": "svm.coef0"})
    svm_tol: float = field(default=1e-3, metadata={"key": "svm.tol"})
    svm_max_iter: int = field(default=10_000, metadata={"key": "svm.max_iter"})
    svm_cache_rows: int = field(default=4096, metadata={"key": "svm.cache_rows"})
    ocsvm_nu: float = field(default=0.1, metadata={"key": "ocsvm.nu"})
    mlp_hidden: int = field(default=16, metadata={"key": "mlp.hidden"})
    mlp_epochs: int = field(default=100, metadata={"key": "mlp.epochs"})
    mlp_lr: float = field(default=1e-2, metadata={"key": "mlp.lr"})

    cv_folds: int = field(default=5, metadata={"key": "cv.folds"})
    cv_outlier_pct: tuple = field(default=(50.0,), metadata={"key": "cv.outlier_pct"})
    data_inlier_class: int = field(default=0, metadata={"key": "data.inlier_class"})
    data_max_inliers: int = field(default=0, metadata={"key": "data.max_inliers"})

    seed: int = field(default=0, metadata={"key": "seed"})

    def __post_init__(self):
        self.validate()

    # -- views --------------------------------------------------------------

    def hog_config(self):
        return HogConfig(self.hog_orientations, tuple(self.hog_pixels_per_cell),
                         tuple(self.hog_cells_per_block))

    def lbp_config(self):
        return LbpConfig(self.lbp_points, self.lbp_radius, self.lbp_method)

    def train_config(self):
        return TrainConfig(self.train_lr, self.train_batch_size, self.train_epochs,
                           self.train_optimizer, self.seed)

    def hierarchy_config(self):
        return HierarchyConfig(
            ae_mode=self.ae_mode, ae_layers=self.ae_layers, ae_width=self.ae_width,
            ae_activation=self.ae_activation, ae_loss=self.ae_loss, ae_noise=self.ae_noise,
            fusion=self.fusion, vae_layers=self.vae_layers, vae_width=self.vae_width,
            vae_activation=self.vae_activation, latent_dim=self.vae_latent_dim,
            staged=self.train_staged, train=self.train_config(),
        )

    # -- validation -----------------------------------------------------------

    def validate(self):
        def one_of(name, value, allowed):
            if value not in allowed:
                raise ConfigError(f"{name} must be one of {tuple(allowed)}, got {value!r}")

        self.features = canonical_features(self.features)
        one_of("ae.mode", self.ae_mode, AE_MODES)
        one_of("ae.width", self.ae_width, WIDTHS)
        one_of("vae.width", self.vae_width, WIDTHS)
        one_of("ae.activation", self.ae_activation, ACTIVATIONS)
        one_of("vae.activation", self.vae_activation, ACTIVATIONS)
        one_of("fusion", self.fusion, FUSIONS)
        one_of("selector", self.selector, SELECTORS)
        one_of("synthesis", self.synthesis, SYNTHESIS_MODES)
        one_of("classifier", self.classifier, CLASSIFIERS)
        one_of("svm.kernel", self.svm_kernel, KERNELS)
        if self.ae_layers not in (1, 3, 5, 7):
            raise ConfigError("ae.layers must be one of 1, 3, 5, 7")
        if self.vae_layers not in (1, 2):
            raise ConfigError("vae.layers must be 1 or 2")
        if not 2 <= self.vae_latent_dim <= 18:
            raise ConfigError("vae.latent_dim must be within 2..18")
        for name in ("alpha", "beta", "svm_gamma", "svm_C", "train_lr"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{self._key_of(name)} must be > 0")
        if self.jitter_sigma < 0:
            raise ConfigError("jitter.sigma must be >= 0")
        if self.cv_folds < 2:
            raise ConfigError("cv.folds must be >= 2")
        for pct in self.cv_outlier_pct:
            if not 0 < pct < 100:
                raise ConfigError("cv.outlier_pct values must be within (0, 100)")
        self.hog_config()
        self.lbp_config()
        self.train_config()

        if self.fusion == "none" and (self.selector != "none" or self.synthesis != "none"):
            raise ConfigError("fusion=none leaves no distribution space: selector and "
                              "synthesis must both be none")
        if self.synthesis == "none":
            if self.classifier != "ocsvm":
                raise ConfigError("synthesis=none requires classifier=ocsvm")
        else:
            if self.classifier == "ocsvm":
                raise ConfigError("a one-class classifier cannot use synthetic outliers")
            if self.selector == "none":
                raise ConfigError(f"synthesis={self.synthesis} needs a selector")
        if self.synthesis == "jitter" and self.fusion != "ae":
            raise ConfigError("jitter synthesis requires fusion=ae")
        if self.synthesis in ("stochastic", "deterministic") and self.fusion != "vae":
            raise ConfigError(f"synthesis={self.synthesis} requires fusion=vae")

    # -- (de)serialisation ----------------------------------------------------

    @staticmethod
    def _key_of(attr):
        for f in fields(PipelineConfig):
            if f.name == attr:
                return f.metadata["key"]
        raise KeyError(attr)

    def to_flat(self):
        out = {}
        for f in fields(self):
            out[f.metadata["key"]] = _format(getattr(self, f.name))
        return out

    def to_text(self):
        return "".join(f"{k}={v}\n" for k, v in self.to_flat().items())

    def fingerprint(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def replace(self, **kwargs):
        return dataclasses.replace(self, **kwargs)

    def with_overrides(self, flat):
        """Copy with dotted-key overrides given as strings."""
        updates = {}
        for key, raw in flat.items():
            f = _FIELDS_BY_KEY.get(key)
            if f is None:
                raise ConfigError(f"unknown config key {key!r}")
            updates[f.name] = _parse(f, raw)
        return dataclasses.replace(self, **updates)

    @classmethod
    def from_flat(cls, flat):
        return cls().with_overrides(flat) if flat else cls()


_FIELDS_BY_KEY = {f.metadata["key"]: f for f in fields(PipelineConfig)}


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(f, raw):
    default = f.default
    raw = str(raw).strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(p) for p in parts)
            if default and isinstance(default[0], float):
                return tuple(float(p) for p in parts)
            return tuple(parts)
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {f.metadata['key']}") from None


def parse_config_text(text):
    flat = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key not in _FIELDS_BY_KEY:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        flat[key] = value.strip()
    return flat


def load_config(path=None, overrides=None):
    flat = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                flat.update(parse_config_text(fh.read()))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
    flat.update(overrides or {})
    return PipelineConfig.from_flat(flat)


def config_keys():
    return list(_FIELDS_BY_KEY)
