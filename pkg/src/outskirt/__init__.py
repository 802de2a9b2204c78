"""Zero-shot anomaly detection with a hierarchical latent space.

Hand-crafted descriptors (HoG, LBP, raw pixels) are distilled by
per-feature denoising autoencoders, fused by a VAE into one diagonal
Gaussian per training inlier, and the Gaussians on the outskirts of that
catalog generate synthetic outliers for a binary classifier.
"""

__version__ = "0.1.0"

from .config import PipelineConfig, load_config  # noqa: E402
from .errors import ConfigError, DataError, NumericError, OutskirtError  # noqa: E402

__all__ = ["PipelineConfig", "load_config", "ConfigError", "DataError", "NumericError",
           "OutskirtError", "__version__"]
