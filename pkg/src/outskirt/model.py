"""The trained artefact: hierarchy + catalog + classifier + config."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .features import extract
from .hierarchy import Hierarchy, LatentCatalog


@dataclass
class PipelineModel:
    config: PipelineConfig
    hierarchy: Hierarchy
    classifier: object
    catalog: LatentCatalog | None = None
    meta: dict = field(default_factory=dict)

    def features(self, samples):
        features = self.meta.get("features") or list(self.config.features)
        return extract(samples, features, self.config.hog_config(), self.config.lbp_config())

    def embed(self, features):
        """Classifier inputs for feature matrices: distribution means (or samples)."""
        p = self.hierarchy.encode(features)
        if self.config.classifier_use_sample and p.sigma.any():
            rng = np.random.default_rng(self.meta.get("sample_seed", 0))
            return p.mu + p.sigma * rng.standard_normal(p.mu.shape)
        return p.mu

    def score_features(self, features):
        return self.classifier.decision_score(self.embed(features))

    def score(self, samples):
        return self.score_features(self.features(samples))
