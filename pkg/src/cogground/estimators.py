"""scikit-learn style wrappers so grounding and degradation compose with sklearn tooling.

Neither estimator learns anything: ``fit`` only validates parameters and
freezes the resolved configuration, which keeps ``get_params``/``set_params``
and ``clone`` working as usual.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .degrade import DegradeConfig, STAGE_NAMES, degrade_instance, instance_seed
from .exceptions import PipelineError
from .geometry import Point, hit_test
from .imaging import check_image
from .pipeline import PipelineConfig, load_pipeline_config, run_pipeline


def check_grounding_inputs(X):
    """Normalise X to a list of (image, instruction, instance_id) triples.

    Accepts (image, instruction) or (image, instruction, instance_id) items;
    missing ids default to the item's index.
    """
    if isinstance(X, np.ndarray) and X.dtype != object:
        raise ValueError("X must be a sequence of (image, instruction) pairs")
    items = []
    for i, item in enumerate(X):
        if not isinstance(item, (tuple, list)) or len(item) not in (2, 3):
            raise ValueError(f"X[{i}] must be (image, instruction[, instance_id])")
        image, instruction = check_image(item[0]), item[1]
        if not isinstance(instruction, str) or not instruction:
            raise ValueError(f"X[{i}] has an empty instruction")
        items.append((image, instruction, str(item[2]) if len(item) == 3 else str(i)))
    if not items:
        raise ValueError("X is empty")
    return items


def check_images(X):
    if isinstance(X, np.ndarray) and X.ndim == 3:
        X = [X]
    images = [check_image(x) for x in X]
    if not images:
        raise ValueError("X is empty")
    return images


class ChainOfGroundLocator(BaseEstimator):
    """Predict click points for (screenshot, instruction) pairs with a CoG pipeline.

    Parameters
    ----------
    config : PipelineConfig or path to a JSON pipeline config
    n_steps : truncate the chain to this many steps
    modality : force the feedback modality of every refinement step
    marker_profile : 'large' or 'small', replaces per-step markers
    """

    def __init__(self, config=None, n_steps: Optional[int] = None, modality: Optional[str] = None,
                 marker_profile: Optional[str] = None):
        self.config = config
        self.n_steps = n_steps
        self.modality = modality
        self.marker_profile = marker_profile

    def fit(self, X=None, y=None):
        if self.config is None:
            raise ValueError("config is required")
        cfg = self.config
        if not isinstance(cfg, PipelineConfig):
            cfg = load_pipeline_config(cfg)
        cfg = cfg.with_overrides(steps=self.n_steps, modality=self.modality,
                                 marker_profile=self.marker_profile)
        self.config_ = cfg
        self.config_digest_ = cfg.digest
        self.n_steps_ = len(cfg.steps)
        return self

    def predict(self, X) -> np.ndarray:
        """(n, 2) array of predicted points; rows are NaN where the pipeline failed."""
        check_is_fitted(self, "config_")
        items = check_grounding_inputs(X)
        out = np.full((len(items), 2), np.nan)
        traces = []
        for row, (image, instruction, iid) in enumerate(items):
            try:
                point, trace = run_pipeline(self.config_, image, instruction, instance_id=iid)
            except PipelineError as exc:
                traces.append(exc.trace)
                continue
            out[row] = point.as_tuple()
            traces.append(trace)
        self.traces_ = traces
        return out

    def score(self, X, y: Sequence) -> float:
        """Grounding success rate in [0, 1]; ``y`` holds one target per item."""
        pred = self.predict(X)
        if len(y) != len(pred):
            raise ValueError("X and y have different lengths")
        hits = sum(not np.isnan(p).any() and hit_test(Point(*p), t) for p, t in zip(pred, y))
        return hits / len(pred)


class DegradationTransformer(TransformerMixin, BaseEstimator):
    """Apply the seeded degradation stages to a batch of RGB images.

    Image ``i`` is degraded with a seed derived from (``seed``, ``i``), so the
    output does not depend on how the batch is split across workers.
    """

    def __init__(self, seed: int = 0, severity: float = 0.5, stages=None,
                 output_quality: Optional[int] = None):
        self.seed = seed
        self.severity = severity
        self.stages = stages
        self.output_quality = output_quality

    def fit(self, X=None, y=None):
        stages = STAGE_NAMES if self.stages is None else tuple(self.stages)
        self.config_ = DegradeConfig(seed=self.seed, severity=self.severity, stages=stages,
                                     output_quality=self.output_quality)
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        images, _, _ = self.transform_with_targets(X, None)
        if isinstance(X, np.ndarray) and X.ndim == 4:
            return np.stack(images)
        return images

    def transform_with_targets(self, X, targets):
        """Degrade images and their labels together; returns (images, targets, provenance)."""
        check_is_fitted(self, "config_")
        images = check_images(X)
        if targets is None:
            targets = [None] * len(images)
        if len(targets) != len(images):
            raise ValueError("X and targets have different lengths")
        out_imgs, out_targets, provs = [], [], []
        for i, (img, tgt) in enumerate(zip(images, targets)):
            cfg = DegradeConfig(seed=instance_seed(self.config_.seed, str(i)),
                                severity=self.config_.severity, stages=self.config_.stages,
                                output_quality=self.config_.output_quality)
            o, t, p = degrade_instance(img, tgt, cfg)
            out_imgs.append(o)
            out_targets.append(t)
            provs.append(p)
        return out_imgs, out_targets, provs
