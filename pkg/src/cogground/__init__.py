"""Chain-of-Ground: training-free iterative GUI grounding with reference feedback."""

__version__ = "0.1.0"

from .backends import (BackendDescriptor, GroundingQuery, RawReply, parse_point,  # noqa: E402
                       request_grounding, scripted_backend)
from .dataset import Manifest, load_manifest, save_manifest, split_counts  # noqa: E402
from .evaluator import EvalReport, evaluate, render_report, weighted_average  # noqa: E402
from .geometry import (BBox, BoxTarget, Instance, Point, PointTarget, hit_test,  # noqa: E402
                       scale_point)
from .imaging import load_image  # noqa: E402
from .marker import MarkerSpec, marker_for_step, render_marker  # noqa: E402
from .pipeline import (PipelineConfig, StepConfig, Trace, build_prompt,  # noqa: E402
                       load_pipeline_config, prepare_step_image, run_pipeline,
                       save_pipeline_config)

__all__ = [
    "BackendDescriptor", "GroundingQuery", "RawReply", "parse_point", "request_grounding",
    "scripted_backend", "Manifest", "load_manifest", "save_manifest", "split_counts",
    "EvalReport", "evaluate", "render_report", "weighted_average", "BBox", "BoxTarget",
    "Instance", "Point", "PointTarget", "hit_test", "scale_point", "MarkerSpec",
    "marker_for_step", "render_marker", "PipelineConfig", "StepConfig", "Trace",
    "build_prompt", "prepare_step_image", "run_pipeline", "load_pipeline_config",
    "save_pipeline_config", "load_image",
]
