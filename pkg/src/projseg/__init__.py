"""projseg: multi-view projective part segmentation for triangle meshes.

The pipeline renders a mesh from adaptively selected viewpoints, scores
every pixel per part label with a convolutional network, pools the
confidences onto the surface, and cleans the labeling with a surface CRF
solved by mean-field inference; network and CRF train end-to-end.
"""

from .config import PipelineConfig, load_config
from .crf import CrfParams, Marginals, map_labeling, mean_field
from .mesh import (Mesh, PairwiseGraph, SampledPointSet,
                   build_pairwise_graph, load_face_labels, load_mesh,
                   sample_surface)
from .net import NetworkParams, default_layers, forward, init_params
from .project import (ConfidenceStack, SurfaceConfidences, backward_project,
                      project_max, project_mean)
from .render import Camera, RenderedView, RenderSettings, make_cameras, \
    rasterize, render_views
from .synth import SyntheticShapeSpec, generate_shape
from .train import TrainConfig, TrainShape, evaluate, infer_shape, train
from .views import (Viewpoint, ViewpointSet, estimate_coverage,
                    fixed_dodecahedron_views, generate_candidates,
                    greedy_select)

__version__ = "0.1.0"

__all__ = [
    "PipelineConfig", "load_config",
    "CrfParams", "Marginals", "map_labeling", "mean_field",
    "Mesh", "PairwiseGraph", "SampledPointSet", "build_pairwise_graph",
    "load_face_labels", "load_mesh", "sample_surface",
    "NetworkParams", "default_layers", "forward", "init_params",
    "ConfidenceStack", "SurfaceConfidences", "backward_project",
    "project_max", "project_mean",
    "Camera", "RenderedView", "RenderSettings", "make_cameras",
    "rasterize", "render_views",
    "SyntheticShapeSpec", "generate_shape",
    "TrainConfig", "TrainShape", "evaluate", "infer_shape", "train",
    "Viewpoint", "ViewpointSet", "estimate_coverage",
    "fixed_dodecahedron_views", "generate_candidates", "greedy_select",
    "__version__",
]
