"""Compositional geographic reasoning over hierarchical Gaussian city scenes.

Natural-language queries are answered by generating and executing small
programs over nine geographic vision operations (landmark and structure
segmentation, metric buffers, directional and between regions, distance
and height measurement, object detection), with a benchmark harness for
grounding, counting, measuring, comparison, and spatial yes/no tasks.
"""

from .errors import EngineError
from .georef import (ControlPointSet, GeoTransform, apply_transform,
                     estimate_transform)
from .grids import (DetectionSet, Segment, TopDownView, empty_segment,
                    full_segment)
from .gvapi import GeoEngine, segment_exists
from .harness import (IOU_HIT_THRESHOLD, MetricsReport, TaskRecord, aggregate,
                      compute_iou, load_dataset, run_benchmark, save_dataset,
                      score_task)
from .language import (ConfidenceMap, IdentityCodec, LinearCodec,
                       bake_features, relevancy_map, threshold_segment)
from .programs import (API_SIGNATURES, ICEStore, ProgramAST, assemble_prompt,
                       check_program, execute_program, generate_program,
                       parse_program)
from .providers import (HttpDetector, HttpEmbedder, HttpGenerator,
                        OracleDetector, OracleEmbedder, OracleGenerator,
                        ProviderEndpoint)
from .registry import Landmark, LandmarkRegistry, load_registry, rasterize_polygon
from .render import (RenderProduct, render_topdown, save_render_pngs,
                     select_lod_cut)
from .scene import (GaussianPrimitive, SceneHeader, SceneTree, load_scene,
                    save_scene, validate_tree)
from .suite import (build_city_bundle, build_query_suite, default_ice_store,
                    make_generator)
from .synth import CLASS_COLORS, SynthSpec, build_registry, default_view, synth_city

__version__ = "0.1.0"
