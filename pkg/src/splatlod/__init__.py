"""Offline LOD compiler and CPU reference renderer for Gaussian splat scenes."""

from .scene import (Camera, ChunkPlan, Gaussian, ImportanceScores, LodLevel,
                    Scene, effective_covariance, validate_scene)
from .raster import (RasterConfig, Splat2D, Splat2DBatch, TileRenderOutput,
                     eval_sh, project_gaussian, project_scene, rasterize,
                     render_scene, visibility_histogram)
from .lod import (LodBuildConfig, PerturbSpec, apply_smoothing_filter,
                  build_level, build_levels, compute_importance, prune_level,
                  render_lod, select_active)
from .thresholds import (CostEvaluation, ThresholdSearcher, cost_surface,
                         default_grid, evaluate_cost, greedy_search)
from .chunks import (ChunkBuildConfig, build_chunk_active_sets,
                     build_chunk_plan, chunk_radii, kmeans_positions,
                     n_clusters, visibility_filter_chunk)
from .blending import (ActiveSelection, BlendState, StreamEvent, blend_factor,
                       compose_active, nearest_two_chunks, render_selection,
                       stream_step)
from .assets import (Asset, AssetError, read_asset, read_cameras_json,
                     read_splat_ply, write_asset, write_cameras_json,
                     write_splat_ply)

__version__ = "0.1.0"
