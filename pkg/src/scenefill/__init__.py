"""Progressive multi-view completion of labeled point clouds.

From one posed RGB-D + segmentation view, the engine repeatedly picks a
viewpoint on a fixed sphere, renders the partial cloud there, fills the
hole pixels (optionally guided by a projected occupancy volume), and
lifts the filled pixels back into labeled 3D points until the scene's
total hole area is small. View selection is either scripted or learned
with actor-critic / Q planners.
"""

from .config import ConfigError, EngineConfig, load_config, write_config
from .core import (LABEL_NAMES, NUM_CLASSES, UNKNOWN_SEG, LabeledPointCloud,
                   LabeledVoxelGrid, Point, SemanticLabel, voxel_downsample,
                   voxelize_points)
from .datagen import (PALETTE, SceneSpec, add_depth_noise, frustum_crop,
                      generate_scene, standard_suite, synth_input_view)
from .inpaint import (DiffusionInpainter, InpaintRequest, InpaintedMaps,
                      OracleInpainter, UnfillableError, VolumeGuidedInpainter,
                      baseline_diffusion, diffusion_fill, inpaint_view,
                      nearest_label_fill, oracle_fill)
from .metrics import (MetricsReport, accuracy, chamfer_distance, completeness,
                      evaluate, voxel_iou)
from .mdp import (Environment, EpisodeState, RewardBreakdown, TraceRecord,
                  reward_acc, reward_hole, reward_pcacc, total_reward)
from .planner import (ParamStore, ReplayBuffer, a3c_gradients, actor_gradient,
                      advantage, critic_gradient, dqn_gradients, greedy_hole,
                      load_params, plan_chooser, policy_chooser,
                      policy_forward, q_chooser, run_episode, save_params,
                      select_action, train_a3c, train_dqn, uniform_plan,
                      value_forward, view_features)
from .render import (ViewMaps, backproject, bounds_hull_mask, hole_area,
                     render_views, view_hole_counts)
from .sceneio import SceneParseError, load_scene, save_scene
from .views import (ActionSpace, CameraModel, Viewpoint,
                    generate_action_space, pixel_to_world, project_points,
                    world_to_pixel)
from .volume import (OccupancyVolume, VolumeSpec, build_occupancy,
                     complete_volume, finite_difference_gradients,
                     load_volume, project_volume, projection_gradients,
                     ray_composite, run_gradcheck, save_volume,
                     sharpen_volume, traverse_ray)

__version__ = "0.1.0"
