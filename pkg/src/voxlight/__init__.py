"""voxlight: spherical-Gaussian and volumetric lighting toolkit.

Lighting representations (SG environments, VSG voxel volumes), a microfacet
rendering layer, multi-view geometry utilities, inverse-rendering losses,
surface-volume construction, and a sphere-insertion renderer, with
gradient-based fitters for the lighting representations.
"""

from .aggregation import Encoder, FeatureSet, aggregate, identity_encoder, weighted_moments
from .brdf import (F0_DEFAULT, MaterialSample, SpecFeatureInput, fresnel_schlick,
                   half_vector, lobe_mask, render_diffuse, render_specular,
                   rerender_pixel, sg_render_specular, spec_feature_inputs,
                   specular_brdf)
from .geometry import (Camera, GeometryMaps, Reprojection, View, ViewBundle,
                       bilinear_sample, depth_gradient, depth_to_normal,
                       derive_geometry, multiview_weights, projection_error,
                       reproject)
from .insertion import (DiffuseMaterial, InsertedSphere, MirrorMaterial,
                        SphereHit, insert_object, ray_sphere, shade_sphere_pixel,
                        shadow_ratio)
from .metrics import (DEFAULT_BETAS, ScaleFit, StageLossBundle, entropy_reg,
                      ls_scale, masked_l1_angular, masked_mse, si_log_mse,
                      si_mse, stage_losses)
from .optim import FitReport, minimize_monotone
from .pipeline import DemoConfig, PipelineReport, pipeline_demo
from .scene import GeneratedScene, SceneSpec, generate_scene, per_pixel_env_maps
from .sg import (EnvMapGrid, Frame, SGEnvironment, SGFitOptions, SGFitResult,
                 SGLobe, eval_env, eval_sg, fibonacci_hemisphere, rasterize_env,
                 sg_fit, texel_directions, texel_solid_angles)
from .surface import SurfaceVolume, build_surface_volume
from .volume import (Bounds, EnvTarget, Ray, RaySamples, VSGFitOptions,
                     VSGFitResult, VSGVolume, composite_ray, compositing_weights,
                     extract_env_map, sample_ray, vsg_fit)

__version__ = "0.1.0"
