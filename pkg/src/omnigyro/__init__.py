"""Camera attitude from equirectangular panoramas: heat-map horizon fit,
MPP yaw alignment and photometric SO(3) refinement."""
from .errors import GyroError
from .horizon import (HeatMapPair, HorizonPlane, RansacConfig, WeightedSpherePoints,
                      estimate_vertical, heatmap_to_sphere, horizon_attitude,
                      ransac_horizon_plane, rollpitch_from_normal, synth_heatmaps)
from .mpp import MppConfig, MppModel, YawEstimate, build_mpp, mpp_ssd_cost, mpp_value, optimize_yaw
from .panorama import (DualFisheyeImage, EquirectImage, LensParams, dualfisheye_to_equirect,
                       load_equirect, rotate_equirect, sample_bilinear, save_equirect, to_grayscale)
from .pipeline import (AttitudeEstimate, EvalReport, GroundTruthRecord, PipelineConfig,
                       estimate_frame, evaluate_estimates, evaluate_sequence, load_ground_truth,
                       normal_angle_error, rotation_angle_error, run_sequence)
from .pvg import PvgConfig, RefineResult, SphericalBrightness, refine_rotation, sample_spherical, spherical_gradient
from .sphere import (EulerRPY, IcosphereGrid, build_icosphere, direction_to_equirect,
                     equirect_to_direction, geodesic_angle, rotation_to_rpy, rpy_to_rotation)

__version__ = "0.1.0"
