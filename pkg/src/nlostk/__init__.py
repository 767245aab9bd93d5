"""nlostk: confocal non-line-of-sight imaging toolkit.

A simulated capture rig (galvo scanner, relay wall, SPAD noise model) paired
with the full online-calibration and reconstruction pipeline, so every
calibration and reconstruction procedure can be exercised against known
ground truth without hardware.
"""

__version__ = "0.1.0"

from .calibration import (BoundingBox, JitterFitResult, cross_entropy,
                          estimate_bbox, fit_jitter, fit_plane, plane_rmse,
                          points_from_los)
from .enhancement import denoise, estimate_eta, wiener_kernel
from .errors import NlosError
from .galvo import GalvoModel, angles_to_voltages, fit_galvo, voltages_to_angles
from .geometry import (RelayPlane, angles_to_point, build_wall_frame,
                       point_to_angles, project_onto_plane)
from .patterns import (CompiledPattern, ScanPattern, ScanPoint, compile_pattern,
                       gen_circles, gen_grid, load_pattern_csv)
from .reconstruction import (ConfocalOperator, ReconConfig, ReconResult,
                             loss_grad, reconstruct_bp, reconstruct_opt,
                             tv_value_grad)
from .scenes import BUILTIN_SCENES, VoxelVolume, make_scene
from .simulator import (CaptureTruth, JitterParams, NoiseModel, RigConfig,
                        apply_spad_noise, default_rig, jitter_curve,
                        jitter_kernel, render_clean_transient, rig_capture,
                        simulate_dataset)
from .timebins import SPEED_OF_LIGHT, bin_to_distance, distance_to_bin
from .transient import (GammaMap, TransientDataset, TransientHistogram,
                        estimate_bias, estimate_los_halfwidth, find_los_peak,
                        gamma_map, load_dataset, locate_peak,
                        los_halfwidth_from_jitter, mip_map, normalize_by_gamma,
                        realign, realign_dataset, save_dataset, split_los_nlos)
