"""cryoscan: digital twin and calibration toolkit for a cryogenic
MEMS-mirror beam-steering system."""

from .calibration import (
    BlobSet,
    IntensityImage,
    MappingModel,
    detect_holes,
    distortion_metrics,
    fit_mapping,
    fit_spot,
    invert_mapping,
)
from .config import SystemConfig, default_config, load_config
from .device import BackgroundModel, MaskPattern, MkidParams, delta_s21, s21_magnitude
from .instrument import Instrument, NoiseModel
from .optics import BeamSpot, OpticalLayout, SpotModelConfig, aperture_power, default_layout, scan_extent, trace_to_device
from .scanning import ResponseMap, ScanPlan, execute, load_map, plan_grid, plan_line, repeatability, save_map
from .steering import (
    DriveVoltages,
    ElectricalConfig,
    MirrorPose,
    MirrorState,
    VoltageCoord,
    drive_to_tilt,
    normalized_to_drive,
    power_report,
    step_mirror,
)

__version__ = "0.1.0"
