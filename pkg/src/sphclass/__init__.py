"""Point-cloud classification with spherical-harmonic convolutions.

Submodules
----------
geometry      point clouds, normalization and corruption generators
voxelizer     concentric-shell spherical voxel grids
sht           spherical harmonic transforms and F1/F2 descriptors
spectral_net  the spectral classifier, its training loop and checkpoints
datasets      primitive generator and directory-tree loader
bench         robustness sweeps, ablations and CSV result tables
"""
from .geometry import PointCloud, AugmentationConfig, augment, normalize_unit_ball
from .voxelizer import GridSpec, SphericalVoxelGrid, voxelize
from .sht import SHSpectrum, SphericalSignal, forward, inverse
from .spectral_net import NetConfig, TrainConfig, ModelParams, train, evaluate
from .datasets import LabeledDataset, generate_primitives, load_dataset, split

__version__ = "0.1.0"
