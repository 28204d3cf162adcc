"""Arbitrary-scale point cloud upsampling by projecting voxel seeds onto an implicit surface."""
from .geometry import GeometryError, KnnIndex, NormalizationFrame, PointCloud, denormalize_cloud, normalize_cloud
from .pipeline import PipelineConfig, upsample
from .projection import AnalyticEstimator, LearnedEstimator, project_all
from .seeding import SeedBand, sample_seeds

__all__ = [
    "AnalyticEstimator",
    "GeometryError",
    "KnnIndex",
    "LearnedEstimator",
    "NormalizationFrame",
    "PipelineConfig",
    "PointCloud",
    "SeedBand",
    "denormalize_cloud",
    "normalize_cloud",
    "project_all",
    "sample_seeds",
    "upsample",
]
