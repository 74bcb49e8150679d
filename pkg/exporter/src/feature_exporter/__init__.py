"""Image-folder to feature-CSV exporter backed by a frozen vision backbone."""
from .exporter import FEATURE_WIDTH, ExportManifest, export

__version__ = "0.1.0"
__all__ = ["FEATURE_WIDTH", "ExportManifest", "export"]
