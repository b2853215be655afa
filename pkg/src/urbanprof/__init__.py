"""urbanprof: POI-derived activity profiles of city grid cells, spectral area
clustering, and statistical/supervised validation against mobile-phone
activity timelines."""

from .errors import ConfigError, DataError, NumericError, UrbanprofError
from .grid import GridSpec
from .poi import CATEGORIES, CategoryMapping, PoiRecord, default_mapping
from .profiles import ActivityProfileMatrix
from .spectral import ClusterModel, spectral_cluster

__version__ = "0.1.0"

__all__ = [
    "ActivityProfileMatrix",
    "CATEGORIES",
    "CategoryMapping",
    "ClusterModel",
    "ConfigError",
    "DataError",
    "GridSpec",
    "NumericError",
    "PoiRecord",
    "UrbanprofError",
    "default_mapping",
    "spectral_cluster",
    "__version__",
]
