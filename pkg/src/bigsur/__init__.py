"""Scientific metadata kernel: typed catalog, lineage, processing queue, federation."""

from .catalog import Catalog, OutputSpec
from .errors import BigSurError
from .federation import Federation, MetadataBundle, Selection
from .lineage import ConversionPlan, Lineage, ProvenanceGraph
from .model import EntityId, classify_record, validate_record
from .query import QueryEngine, ResultSet
from .scheduler import Scheduler
from .store import Store
from .workspace import FeatureConfig, Workspace

__version__ = "0.1.0"

__all__ = [
    "BigSurError", "Catalog", "ConversionPlan", "EntityId", "FeatureConfig", "Federation",
    "Lineage", "MetadataBundle", "OutputSpec", "ProvenanceGraph", "QueryEngine", "ResultSet",
    "Scheduler", "Selection", "Store", "Workspace", "classify_record", "validate_record",
]
