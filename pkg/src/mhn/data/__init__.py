from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .features import FeatureReader, load_feature_map, read_features, write_features
from .records import QARecord, read_records, write_records
from .synthetic import SyntheticConfig, generate_synthetic

__all__ = ["FeatureReader", "QARecord", "SyntheticConfig", "generate_synthetic", "load_checkpoint",
           "load_feature_map", "read_checkpoint", "read_features", "read_records", "save_checkpoint",
           "write_features", "write_records"]
