"""Discrete-event simulator of in-switch file-system metadata caching."""

from .namespace import (MetaOp, MetadataRecord, NamespaceTree, NodeKind, OpKind, Path,
                        Principal, apply_op, is_ancestor, levels_of, parse_path)
from .sim import Metrics, SimConfig, preset, run, simulate
from .workload import WorkloadSpec

__all__ = ["MetaOp", "MetadataRecord", "NamespaceTree", "NodeKind", "OpKind", "Path",
           "Principal", "apply_op", "is_ancestor", "levels_of", "parse_path", "Metrics",
           "SimConfig", "preset", "run", "simulate", "WorkloadSpec"]
__version__ = "0.1.0"
