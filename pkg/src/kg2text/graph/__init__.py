from .io import (
    DatasetError,
    build_instances,
    dump_graph,
    load_dataset,
    parse_graph_dump,
    parse_record,
    read_records,
    record_for,
    write_dataset,
)
from .model import (
    CANONICAL,
    FORWARD_KINDS,
    INVERSE,
    LEVI_OBJECT,
    LEVI_OBJECT_INV,
    LEVI_SUBJECT,
    LEVI_SUBJECT_INV,
    SELF,
    Edge,
    EntityGraph,
    IngestionError,
    Instance,
    Node,
    RelationVocab,
    TokenGraph,
    build_token_graph,
)
from .structure import (
    UNREACHABLE,
    StatsRow,
    bfs_distances,
    connected_components,
    diameter,
    distance_matrix,
    graph_stats,
)
from .synth import SynthSize, synth_corpus, verbalize, word_pool

__all__ = [
    "CANONICAL",
    "DatasetError",
    "Edge",
    "EntityGraph",
    "FORWARD_KINDS",
    "INVERSE",
    "IngestionError",
    "Instance",
    "LEVI_OBJECT",
    "LEVI_OBJECT_INV",
    "LEVI_SUBJECT",
    "LEVI_SUBJECT_INV",
    "Node",
    "RelationVocab",
    "SELF",
    "StatsRow",
    "SynthSize",
    "TokenGraph",
    "UNREACHABLE",
    "bfs_distances",
    "build_instances",
    "build_token_graph",
    "connected_components",
    "diameter",
    "distance_matrix",
    "dump_graph",
    "graph_stats",
    "load_dataset",
    "parse_graph_dump",
    "parse_record",
    "read_records",
    "record_for",
    "synth_corpus",
    "verbalize",
    "word_pool",
    "write_dataset",
]
