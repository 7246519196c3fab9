"""Simulated distributed execution of PTD queries."""

from .engine import (
    MASTER, Cluster, QueryFailure, QueryMetrics, QueryResult, QueryTrace, assemble,
    build_trees, clamp_level, make_cluster, run_ptd, split, summaries_for,
)
from .jobs import (
    MapperOutput, ProtocolError, ReducerOutput, Worker, filtering_mapper, filtering_reducer,
    refinement_mapper,
)
from .wire import (
    CandidateEmission, CommLedger, PartialScoreEmission, Phase, ScoreReport, ThresholdBroadcast,
    WireError, decode, encode,
)

__all__ = [
    "MASTER", "Cluster", "QueryFailure", "QueryMetrics", "QueryResult", "QueryTrace", "assemble",
    "build_trees", "clamp_level", "make_cluster", "run_ptd", "split", "summaries_for",
    "MapperOutput", "ProtocolError", "ReducerOutput", "Worker", "filtering_mapper",
    "filtering_reducer", "refinement_mapper", "CandidateEmission", "CommLedger",
    "PartialScoreEmission", "Phase", "ScoreReport", "ThresholdBroadcast", "WireError",
    "decode", "encode",
]
