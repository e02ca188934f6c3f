from .loop import ControlLoop, FastPipeline, PipelineTick, run_session
from .scenario import Scenario, Segment, reference_scenario, save_scenario
from .log import write_session_log, read_session_log, SessionLog
from .service import (TelemetryServer, serve_loop, serve_replay, tick_payload)
from . import protocol

__all__ = [
    "ControlLoop", "FastPipeline", "PipelineTick", "run_session",
    "Scenario", "Segment", "reference_scenario", "save_scenario",
    "write_session_log", "read_session_log", "SessionLog",
    "TelemetryServer", "serve_loop", "serve_replay", "tick_payload",
    "protocol",
]
