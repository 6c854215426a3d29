from .presets import PRESETS, build_preset
from .registry import Registry, RegistryError
from .runner import StageError, generate_synthetic, read_reports, run_pipeline, run_stage
from .spec import PipelineSpec, SpecError, StageSpec, StopSpec, load, loads

__all__ = ["PRESETS", "build_preset", "Registry", "RegistryError", "StageError", "generate_synthetic",
           "read_reports", "run_pipeline", "run_stage", "PipelineSpec", "SpecError", "StageSpec",
           "StopSpec", "load", "loads"]
