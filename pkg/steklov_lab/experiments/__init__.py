from . import geometry_checks, spectra, transport
from .registry import ExperimentRegistry

pipelines = ExperimentRegistry()
pipelines.include(geometry_checks.registry)
pipelines.include(spectra.registry)
pipelines.include(transport.registry)
