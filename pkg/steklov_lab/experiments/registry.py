from typing import Callable

from ..errors import ConfigError
from ..schemas.run import RunConfig
from .context import ExperimentContext

Pipeline = Callable[[RunConfig, ExperimentContext], None]


class ExperimentRegistry:
    """Maps experiment names to pipelines; modules register with the `pipeline` decorator"""

    def __init__(self):
        self._pipelines: dict[str, Pipeline] = {}

    def pipeline(self, name: str) -> Callable[[Pipeline], Pipeline]:
        def register(func: Pipeline) -> Pipeline:
            if name in self._pipelines:
                raise ValueError(f"Experiment '{name}' registered twice")
            self._pipelines[name] = func
            return func

        return register

    def include(self, other: "ExperimentRegistry") -> None:
        for name, func in other._pipelines.items():
            self.pipeline(name)(func)

    def get(self, name: str) -> Pipeline:
        try:
            return self._pipelines[name]
        except KeyError:
            raise ConfigError(f"No pipeline for experiment '{name}'", key="experiment") from None

    @property
    def names(self) -> list[str]:
        return sorted(self._pipelines)
