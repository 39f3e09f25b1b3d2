import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

from Errors import ConfigError


class SourceModel(str, Enum):
	TV_GAUSSIAN = "tv"
	BS_LAPLACIAN = "bs"


@dataclass(frozen=True)
class TvGaussianConfig:
	# Reference exponent; 8 gave the best scores in the beta sweep
	beta: float = 8.0

	def __post_init__(self) -> None:
		if not math.isfinite(self.beta) or self.beta < 0:
			raise ConfigError(f"beta must be finite and >= 0, got {self.beta}")

	@property
	def model(self) -> SourceModel:
		return SourceModel.TV_GAUSSIAN

	@property
	def param(self) -> float:
		return self.beta

	@property
	def iterations(self) -> int:
		return 1


@dataclass(frozen=True)
class BsLaplacianConfig:
	# Reference weight and iteration count of the recommended setting
	alpha: float = 100.0
	iterations: int = 10
	# Relative objective change that stops the iteration early; 0 disables it
	early_stop_tol: float = 0.0

	def __post_init__(self) -> None:
		if not math.isfinite(self.alpha) or self.alpha < 0:
			raise ConfigError(f"alpha must be finite and >= 0, got {self.alpha}")
		if int(self.iterations) != self.iterations or self.iterations < 1:
			raise ConfigError(f"iterations must be an integer >= 1, got {self.iterations}")
		if not math.isfinite(self.early_stop_tol) or self.early_stop_tol < 0:
			raise ConfigError(f"early_stop_tol must be finite and >= 0, got {self.early_stop_tol}")
		object.__setattr__(self, "iterations", int(self.iterations))

	@property
	def model(self) -> SourceModel:
		return SourceModel.BS_LAPLACIAN

	@property
	def param(self) -> float:
		return self.alpha


SourceModelConfig = Union[TvGaussianConfig, BsLaplacianConfig]

DEFAULT_TV = TvGaussianConfig()
DEFAULT_BS = BsLaplacianConfig()


def make_config(
	model: str,
	beta: Optional[float] = None,
	alpha: Optional[float] = None,
	iterations: Optional[int] = None,
	early_stop_tol: Optional[float] = None,
) -> SourceModelConfig:
	"""Build a model config, filling unset parameters from the defaults."""
	try:
		kind = SourceModel(model)
	except ValueError:
		raise ConfigError(f"unknown source model {model!r} (expected 'tv' or 'bs')") from None
	if kind is SourceModel.TV_GAUSSIAN:
		return TvGaussianConfig(beta=DEFAULT_TV.beta if beta is None else float(beta))
	return BsLaplacianConfig(
		alpha=DEFAULT_BS.alpha if alpha is None else float(alpha),
		iterations=DEFAULT_BS.iterations if iterations is None else iterations,
		early_stop_tol=DEFAULT_BS.early_stop_tol if early_stop_tol is None else float(early_stop_tol),
	)
