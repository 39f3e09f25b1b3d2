from __future__ import annotations

import argparse
import sys
from contextlib import ExitStack
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from loguru import logger

from AudioIO import MagnitudeMatrix, MultichannelWave, atomic_output, read_matrix, read_wav, write_matrix, write_wav
from Errors import ConfigError, DimensionError, SibfError
from Evaluation import run_sweep, si_sdr
from SceneConfig import load_scene, parse_grid, parse_levels, parse_matrix
from Sibf import extract
from Simulation import MixingScenario, oracle_reference, simulate_anechoic
from SourceModel import SourceModelConfig, make_config
from Stft import ComplexSpectrogram, StftParams, istft, stft

EXIT_OK = 0
EXIT_PROCESSING = 1
EXIT_USAGE = 2

LOG_FORMAT = "{time:HH:mm:ss} | {level: <7} | {message}"


@dataclass
class CliConfig:
	"""Validated command-line settings; built before any file is touched."""

	command: str
	params: StftParams = field(default_factory=StftParams)
	model: Optional[SourceModelConfig] = None
	ref_mic: int = 0
	seed: int = 0
	bit_depth: int = 32
	input: Optional[Path] = None
	reference: Optional[Path] = None
	output: Optional[Path] = None
	sources: List[Path] = field(default_factory=list)
	gains: Optional[np.ndarray] = None
	delays: Optional[np.ndarray] = None
	noise: float = 0.0
	oracle_ref: Optional[Path] = None
	estimate: Optional[Path] = None
	target: Optional[Path] = None
	baseline: Optional[Path] = None
	channel: int = 0
	scene: Optional[Path] = None
	grid: List[SourceModelConfig] = field(default_factory=list)
	levels: List[float] = field(default_factory=lambda: [0.0])
	reference_rows: bool = False


class SibfCli:
	"""Command-line front end: extract, mix, eval and sweep."""

	def __init__(self) -> None:
		self.parser = self._create_parser()
		self._commands: Dict[str, Callable[[CliConfig], int]] = {
			"extract": self.cmd_extract,
			"mix": self.cmd_mix,
			"eval": self.cmd_eval,
			"sweep": self.cmd_sweep,
		}

	def _create_parser(self) -> argparse.ArgumentParser:
		parser = argparse.ArgumentParser(
			prog="sibf", description="Reference-guided target extraction from multichannel audio."
		)
		parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
		parser.add_argument("--debug", action="store_true", help="log internals to stderr")
		commands = parser.add_subparsers(dest="command", required=True)

		extract_parser = commands.add_parser("extract", help="extract the target from a multichannel WAV")
		extract_parser.add_argument("--input", required=True, type=Path)
		extract_parser.add_argument("--reference", required=True, type=Path, help="reference WAV or SIBFMAT file")
		extract_parser.add_argument("--output", required=True, type=Path)
		extract_parser.add_argument("--model", choices=["tv", "bs"], default="tv")
		extract_parser.add_argument("--beta", type=float)
		extract_parser.add_argument("--alpha", type=float)
		extract_parser.add_argument("--iterations", type=int)
		extract_parser.add_argument("--early-stop", type=float, dest="early_stop")
		extract_parser.add_argument("--ref-mic", type=int, default=0, dest="ref_mic")
		self._add_stft_arguments(extract_parser)
		self._add_bit_depth_argument(extract_parser)

		mix_parser = commands.add_parser("mix", help="mix sources into a simulated multichannel recording")
		mix_parser.add_argument("--sources", required=True, nargs="+", type=Path)
		mix_parser.add_argument("--gains", nargs="+", help="one comma-separated group per source")
		mix_parser.add_argument("--delays", nargs="+", help="one comma-separated group per source")
		mix_parser.add_argument("--channels", type=int)
		mix_parser.add_argument("--noise", type=float, default=0.0)
		mix_parser.add_argument("--seed", type=int, default=0)
		mix_parser.add_argument("--output", required=True, type=Path)
		mix_parser.add_argument("--oracle-ref", type=Path, dest="oracle_ref")
		self._add_stft_arguments(mix_parser)
		self._add_bit_depth_argument(mix_parser)

		eval_parser = commands.add_parser("eval", help="score an estimate against the clean target")
		eval_parser.add_argument("--estimate", required=True, type=Path)
		eval_parser.add_argument("--target", required=True, type=Path)
		eval_parser.add_argument("--baseline", type=Path)
		eval_parser.add_argument("--channel", type=int, default=0)

		sweep_parser = commands.add_parser("sweep", help="run a parameter sweep on a scene")
		sweep_parser.add_argument("--scene", required=True, type=Path)
		sweep_parser.add_argument("--grid", required=True, nargs="+")
		sweep_parser.add_argument("--levels", help="comma-separated degradation levels (default 0)")
		sweep_parser.add_argument("--reference-rows", action="store_true", dest="reference_rows")
		sweep_parser.add_argument("--out", required=True, type=Path)
		return parser

	@staticmethod
	def _add_stft_arguments(parser: argparse.ArgumentParser) -> None:
		parser.add_argument("--fft-size", type=int, default=1024, dest="fft_size")
		parser.add_argument("--hop", type=int, default=256)

	@staticmethod
	def _add_bit_depth_argument(parser: argparse.ArgumentParser) -> None:
		parser.add_argument("--bit-depth", type=int, choices=[16, 32], default=32, dest="bit_depth")

	def _configure_logging(self, args: argparse.Namespace) -> None:
		level = "DEBUG" if args.debug else "INFO" if args.verbose else "WARNING"
		logger.remove()
		# resolve sys.stderr per record so redirected streams are honoured
		logger.add(lambda message: sys.stderr.write(message), level=level, format=LOG_FORMAT)

	def _build_config(self, args: argparse.Namespace) -> CliConfig:
		config = CliConfig(command=args.command)
		if args.command in ("extract", "mix"):
			config.params = StftParams(args.fft_size, args.hop)
			config.bit_depth = args.bit_depth
			config.output = args.output

		if args.command == "extract":
			config.input, config.reference = args.input, args.reference
			config.model = make_config(args.model, args.beta, args.alpha, args.iterations, args.early_stop)
			if args.ref_mic < 0:
				raise ConfigError(f"--ref-mic must be >= 0, got {args.ref_mic}")
			config.ref_mic = args.ref_mic
		elif args.command == "mix":
			config.sources = list(args.sources)
			config.gains = parse_matrix(";".join(args.gains), "--gains") if args.gains else None
			config.delays = parse_matrix(";".join(args.delays), "--delays", int) if args.delays else None
			for name, matrix in (("--gains", config.gains), ("--delays", config.delays)):
				if matrix is not None and matrix.shape[0] != len(config.sources):
					raise ConfigError(f"{name} has {matrix.shape[0]} groups for {len(config.sources)} sources")
			if args.noise < 0:
				raise ConfigError(f"--noise must be >= 0, got {args.noise}")
			if args.channels is not None and args.channels < 1:
				raise ConfigError(f"--channels must be >= 1, got {args.channels}")
			config.noise, config.seed, config.oracle_ref = args.noise, args.seed, args.oracle_ref
			config.gains, config.delays = self._mixing_matrices(config, args.channels)
		elif args.command == "eval":
			config.estimate, config.target, config.baseline = args.estimate, args.target, args.baseline
			if args.channel < 0:
				raise ConfigError(f"--channel must be >= 0, got {args.channel}")
			config.channel = args.channel
		elif args.command == "sweep":
			config.scene, config.output = args.scene, args.out
			config.grid = parse_grid(args.grid)
			config.levels = parse_levels(args.levels)
			config.reference_rows = args.reference_rows
		return config

	@staticmethod
	def _mixing_matrices(config: CliConfig, channels: Optional[int]):
		"""Default gains are ones and delays zeros; the channel count comes from whichever is given."""
		shapes = {m.shape for m in (config.gains, config.delays) if m is not None}
		if len(shapes) > 1:
			raise ConfigError(f"--gains and --delays disagree on shape: {sorted(shapes)}")
		if shapes:
			shape = shapes.pop()
			if channels is not None and channels != shape[1]:
				raise ConfigError(f"--channels {channels} disagrees with {shape[1]} gain/delay columns")
		else:
			shape = (len(config.sources), channels or 1)
		gains = config.gains if config.gains is not None else np.ones(shape)
		delays = config.delays if config.delays is not None else np.zeros(shape, dtype=int)
		return gains, delays

	def run(self, argv: Optional[Sequence[str]] = None) -> int:
		try:
			args = self.parser.parse_args(argv)
		except SystemExit as exc:
			return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
		self._configure_logging(args)
		try:
			config = self._build_config(args)
			return self._commands[config.command](config)
		except ConfigError as exc:
			self.parser.print_usage(sys.stderr)
			print(f"sibf {args.command}: error: {exc}", file=sys.stderr)
			return EXIT_USAGE
		except (SibfError, OSError) as exc:
			print(f"sibf {args.command}: error: {exc}", file=sys.stderr)
			return EXIT_PROCESSING
		except Exception as exc:  # noqa: BLE001
			logger.exception("unexpected failure")
			print(f"sibf {args.command}: internal error: {exc}", file=sys.stderr)
			return EXIT_PROCESSING

	def _load_reference(self, path: Path, params: StftParams) -> MagnitudeMatrix:
		if path.suffix.lower() == ".wav":
			ref_wave = read_wav(path)
			return oracle_reference(MultichannelWave(ref_wave.sample_rate, ref_wave.data[:1]), params)
		return read_matrix(path)

	def cmd_extract(self, config: CliConfig) -> int:
		wave = read_wav(config.input)
		params = config.params
		x = stft(wave, params)
		reference = self._load_reference(config.reference, params)
		if (reference.num_freqs, reference.num_frames) != (x.num_freqs, x.num_frames):
			raise DimensionError(
				f"reference is {reference.num_freqs}x{reference.num_frames}, "
				f"input spectrogram is {x.num_freqs}x{x.num_frames}",
				stage="reference",
			)
		result = extract(x, reference, config.model, config.ref_mic)
		extracted = istft(ComplexSpectrogram(result.output[None]), params, wave.num_samples, wave.sample_rate)
		write_wav(extracted, config.output, config.bit_depth)
		print(f"{result.objective:.6f}")
		return EXIT_OK

	def cmd_mix(self, config: CliConfig) -> int:
		waves = [read_wav(path) for path in config.sources]
		rates = {w.sample_rate for w in waves}
		if len(rates) != 1:
			raise SibfError(f"sources have different sample rates: {sorted(rates)}")
		length = max(w.num_samples for w in waves)
		padded = []
		for path, w in zip(config.sources, waves):
			if w.num_channels != 1:
				logger.warning("{} has {} channels, using channel 0", path, w.num_channels)
			dry = np.zeros(length)
			dry[: w.num_samples] = w.channel(0)
			padded.append(MultichannelWave(w.sample_rate, dry))

		scenario = MixingScenario(
			config.gains,
			config.delays,
			noise_level=config.noise,
			seed=config.seed,
			max_delay=config.params.fft_size // 4,
			sample_rate=rates.pop(),
			num_samples=length,
		)
		mixture = simulate_anechoic(padded, scenario)
		oracle = oracle_reference(padded[0], config.params) if config.oracle_ref else None
		with ExitStack() as stack:
			mixture_tmp = stack.enter_context(atomic_output(config.output, suffix=".wav"))
			oracle_tmp = stack.enter_context(atomic_output(config.oracle_ref)) if oracle is not None else None
			write_wav(mixture, mixture_tmp, config.bit_depth)
			if oracle_tmp is not None:
				write_matrix(oracle, oracle_tmp)
		return EXIT_OK

	def cmd_eval(self, config: CliConfig) -> int:
		estimate = read_wav(config.estimate)
		target = read_wav(config.target)
		score = si_sdr(estimate, target)
		if config.baseline is None:
			print(f"{score:.6f}")
			return EXIT_OK
		baseline = read_wav(config.baseline)
		if config.channel >= baseline.num_channels:
			raise DimensionError(f"--channel {config.channel} out of range for {baseline.num_channels} channels")
		baseline_score = si_sdr(baseline.channel(config.channel), target)
		print(f"{score:.6f},{baseline_score:.6f},{score - baseline_score:.6f}")
		return EXIT_OK

	def cmd_sweep(self, config: CliConfig) -> int:
		setup = load_scene(config.scene)
		sources = [read_wav(path) for path in setup.source_paths] or None
		report = run_sweep(
			setup.scenario,
			config.grid,
			config.levels,
			params=setup.params,
			ref_mic=setup.ref_mic,
			sources=sources,
			include_reference=config.reference_rows,
		)
		report.write_csv(config.output)
		return EXIT_OK
