from __future__ import annotations

"""
Разбор файла сцены (key = value) и описания сетки параметров для sweep.
Функции не делают численной работы и тестируются отдельно от CLI.
"""

import itertools
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Final, List, Optional, Sequence, Tuple

import numpy as np

from Errors import ConfigError, SibfError
from Simulation import MixingScenario, random_geometry
from SourceModel import DEFAULT_BS, BsLaplacianConfig, SourceModelConfig, TvGaussianConfig
from Stft import StftParams

SCENE_DEFAULTS: Final[Dict[str, str]] = {
    "num_sources": "2",
    "channels": "4",
    "noise": "0.003",
    "seed": "0",
    "sample_rate": "16000",
    "duration": "2.0",
    "ref_mic": "0",
    "fft_size": "1024",
    "hop": "256",
    "spread": "8",
}
SCENE_KEYS: Final[frozenset] = frozenset(SCENE_DEFAULTS) | {"sources", "gains", "delays"}
# "+" before a model prefix; keeps exponents such as 1e+4 intact
BLOCK_SEPARATOR: Final = re.compile(r"\+(?=\s*[a-z]+\s*:)")


@dataclass(frozen=True)
class SceneSetup:
    scenario: MixingScenario
    source_paths: Tuple[Path, ...]
    ref_mic: int
    params: StftParams


def parse_key_values(text: str) -> Dict[str, str]:
    """Parse `key = value` lines; `#` starts a comment."""
    values: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCENE_KEYS:
            raise ConfigError(f"line {number}: unknown key {key!r}")
        values[key] = value
    return values


def parse_matrix(text: str, name: str, cast=float) -> np.ndarray:
    """`a,b,c; d,e,f` -> one row per source, one column per channel."""
    try:
        rows = [[cast(v) for v in group.split(",")] for group in text.split(";") if group.strip()]
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r}") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{name}: every source needs the same number of channels")
    return np.array(rows)


def _number(values: Dict[str, str], key: str, cast):
    try:
        return cast(values[key])
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {values[key]!r}") from None


def scene_from_text(text: str, base_dir: Path = Path(".")) -> SceneSetup:
    values = parse_key_values(text)
    for key, default in SCENE_DEFAULTS.items():
        values.setdefault(key, default)

    source_paths = tuple(
        (base_dir / p.strip()) for p in values.get("sources", "").split(",") if p.strip()
    )
    num_sources = len(source_paths) or _number(values, "num_sources", int)
    num_channels = _number(values, "channels", int)
    seed = _number(values, "seed", int)
    sample_rate = _number(values, "sample_rate", int)
    params = StftParams(_number(values, "fft_size", int), _number(values, "hop", int))

    if "gains" in values or "delays" in values:
        gains = parse_matrix(values["gains"], "gains") if "gains" in values else None
        delays = parse_matrix(values["delays"], "delays", int) if "delays" in values else None
        shape = (gains if gains is not None else delays).shape
        gains = np.ones(shape) if gains is None else gains
        delays = np.zeros(shape, dtype=int) if delays is None else delays
    else:
        gains, delays = random_geometry(num_sources, num_channels, seed, _number(values, "spread", int))
    if gains.shape[0] != num_sources:
        raise ConfigError(f"gains/delays describe {gains.shape[0]} sources, scene has {num_sources}")

    ref_mic = _number(values, "ref_mic", int)
    if not 0 <= ref_mic < gains.shape[1]:
        raise ConfigError(f"ref_mic {ref_mic} out of range for {gains.shape[1]} channels")
    try:
        scenario = MixingScenario(
            gains,
            delays,
            noise_level=_number(values, "noise", float),
            seed=seed,
            max_delay=params.fft_size // 4,
            sample_rate=sample_rate,
            num_samples=int(round(_number(values, "duration", float) * sample_rate)),
        )
    except SibfError as exc:
        raise ConfigError(str(exc)) from exc
    return SceneSetup(scenario, source_paths, ref_mic, params)


def load_scene(path: Path) -> SceneSetup:
    path = Path(path)
    if not path.is_file():
        raise SibfError(f"{path}: scene file not found")
    return scene_from_text(path.read_text(encoding="utf-8"), path.parent)


def _values(text: str, cast, key: str) -> List:
    try:
        items = [cast(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse {key}={text!r}") from None
    if not items:
        raise ConfigError(f"{key} has no values")
    return items


def _parse_block(block: str) -> List[SourceModelConfig]:
    model, sep, body = block.partition(":")
    model = model.strip()
    if not sep:
        raise ConfigError(f"grid: block {block!r} lacks 'model:' prefix")
    settings: Dict[str, str] = {}
    for item in filter(None, (part.strip() for part in body.split(";"))):
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"grid: expected key=values, got {item!r}")
        settings[key.strip()] = value

    if model == "tv":
        unknown = set(settings) - {"beta"}
        if unknown:
            raise ConfigError(f"grid: unknown tv keys {sorted(unknown)}")
        betas = _values(settings.get("beta", "8"), float, "beta")
        return [TvGaussianConfig(beta=b) for b in betas]
    if model == "bs":
        unknown = set(settings) - {"alpha", "iterations", "tol"}
        if unknown:
            raise ConfigError(f"grid: unknown bs keys {sorted(unknown)}")
        alphas = _values(settings.get("alpha", str(DEFAULT_BS.alpha)), float, "alpha")
        counts = _values(settings.get("iterations", str(DEFAULT_BS.iterations)), int, "iterations")
        tol = _values(settings.get("tol", "0"), float, "tol")[0]
        return [BsLaplacianConfig(a, k, tol) for a, k in itertools.product(alphas, counts)]
    raise ConfigError(f"grid: unknown model {model!r}")


def parse_grid(texts: Sequence[str]) -> List[SourceModelConfig]:
    """Blocks like `tv:beta=0.5,1,8` or `bs:alpha=0.01,100;iterations=1,10`, separated by `+`."""
    blocks = [b.strip() for text in texts for b in BLOCK_SEPARATOR.split(text) if b.strip()]
    if not blocks:
        raise ConfigError("grid is empty")
    grid: List[SourceModelConfig] = []
    for block in blocks:
        grid.extend(_parse_block(block))
    return grid


def parse_levels(text: Optional[str]) -> List[float]:
    if text is None:
        return [0.0]
    levels = _values(text, float, "levels")
    if any(not level >= 0 for level in levels):
        raise ConfigError(f"levels must be >= 0, got {text!r}")
    return levels
