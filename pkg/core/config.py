import functools
import json
import math
import os
from dataclasses import dataclass, field, fields

from core.logger import logger
from sio.errors import ConfigError

DEFAULT_GRID_CAP = 2 ** 24

EXPERIMENTS = (
    "metric-axioms",
    "kernel-axioms",
    "harmonic-decay",
    "hormander",
    "operator-bound",
    "commutator-bound",
    "vmo-localization",
    "series-reconstruction",
    "weights",
    "spaces-inequalities",
)


def _int_env(name: str, default: int) -> int:
    raw = os.getenv(name, "").strip()
    if not raw:
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got '{raw}'") from None
    if value < 1:
        raise ConfigError(f"{name} must be >= 1, got {value}")
    return value


@dataclass(frozen=True)
class Settings:
    threads: int
    grid_cap: int
    output_dir: str

    @classmethod
    def from_env(cls) -> "Settings":
        return cls(
            threads=_int_env("ANISO_SIO_THREADS", os.cpu_count() or 1),
            grid_cap=_int_env("ANISO_SIO_GRID_CAP", DEFAULT_GRID_CAP),
            output_dir=os.getenv("ANISO_SIO_OUTPUT_DIR", "reports"),
        )


@functools.lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Settings read once per process (after load_dotenv in main)."""
    return Settings.from_env()


@dataclass(frozen=True)
class GridSpec:
    lower: tuple[float, ...] = (-4.0, -4.0)
    upper: tuple[float, ...] = (4.0, 4.0)
    points: tuple[int, ...] = (65, 65)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "all"
    kernel: str = "CZ2"
    weight: str = "power(1)"
    exponents: tuple[float, ...] = (1.0, 1.0)
    grid: GridSpec = field(default_factory=GridSpec)
    p: float = 2.0
    eps_multipliers: tuple[float, ...] = (4.0, 8.0, 16.0)
    max_degree: int = 16
    radius_ratio: float = math.sqrt(2.0)
    seed: int = 0
    output: str = "report.json"

    def __post_init__(self):
        names = EXPERIMENTS + ("all",)
        if self.experiment not in names:
            raise ConfigError(f"unknown experiment '{self.experiment}', expected one of {list(names)}")
        if len(self.grid.lower) != len(self.exponents) or len(self.grid.upper) != len(self.exponents) \
                or len(self.grid.points) != len(self.exponents):
            raise ConfigError("grid lower/upper/points must have one entry per exponent")
        if not (1.0 < self.p < math.inf):
            raise ConfigError(f"p must lie in (1, inf), got {self.p}")
        if not self.eps_multipliers or min(self.eps_multipliers) < 2.0:
            raise ConfigError("eps_multipliers must be non-empty and >= 2 (resolvability)")
        if self.max_degree < 2:
            raise ConfigError(f"max_degree must be >= 2, got {self.max_degree}")
        if self.radius_ratio <= 1.0:
            raise ConfigError(f"radius_ratio must exceed 1, got {self.radius_ratio}")
        self._resolve_names()

    def _resolve_names(self):
        # Imported here: the library modules read get_settings() from this module
        from sio.errors import AnisoError
        from sio.kernel import builtin
        from sio.metric import AnisotropyProfile
        from sio.spaces import parse_weight

        try:
            k = builtin(self.kernel)
            AnisotropyProfile(tuple(self.exponents))
            parse_weight(self.weight)
        except AnisoError as e:
            raise ConfigError(f"invalid config: {e}") from e
        if k.n != len(self.exponents):
            raise ConfigError(f"kernel {self.kernel} lives in R^{k.n}, config has {len(self.exponents)} exponents")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {unknown}")
        kwargs = dict(data)
        try:
            if "grid" in kwargs:
                g = kwargs["grid"]
                extra = sorted(set(g) - {"lower", "upper", "points"})
                if extra:
                    raise ConfigError(f"unknown grid key(s): {extra}")
                kwargs["grid"] = GridSpec(
                    lower=tuple(float(v) for v in g.get("lower", GridSpec.lower)),
                    upper=tuple(float(v) for v in g.get("upper", GridSpec.upper)),
                    points=tuple(int(v) for v in g.get("points", GridSpec.points)),
                )
            for key in ("exponents", "eps_multipliers"):
                if key in kwargs:
                    kwargs[key] = tuple(float(v) for v in kwargs[key])
            for key in ("p", "radius_ratio"):
                if key in kwargs:
                    kwargs[key] = float(kwargs[key])
            for key in ("max_degree", "seed"):
                if key in kwargs:
                    kwargs[key] = int(kwargs[key])
        except (TypeError, ValueError) as e:
            raise ConfigError(f"malformed config value: {e}") from e
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        config = cls.from_dict(data)
        logger.info(f"Config: loaded {path} (experiment={config.experiment}, seed={config.seed})")
        return config

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "kernel": self.kernel,
            "weight": self.weight,
            "exponents": list(self.exponents),
            "grid": {"lower": list(self.grid.lower), "upper": list(self.grid.upper),
                     "points": list(self.grid.points)},
            "p": self.p,
            "eps_multipliers": list(self.eps_multipliers),
            "max_degree": self.max_degree,
            "radius_ratio": self.radius_ratio,
            "seed": self.seed,
            "output": self.output,
        }
