"""Run configuration: model constant tables, controller bounds, simulation settings.

All numerical constants of the model (anthropometry, contact law, muscle tables,
reflex circuit constants) live in a JSON configuration file so that every run is
reproducible from its config alone. A packaged default is shipped with the
library; see ``docs/model_constants.md`` for the provenance of the values.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Raised when a configuration file is missing keys or holds invalid values."""


_REQUIRED_TOP_KEYS = (
    "anthropometry",
    "gravity",
    "contact",
    "joints",
    "muscles",
    "controller",
    "initial_state",
    "simulation",
    "optimizer",
    "robustness",
)


@dataclass
class RunConfig:
    """Validated configuration tree plus run-level settings.

    The raw dictionaries are kept intact (the model and controller constructors
    consume them directly); this wrapper only guarantees presence and basic
    sanity of every referenced table.
    """

    data: dict[str, Any]
    source: str = "<default>"
    seed: int = 0
    out_dir: Path = field(default_factory=lambda: Path("runs"))

    def __getitem__(self, key: str) -> Any:
        return self.data[key]

    @property
    def simulation(self) -> dict[str, Any]:
        return self.data["simulation"]

    @property
    def controller(self) -> dict[str, Any]:
        return self.data["controller"]

    def copy(self) -> "RunConfig":
        return RunConfig(copy.deepcopy(self.data), self.source, self.seed, self.out_dir)


def default_config_dict() -> dict[str, Any]:
    """Return a deep copy of the packaged default configuration."""
    text = resources.files("nmwalk.data").joinpath("default_config.json").read_text()
    return json.loads(text)


def validate_config(data: dict[str, Any]) -> None:
    """Check structural completeness; raise ConfigError listing every missing key."""
    missing = [k for k in _REQUIRED_TOP_KEYS if k not in data]
    if missing:
        raise ConfigError("missing config keys: " + ", ".join(sorted(missing)))

    problems: list[str] = []
    anthro = data["anthropometry"]
    for table in ("masses", "lengths", "inertias", "com_offsets", "foot_points"):
        if table not in anthro:
            problems.append(f"anthropometry.{table}")
    for table in ("shared", "units"):
        if table not in data["muscles"]:
            problems.append(f"muscles.{table}")
    for table in ("params_default", "params_bounds", "delays"):
        if table not in data["controller"]:
            problems.append(f"controller.{table}")
    for key in ("control_dt", "sample_rate", "rtol", "atol", "max_step", "t_max"):
        if key not in data["simulation"]:
            problems.append(f"simulation.{key}")
    if problems:
        raise ConfigError("missing config keys: " + ", ".join(problems))

    if "masses" in anthro:
        for name, m in anthro["masses"].items():
            if not (m > 0):
                problems.append(f"anthropometry.masses.{name} must be > 0")
    if "lengths" in anthro:
        for name, l in anthro["lengths"].items():
            if not (l > 0):
                problems.append(f"anthropometry.lengths.{name} must be > 0")
    if problems:
        raise ConfigError("; ".join(problems))


def load_config(path: str | Path | None = None, *, seed: int = 0,
                out_dir: str | Path = "runs") -> RunConfig:
    """Load and validate a config file; ``None`` loads the packaged default."""
    if path is None:
        data = default_config_dict()
        source = "<default>"
    else:
        p = Path(path)
        try:
            data = json.loads(p.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {p}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {p} is not valid JSON: {e}") from None
        source = str(p)
    validate_config(data)
    return RunConfig(data, source=source, seed=seed, out_dir=Path(out_dir))
