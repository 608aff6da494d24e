"""Flat `section.key = value` run configuration files.

One line per setting, full-line comments with `#`, namespaced keys
(for example `env.delta = 0.04`). A section maps onto one of the
component dataclasses, so every knob is validated by the class it
configures. The same seed and file always describe the same run.
"""

from dataclasses import dataclass, fields

from .cloth import ParameterError
from .env import EpisodeConfig
from .randomize import ParamRanges
from .sac import MODES, LearnerConfig, TrainSchedule

CONFIG_HEADER = "# run configuration v1"


@dataclass(frozen=True)
class RunConfig:
    """Everything one command needs: seed, mode, component configs, paths."""

    seed: int = 0
    mode: str = "fixed"
    schedule: TrainSchedule = TrainSchedule()
    env: EpisodeConfig = EpisodeConfig()
    learner: LearnerConfig = LearnerConfig()
    ranges: ParamRanges = ParamRanges()
    identify_candidates: int = 200
    identify_m: int = 20
    include_reference: bool = True
    pool_path: str | None = None
    demo_paths: tuple = ()
    out_dir: str = "out"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.identify_candidates < 1 or self.identify_m < 1:
            raise ParameterError("identify.candidates and identify.top_m "
                                 "must be positive")
        object.__setattr__(self, "demo_paths", tuple(self.demo_paths))


def _parse_value(raw: str, default, where: str):
    """Convert a raw string by the type of the field's default value."""
    try:
        if default is None:
            return None if raw.lower() == "none" else float(raw)
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false"):
                raise ValueError(f"expected true/false, got {raw!r}")
            return raw.lower() == "true"
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = raw.replace(",", " ").split()
            conv = int if (default and isinstance(default[0], int)) else float
            return tuple(conv(p) for p in parts)
    except ValueError as err:
        raise ParameterError(f"{where}: {err}") from err
    return raw


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return " ".join(_format_value(v) for v in value)
    return str(value)


def parse_flat_config(text: str) -> dict:
    """`section.key = value` lines to a {(section, key): raw string} map."""
    mapping = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParameterError(f"line {lineno}: expected 'section.key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        section, dot, name = key.partition(".")
        if not dot or not section or not name:
            raise ParameterError(f"line {lineno}: key {key!r} is not namespaced")
        if (section, name) in mapping:
            raise ParameterError(f"line {lineno}: duplicate key {key!r}")
        mapping[(section, name)] = value
    return mapping


_SECTION_CLASSES = {"schedule": TrainSchedule, "env": EpisodeConfig,
                    "learner": LearnerConfig, "ranges": ParamRanges}
_RUN_KEYS = {"seed": 0, "mode": "fixed"}
_IDENTIFY_KEYS = {"candidates": 200, "top_m": 20, "include_reference": True}


def run_config_from_text(text: str) -> RunConfig:
    mapping = parse_flat_config(text)
    sections = {}
    for (section, name), raw in mapping.items():
        sections.setdefault(section, {})[name] = raw

    kwargs = {}
    for section, cls in _SECTION_CLASSES.items():
        raw_items = sections.pop(section, {})
        defaults = {f.name: f.default for f in fields(cls)}
        cls_kwargs = {}
        for name, raw in raw_items.items():
            if name not in defaults:
                raise ParameterError(f"unknown key {section}.{name}")
            cls_kwargs[name] = _parse_value(raw, defaults[name],
                                            f"{section}.{name}")
        kwargs[section] = cls(**cls_kwargs)

    for name, raw in sections.pop("run", {}).items():
        if name not in _RUN_KEYS:
            raise ParameterError(f"unknown key run.{name}")
        kwargs[name] = _parse_value(raw, _RUN_KEYS[name], f"run.{name}")

    for name, raw in sections.pop("identify", {}).items():
        if name not in _IDENTIFY_KEYS:
            raise ParameterError(f"unknown key identify.{name}")
        field = {"candidates": "identify_candidates", "top_m": "identify_m",
                 "include_reference": "include_reference"}[name]
        kwargs[field] = _parse_value(raw, _IDENTIFY_KEYS[name],
                                     f"identify.{name}")

    paths = sections.pop("paths", {})
    for name in paths:
        if name not in ("pool", "demos", "out"):
            raise ParameterError(f"unknown key paths.{name}")
    if "pool" in paths:
        kwargs["pool_path"] = paths["pool"]
    if "demos" in paths:
        kwargs["demo_paths"] = tuple(
            p.strip() for p in paths["demos"].split(",") if p.strip())
    if "out" in paths:
        kwargs["out_dir"] = paths["out"]

    if sections:
        raise ParameterError(f"unknown sections: {sorted(sections)}")
    return RunConfig(**kwargs)


def load_run_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return run_config_from_text(fh.read())


def format_run_config(config: RunConfig) -> str:
    """The full configuration as parseable text; round-trips exactly."""
    lines = [CONFIG_HEADER,
             f"run.seed = {config.seed}",
             f"run.mode = {config.mode}"]
    for section, obj in (("schedule", config.schedule), ("env", config.env),
                         ("learner", config.learner), ("ranges", config.ranges)):
        for f in fields(obj):
            lines.append(f"{section}.{f.name} = "
                         f"{_format_value(getattr(obj, f.name))}")
    lines.append(f"identify.candidates = {config.identify_candidates}")
    lines.append(f"identify.top_m = {config.identify_m}")
    lines.append("identify.include_reference = "
                 f"{_format_value(config.include_reference)}")
    if config.pool_path is not None:
        lines.append(f"paths.pool = {config.pool_path}")
    if config.demo_paths:
        lines.append(f"paths.demos = {', '.join(config.demo_paths)}")
    lines.append(f"paths.out = {config.out_dir}")
    return "\n".join(lines) + "\n"


def save_run_config(config: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_run_config(config))
