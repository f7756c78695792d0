"""Run configuration files.

A run configuration holds ``key = value`` lines under the ``[model]``,
``[train]`` and ``[data]`` sections, with ``#`` comments::

    [model]
    base_channels = 8
    upsampler = onsampling
    patch_size = 48,48,48

    [train]
    epochs = 200

Values are converted to the type of the matching dataclass field; tuples
are comma separated and ``none`` sets an optional value to None.
"""

import enum
import logging
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Type, Union

from .exceptions import ConfigError
from .model import ModelConfig
from .training.phantom import PhantomSpec
from .training.trainer import TrainConfig

log = logging.getLogger(__name__)

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def coerce(value: str, annotation: Any) -> Any:
    """Convert a raw string into a value of the annotated type."""
    value = value.strip()
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)

    if origin is Union:
        if value.lower() == "none" and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return coerce(value, inner[0])

    if origin in (tuple, Tuple):
        items = [item.strip() for item in value.split(",")]
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(coerce(item, args[0]) for item in items)
        if len(items) == 1 and len(args) > 1:
            items = items * len(args)
        if len(items) != len(args):
            raise ValueError(
                f"Expected {len(args)} comma separated values, got {value!r}"
            )
        return tuple(coerce(item, a) for item, a in zip(items, args))

    if annotation is bool:
        if value.lower() in _TRUE:
            return True
        if value.lower() in _FALSE:
            return False
        raise ValueError(f"Not a boolean: {value!r}")

    if isinstance(annotation, type) and issubclass(annotation, enum.Enum):
        return annotation(value)

    if annotation in (int, float, str):
        return annotation(value)

    raise ValueError(f"Unsupported field type {annotation}")


SECTIONS: Dict[str, Type] = {
    "model": ModelConfig,
    "train": TrainConfig,
    "data": PhantomSpec,
}


def _settable_fields(cls: Type) -> Dict[str, Any]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls) if f.init}


def _render(value: Any) -> str:
    if isinstance(value, enum.Enum):
        return str(value.value)
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: PhantomSpec = field(default_factory=PhantomSpec)

    def __post_init__(self):
        if self.model.num_classes != self.data.num_classes:
            raise ConfigError(
                f"Model predicts {self.model.num_classes} classes, "
                f"phantoms have {self.data.num_classes}"
            )

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        """Parse a configuration file; unknown names raise ConfigError."""
        values: Dict[str, Dict[str, Any]] = {name: {} for name in SECTIONS}
        section: Optional[str] = None

        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue

            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                if section not in SECTIONS:
                    raise ConfigError(f"Unknown section [{section}]", lineno)
                continue

            if section is None:
                raise ConfigError("Setting outside of a section", lineno)
            if "=" not in line:
                raise ConfigError(f"Expected 'key = value', got {line!r}", lineno)

            key, value = (part.strip() for part in line.split("=", 1))
            known = _settable_fields(SECTIONS[section])
            if key not in known:
                raise ConfigError(f"Unknown key {key!r} in [{section}]", lineno)
            try:
                values[section][key] = coerce(value, known[key])
            except ValueError as exc:
                raise ConfigError(f"Invalid value for {key}: {exc}", lineno) from exc

        return cls.build(values)

    @classmethod
    def build(cls, values: Dict[str, Dict[str, Any]]) -> "RunConfig":
        try:
            return cls(
                model=ModelConfig(**values.get("model", {})),
                train=TrainConfig(**values.get("train", {})),
                data=PhantomSpec(**values.get("data", {})),
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"Cannot read configuration {path}: {exc}") from exc
        return cls.parse(text)

    def override(self, section: str, key: str, value: Any) -> "RunConfig":
        """A copy with one setting replaced; strings are converted like file values."""
        if section not in SECTIONS:
            raise ConfigError(f"Unknown section [{section}]")
        known = _settable_fields(SECTIONS[section])
        if key not in known:
            raise ConfigError(f"Unknown key {key!r} in [{section}]")
        if isinstance(value, str):
            try:
                value = coerce(value, known[key])
            except ValueError as exc:
                raise ConfigError(f"Invalid value for {key}: {exc}") from exc
        try:
            updated = replace(getattr(self, section), **{key: value})
            return replace(self, **{section: updated})
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def dump(self) -> str:
        """The fully resolved configuration in the file format."""
        lines = []
        for name, cls in SECTIONS.items():
            lines.append(f"[{name}]")
            section = getattr(self, name)
            for key in _settable_fields(cls):
                lines.append(f"{key} = {_render(getattr(section, key))}")
            lines.append("")
        return "\n".join(lines)
