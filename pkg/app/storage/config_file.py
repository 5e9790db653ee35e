"""
System configuration files: JSON schema, parsing with located errors,
canonical dumps and bundled presets
"""
from __future__ import annotations

import json
import logging
import re
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.models import ReceiverKind
from app.services.degree import DegreeDistribution
from app.services.error_handler import CPRError, ConfigError
from app.services.evolution import SystemConfig
from app.services.receivers import ReceiverModel

logger = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).resolve().parent.parent / "presets"


# parameters each receiver kind requires; anything else is rejected
KIND_PARAMETERS: Dict[ReceiverKind, Tuple[str, ...]] = {
    ReceiverKind.SLOTTED_ALOHA: (),
    ReceiverKind.D_FOLD: ("D",),
    ReceiverKind.D_FOLD_WITH_ERRORS: ("D", "p_err"),
    ReceiverKind.RAYLEIGH_CAPTURE: ("gamma_db", "b_db"),
    ReceiverKind.COOPERATIVE_SA: (),
}


class ModelSchema(BaseModel):
    """Receiver kind plus exactly the parameters that kind takes"""

    model_config = ConfigDict(extra="forbid")

    kind: ReceiverKind
    D: Optional[int] = None
    p_err: Optional[float] = None
    gamma_db: Optional[float] = None
    b_db: Optional[float] = None

    @model_validator(mode="after")
    def check_parameters(self) -> "ModelSchema":
        wanted = KIND_PARAMETERS[self.kind]
        given = {name for name in self.model_fields_set if name != "kind"}
        missing = [name for name in wanted if name not in given or getattr(self, name) is None]
        if missing:
            raise ValueError(f"{self.kind.value} receiver needs {', '.join(missing)}")
        extra = sorted(given - set(wanted))
        if extra:
            raise ValueError(f"{', '.join(extra)} does not apply to a {self.kind.value} receiver")
        return self


class ReceiverSchema(BaseModel):
    model_config = ConfigDict(extra="forbid")

    fraction: float
    model: ModelSchema


class ClassSchema(BaseModel):
    model_config = ConfigDict(extra="forbid")

    label: Optional[str] = None
    degrees: Dict[str, float] = Field(min_length=1)


class ConfigSchema(BaseModel):
    """Top-level layout of a system configuration file"""

    model_config = ConfigDict(extra="forbid")

    name: str = ""
    classes: List[ClassSchema] = Field(min_length=1)
    receivers: List[ReceiverSchema] = Field(min_length=1)
    routing: List[List[float]]
    p_sic: float = 0.0
    p_era: float = 0.0


def _split_field(path: str) -> List[Union[str, int]]:
    """'classes[1].degrees' -> ['classes', 1, 'degrees']"""
    parts: List[Union[str, int]] = []
    for name, index in re.findall(r"([A-Za-z_][A-Za-z0-9_]*)|\[(\d+)\]", path):
        parts.append(name if name else int(index))
    return parts


def _format_loc(loc: Sequence[Union[str, int]]) -> str:
    out = ""
    for part in loc:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out


def _locate_line(text: str, loc: Sequence[Union[str, int]]) -> Optional[int]:
    """Best-effort line of the innermost key named in loc"""
    pos = 0
    found = False
    for part in loc:
        if isinstance(part, int):
            continue
        hit = text.find(f'"{part}"', pos)
        if hit < 0:
            break
        pos, found = hit, True
    return text.count("\n", 0, pos) + 1 if found else None


def _build_model(schema: ModelSchema, num_classes: int) -> ReceiverModel:
    if schema.kind == ReceiverKind.SLOTTED_ALOHA:
        return ReceiverModel.slotted_aloha(num_classes)
    if schema.kind == ReceiverKind.D_FOLD:
        return ReceiverModel.dfold(schema.D, num_classes)
    if schema.kind == ReceiverKind.D_FOLD_WITH_ERRORS:
        return ReceiverModel.dfold_with_errors(schema.D, schema.p_err, num_classes)
    if schema.kind == ReceiverKind.RAYLEIGH_CAPTURE:
        return ReceiverModel.rayleigh(schema.gamma_db, schema.b_db, num_classes)
    if num_classes != 2:
        raise ConfigError("the cooperative receiver pair needs exactly two user classes", field="classes")
    return ReceiverModel.cooperative()


def config_from_dict(data: Dict[str, Any], text: Optional[str] = None) -> SystemConfig:
    """Validate a decoded config document and build the SystemConfig"""

    def fail(message: str, field: Optional[str]) -> ConfigError:
        line = _locate_line(text, _split_field(field)) if (text and field) else None
        return ConfigError(message, field=field, line=line)

    try:
        schema = ConfigSchema.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise fail(first["msg"], _format_loc(first["loc"]) or None) from exc

    K = len(schema.classes)
    dists, labels = [], []
    for k, cls in enumerate(schema.classes):
        try:
            dists.append(DegreeDistribution.from_mapping(cls.degrees))
        except (CPRError, ValueError) as exc:
            raise fail(str(exc), f"classes[{k}].degrees") from exc
        labels.append(cls.label or f"class{k + 1}")

    models = []
    for j, receiver in enumerate(schema.receivers):
        try:
            models.append(_build_model(receiver.model, K))
        except ConfigError as exc:
            raise fail(exc.detail, f"receivers[{j}].model") from exc
        except CPRError as exc:
            raise fail(str(exc), f"receivers[{j}].model") from exc

    try:
        return SystemConfig(
            fractions=tuple(r.fraction for r in schema.receivers),
            routing=tuple(tuple(row) for row in schema.routing),
            dists=tuple(dists),
            models=tuple(models),
            p_sic=schema.p_sic,
            p_era=schema.p_era,
            name=schema.name,
            class_labels=tuple(labels),
        )
    except ConfigError as exc:
        raise fail(exc.detail, exc.field) from exc


def parse_config(path: Union[str, Path]) -> SystemConfig:
    """Read and validate a system configuration file"""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path.name} is not valid JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object", line=1)
    config = config_from_dict(data, text)
    if not config.name:
        config = config_from_dict({**data, "name": path.stem}, text)
    logger.debug(f"loaded {config.name}: K={config.K}, J={config.J}, digest {config.digest[:12]}")
    return config


def dump_config(config: SystemConfig) -> str:
    """Canonical JSON text of a configuration"""
    return json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n"


def config_digest(config: SystemConfig) -> str:
    return config.digest


def list_presets() -> List[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.json"))


def load_preset(name: str) -> SystemConfig:
    path = PRESET_DIR / f"{name}.json"
    if not path.exists():
        raise ConfigError(f"unknown preset '{name}'; available: {', '.join(list_presets())}", field="preset")
    return parse_config(path)


def resolve_config(path: Optional[str] = None, preset: Optional[str] = None) -> SystemConfig:
    """Exactly one of a config path or a preset name"""
    if bool(path) == bool(preset):
        raise ConfigError("give exactly one of --config or --preset")
    return parse_config(path) if path else load_preset(preset)
