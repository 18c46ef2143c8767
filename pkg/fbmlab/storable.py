import json
from dataclasses import fields, is_dataclass
from enum import Enum
from typing import Any, Dict, Type, TypeVar

import numpy as np

_StorableType = TypeVar("_StorableType")


def plain(value: Any) -> Any:
    """Converts numpy values, enums, tuples and nested containers into JSON-ready python objects."""
    if isinstance(value, Enum):
        return value.value
    if is_dataclass(value) and not isinstance(value, type):
        return plain({f.name: getattr(value, f.name) for f in fields(value)})
    if isinstance(value, np.ndarray):
        return plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


class Storable:
    def to_record(self) -> Dict[str, Any]:
        if not is_dataclass(self):
            raise TypeError(f"{type(self).__name__} is not a dataclass")
        return plain({f.name: getattr(self, f.name) for f in fields(self)})

    def to_store(self) -> str:
        return json.dumps(self.to_record())

    @classmethod
    def from_record(cls: Type[_StorableType], record: Dict[str, Any]) -> _StorableType:
        return cls(**record)

    @classmethod
    def from_store(cls: Type[_StorableType], dump: str) -> _StorableType:
        return cls.from_record(json.loads(dump))
