"""
Shared helper functions used by the services and the CLI commands
"""
import csv
from typing import Iterable, Optional

import numpy as np

from .constants import CONFIG_KEYS, CSV_HEADER, FALSE_STRINGS, TRUE_STRINGS
from .exceptions import InvalidArgumentError


def parse_int_list(raw) -> list:
    """'1,2, 4' -> [1, 2, 4]; lists pass through"""
    if isinstance(raw, (list, tuple)):
        return [int(v) for v in raw]
    items = [item.strip() for item in str(raw).replace(";", ",").split(",") if item.strip()]
    try:
        return [int(item) for item in items]
    except ValueError as exc:
        raise InvalidArgumentError(f"expected a comma separated list of integers, got {raw!r}") from exc


def parse_bool(raw) -> bool:
    if isinstance(raw, bool):
        return raw
    value = str(raw).strip().lower()
    if value in TRUE_STRINGS:
        return True
    if value in FALSE_STRINGS:
        return False
    raise InvalidArgumentError(f"expected a boolean, got {raw!r}")


def coerce_value(key: str, raw):
    """Type a raw config value by the schema in CONFIG_KEYS"""
    kind = CONFIG_KEYS.get(key.lower())
    if kind is None:
        raise InvalidArgumentError(f"unknown config key {key!r}")
    try:
        if kind == "int_list":
            return parse_int_list(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            return parse_bool(raw)
    except ValueError as exc:
        raise InvalidArgumentError(f"{key}: cannot read {raw!r} as {kind}") from exc
    return str(raw).strip()


def parse_key_value_file(handle) -> dict:
    """
    Loader for app.config.from_file: 'key = value' lines, '#' starts a
    comment. Keys are returned upper-cased with typed values.
    """
    values = {}
    for number, line in enumerate(handle, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgumentError(f"line {number}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        values[key.upper()] = coerce_value(key, raw)
    return values


def random_points_in_mesh(mesh, count: int, seed: int = 0) -> np.ndarray:
    """Uniformly drawn points inside randomly chosen tetrahedra of a mesh"""
    rng = np.random.default_rng(seed)
    tets = rng.integers(0, mesh.n_tets, size=count)
    barycentric = rng.dirichlet(np.ones(4), size=count)
    return np.einsum("pi,pic->pc", barycentric, mesh.vertices[mesh.tets[tets]])


def write_csv(rows: Iterable, path: str, header: Optional[list] = None) -> None:
    """Write StudyRow objects (or plain lists) with the study header"""
    with open(path, "w", newline="", encoding="ascii") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header or CSV_HEADER)
        for row in rows:
            writer.writerow(row.as_csv() if hasattr(row, "as_csv") else row)


def read_csv(path: str) -> list:
    """Rows of a study CSV as dicts of strings"""
    with open(path, newline="", encoding="ascii") as handle:
        return list(csv.DictReader(handle))
