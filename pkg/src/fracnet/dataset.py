"""The per-fracture feature table: schema, CSV interchange, and splits.

One row per (network, rate constant, fracture). The column order is fixed
and versioned; the rate constant is the leading feature column, followed by
the topological, geometric, and hydrological blocks, then the target
columns and the group keys.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DATASET_SCHEMA_VERSION = 1

KEY_COLUMNS = ["network_id", "fracture_id"]

TOPOLOGICAL_FEATURES = [
    "degree",
    "degree_centrality",
    "distance_to_backbone",
    "betweenness_centrality",
    "current_flow",
]
GEOMETRIC_FEATURES = [
    "surface_area",
    "total_volume",
    "projected_volume",
    "intersection_area",
]
HYDROLOGICAL_FEATURES = [
    "volumetric_flow_rate",
    "peclet",
    "damkohler_advective",
    "damkohler_diffusive",
]

FEATURE_COLUMNS = (["rate_constant"] + TOPOLOGICAL_FEATURES
                   + GEOMETRIC_FEATURES + HYDROLOGICAL_FEATURES)
TARGET_COLUMN = "remaining_fraction"
ALT_TARGET_COLUMN = "remaining_volume"
ALL_COLUMNS = KEY_COLUMNS + FEATURE_COLUMNS + [TARGET_COLUMN, ALT_TARGET_COLUMN]

#: Nested feature sets for the RF-1 / RF-2 / RF-3 models.
FEATURE_SETS = {
    "RF-1": ["rate_constant"] + TOPOLOGICAL_FEATURES,
    "RF-2": ["rate_constant"] + TOPOLOGICAL_FEATURES + GEOMETRIC_FEATURES,
    "RF-3": list(FEATURE_COLUMNS),
}


class SchemaError(ValueError):
    pass


@dataclass
class FeatureTable:
    """Column store over the fixed schema."""

    columns: dict[str, np.ndarray]

    def __post_init__(self):
        missing = [c for c in ALL_COLUMNS if c not in self.columns]
        if missing:
            raise SchemaError(f"missing columns: {missing}")
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise SchemaError("ragged columns")

    @property
    def n_rows(self) -> int:
        return len(self.columns[TARGET_COLUMN])

    def validate(self) -> None:
        """No missing/non-finite values; target within [0, 1]."""
        for name in FEATURE_COLUMNS + [TARGET_COLUMN, ALT_TARGET_COLUMN]:
            col = self.columns[name]
            if not np.all(np.isfinite(col)):
                raise SchemaError(f"non-finite values in column {name}")
        t = self.columns[TARGET_COLUMN]
        if np.any(t < 0) or np.any(t > 1):
            raise SchemaError("target outside [0, 1]")

    def matrix(self, feature_names: list[str]) -> np.ndarray:
        unknown = [f for f in feature_names if f not in self.columns]
        if unknown:
            raise SchemaError(f"unknown feature columns: {unknown}")
        return np.column_stack([self.columns[f] for f in feature_names])

    def target(self, name: str = TARGET_COLUMN) -> np.ndarray:
        return self.columns[name]

    def groups(self) -> np.ndarray:
        return self.columns["network_id"]

    def subset(self, mask: np.ndarray) -> "FeatureTable":
        return FeatureTable({k: v[mask] for k, v in self.columns.items()})

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(",".join(ALL_COLUMNS) + "\n")
            cols = [self.columns[c] for c in ALL_COLUMNS]
            for i in range(self.n_rows):
                cells = []
                for name, col in zip(ALL_COLUMNS, cols):
                    v = col[i]
                    if name in ("network_id", "fracture_id"):
                        cells.append(str(int(v)))
                    else:
                        cells.append(repr(float(v)))
                fh.write(",".join(cells) + "\n")

    @classmethod
    def from_rows(cls, rows: list[dict]) -> "FeatureTable":
        if not rows:
            raise SchemaError("no rows")
        cols = {name: np.array([row[name] for row in rows], dtype=np.float64)
                for name in ALL_COLUMNS}
        return cls(cols)

    @classmethod
    def from_csv(cls, path) -> "FeatureTable":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if header != ALL_COLUMNS:
                raise SchemaError(f"unexpected dataset header {header}")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        if data.size == 0:
            raise SchemaError("empty dataset")
        return cls({name: data[:, i] for i, name in enumerate(ALL_COLUMNS)})


def train_test_split(table: FeatureTable, train_fraction: float = 2.0 / 3.0,
                     seed: int = 0, by_network: bool = False
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Boolean (train, test) masks; fracture-level rows or whole networks."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n = table.n_rows
    train = np.zeros(n, dtype=bool)
    if by_network:
        nets = np.unique(table.groups())
        picked = rng.permutation(len(nets))[:int(round(train_fraction * len(nets)))]
        chosen = set(nets[picked].tolist())
        train = np.array([g in chosen for g in table.groups()])
    else:
        order = rng.permutation(n)
        train[order[:int(round(train_fraction * n))]] = True
    return train, ~train
