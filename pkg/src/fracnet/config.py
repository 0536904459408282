"""Study configuration: flat key = value files, defaults, and hashing.

The config file format is one `key = value` assignment per line; `#` starts
a comment. Lists are comma-separated. Booleans accept true/false. A `none`
value maps to None (used by max_depth).
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, fields

PAPER_RATE_CONSTANTS = [1e-9, 1e-10, 1e-11, 1e-12]


@dataclass
class StudyConfig:
    # network generation
    side_length: float = 10.0
    radius: float = 1.5
    target_p32: float = 1.0
    aperture: float = 1e-5
    margin: float = 0.5
    n_networks: int = 40
    seed: int = 7

    # chemistry and permeability law
    rate_constants: list = field(default_factory=lambda: list(PAPER_RATE_CONSTANTS))
    quartz_density: float = 2650.0
    perm_a: float = 3.0
    perm_phi_c: float = 0.01
    perm_f_min: float = 1e-6
    n_prime: float = 0.0

    # simulation controls
    rate_constant: float | None = None   # single-simulation override
    horizon_years: float = 2e5
    qss_tol: float = 1e-4
    qss_window: int = 10
    dt_initial_years: float = 1.0
    dt_max_years: float = 1e4
    max_vo_loss: float = 0.05

    # learning
    split_fraction: float = 2.0 / 3.0
    split_by_network: bool = False
    forest_seed: int = 11
    importance_repeats: int = 5
    base_n_estimators: int = 10
    base_max_depth: int | None = None
    base_max_features: str = "all"
    base_min_samples_leaf: int = 2
    base_min_samples_split: int = 2
    opt_n_estimators: int = 200
    opt_max_depth: int | None = 30
    opt_max_features: str = "sqrt"
    opt_min_samples_leaf: int = 2
    opt_min_samples_split: int = 2
    run_grid_search: bool = False
    grid_n_estimators: list = field(default_factory=lambda: [50, 100, 200])
    grid_max_depth: list = field(default_factory=lambda: [None, 30])
    grid_max_features: list = field(default_factory=lambda: ["all", "sqrt", "log2"])
    grid_min_samples_leaf: list = field(default_factory=lambda: [2])
    grid_min_samples_split: list = field(default_factory=lambda: [2])
    grid_folds: int = 3
    save_models: bool = False
    dump_graphs: bool = False

    # execution
    output_dir: str = "fracnet_out"
    workers: int = 0                     # 0 -> os.cpu_count()

    def effective_workers(self) -> int:
        env = os.environ.get("FRACNET_WORKERS")
        if env:
            return max(1, int(env))
        if self.workers > 0:
            return self.workers
        return max(1, os.cpu_count() or 1)

    def effective_output_dir(self) -> str:
        return os.environ.get("FRACNET_OUT", self.output_dir)

    def canonical_text(self) -> str:
        """Deterministic serialization of everything that affects results.

        Execution-only settings (output_dir, workers) are excluded so moving
        or re-parallelizing a study does not invalidate its artifacts.
        """
        skip = {"output_dir", "workers"}
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            if f.name in skip:
                continue
            v = getattr(self, f.name)
            if isinstance(v, list):
                text = ",".join(_fmt(x) for x in v)
            else:
                text = _fmt(v)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_scalar(text: str):
    t = text.strip()
    low = t.lower()
    if low == "none":
        return None
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        pass
    return t


def parse_config_text(text: str, base: StudyConfig | None = None) -> StudyConfig:
    cfg = base or StudyConfig()
    known = {f.name: f for f in fields(StudyConfig)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in known:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        current = getattr(cfg, key)
        if isinstance(current, list) or key.startswith("grid_") \
                or key == "rate_constants":
            parsed = [_parse_scalar(p) for p in value.split(",") if p.strip()]
        else:
            parsed = _parse_scalar(value)
        setattr(cfg, key, parsed)
    _validate(cfg)
    return cfg


def load_config(path, base: StudyConfig | None = None) -> StudyConfig:
    with open(path) as fh:
        return parse_config_text(fh.read(), base)


def _validate(cfg: StudyConfig) -> None:
    if not cfg.rate_constants:
        raise ValueError("rate_constants must be non-empty")
    if cfg.n_networks < 1:
        raise ValueError("n_networks must be >= 1")
    if not 0 < cfg.split_fraction < 1:
        raise ValueError("split_fraction must be in (0, 1)")
    for name in ("base_min_samples_split", "opt_min_samples_split"):
        if getattr(cfg, name) < 2:
            import warnings
            warnings.warn(f"{name} < 2 is unusable (a split needs two "
                          "samples); clamping to 2")
            setattr(cfg, name, 2)
