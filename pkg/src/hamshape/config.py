"""Run configuration: JSON schema, loading and validation.

A single JSON document drives every pipeline command. Paths may be
relative to the config file; the loader resolves them before anything
else runs, and validation happens before any work starts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .model import ModelParams

DEFAULT_SIMULATION = {
    "dt": 1e-3,
    "horizon": 5.0,
    "record_every": 1,
    "initial": {"phi": 0.1, "theta_l": 0.15, "theta_r": -0.05,
                "phi_rate": 0.0, "theta_l_rate": 0.0, "theta_r_rate": 0.0},
    "human_input": "zero",
    "human_amplitude": [1.0, 1.0],
    "human_frequency": [1.0, 1.3],
}

HUMAN_INPUT_KINDS = ("zero", "gravity_comp", "sinusoid")


@dataclass
class RunConfig:
    model_params: ModelParams
    dataset: Path | None
    dataset_schema: dict | None
    mode: str
    mirrored: bool
    custom_basis: list
    weights: dict
    lam: float
    solver_tol: float
    solver_max_iter: int
    resample_points: int
    stair_flexion_scale: float
    simulation: dict
    assist: dict
    emg: dict
    fit_result: Path | None
    seed: int
    out_dir: Path
    raw: dict = field(default_factory=dict)

    def echo(self) -> dict:
        """Reproducibility record embedded into result files."""
        return {
            "mode": self.mode,
            "mirrored": self.mirrored,
            "custom_basis": self.custom_basis,
            "weights": self.weights,
            "lambda": self.lam,
            "solver": {"tol": self.solver_tol, "max_iter": self.solver_max_iter},
            "resample_points": self.resample_points,
            "stair_flexion_scale": self.stair_flexion_scale,
            "seed": self.seed,
            "model_params": self.model_params.to_dict(),
        }


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _load_model_params(entry, base: Path) -> ModelParams:
    if entry is None:
        return ModelParams.from_anthropometry()
    if isinstance(entry, dict):
        try:
            return ModelParams.from_dict(entry)
        except ValueError as e:
            raise ConfigError(str(e)) from e
    path = (base / str(entry)).resolve() if not Path(str(entry)).is_absolute() \
        else Path(str(entry))
    _require(path.exists(), f"model params file {path} does not exist")
    try:
        return ModelParams.from_dict(json.loads(path.read_text()))
    except (json.JSONDecodeError, ValueError) as e:
        raise ConfigError(f"bad model params file {path}: {e}") from e


def _resolve_path(entry, base: Path, what: str, must_exist: bool = True):
    if entry is None:
        return None
    p = Path(str(entry))
    if not p.is_absolute():
        p = (base / p).resolve()
    _require(p.exists() or not must_exist, f"{what} {p} does not exist")
    return p


def parse_config(doc: dict, base_dir=".") -> RunConfig:
    """Validate a config document; raises ConfigError on any violation."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    base = Path(base_dir)

    mode = str(doc.get("mode", "wop")).lower()
    _require(mode in ("wop", "phi"), f"mode must be 'wop' or 'phi', got {mode!r}")

    lam = float(doc.get("lambda", 0.05))
    _require(lam >= 0, "lambda must be non-negative")

    solver = dict(doc.get("solver", {}))
    tol = float(solver.get("tol", 1e-8))
    max_iter = int(solver.get("max_iter", 50000))
    _require(tol > 0, "solver tol must be positive")
    _require(max_iter >= 1, "solver max_iter must be >= 1")

    n_pts = int(doc.get("resample_points", 150))
    _require(n_pts >= 2, "resample_points must be >= 2")

    stair = float(doc.get("stair_flexion_scale", 1.5))
    _require(stair >= 1.0, "stair_flexion_scale must be >= 1")

    sim = {**DEFAULT_SIMULATION, **dict(doc.get("simulation", {}))}
    sim["initial"] = {**DEFAULT_SIMULATION["initial"],
                      **dict(doc.get("simulation", {}).get("initial", {}))}
    _require(sim["dt"] > 0, "simulation dt must be positive")
    _require(sim["horizon"] > 0, "simulation horizon must be positive")
    _require(int(sim["record_every"]) >= 1, "record_every must be >= 1")
    _require(sim["human_input"] in HUMAN_INPUT_KINDS,
             f"human_input must be one of {HUMAN_INPUT_KINDS}")

    assist = dict(doc.get("assist", {}))
    assist.setdefault("mass", 80.0)
    assist.setdefault("loa", 0.4)
    assist.setdefault("saturation", 12.8)
    _require(assist["mass"] > 0, "assist mass must be positive")
    _require(0.0 <= assist["loa"] <= 1.0, "assist loa must lie in [0, 1]")
    _require(assist["saturation"] > 0, "assist saturation must be positive")

    weights = dict(doc.get("weights", {}))

    emg = dict(doc.get("emg", {}))
    for rec in emg.get("records", []):
        _require(isinstance(rec, dict), "emg records must be objects")
        for key in ("path", "events", "muscle", "mode", "task"):
            _require(key in rec, f"emg record missing field {key!r}")
        rec["path"] = str(_resolve_path(rec["path"], base, "EMG csv"))
        rec["events"] = str(_resolve_path(rec["events"], base, "EMG events file"))

    return RunConfig(
        model_params=_load_model_params(doc.get("model_params"), base),
        dataset=_resolve_path(doc.get("dataset"), base, "dataset directory"),
        dataset_schema=doc.get("dataset_schema"),
        mode=mode,
        mirrored=bool(doc.get("mirrored", True)),
        custom_basis=list(doc.get("custom_basis", [])),
        weights=weights,
        lam=lam,
        solver_tol=tol,
        solver_max_iter=max_iter,
        resample_points=n_pts,
        stair_flexion_scale=stair,
        simulation=sim,
        assist=assist,
        emg=emg,
        fit_result=_resolve_path(doc.get("fit_result"), base, "fit result file"),
        seed=int(doc.get("seed", 0)),
        out_dir=Path(doc.get("out_dir", "out")),
        raw=doc,
    )


def load_config(path, overrides: dict | None = None) -> dict:
    """Read a config JSON file, apply CLI overrides, return the document.

    The document is returned (not a RunConfig) so a thin client can ship
    it to the service; paths are made absolute relative to the file.
    """
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {p} is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    doc = dict(doc)
    for key, value in (overrides or {}).items():
        if value is not None:
            doc[key] = value
    # resolve paths client-side so an in-process or remote service agrees
    base = p.parent.resolve()
    for key in ("dataset", "fit_result"):
        if doc.get(key) is not None and not Path(str(doc[key])).is_absolute():
            doc[key] = str((base / str(doc[key])).resolve())
    mp = doc.get("model_params")
    if isinstance(mp, str) and not Path(mp).is_absolute():
        doc["model_params"] = str((base / mp).resolve())
    for rec in doc.get("emg", {}).get("records", []):
        for key in ("path", "events"):
            if isinstance(rec.get(key), str) and not Path(rec[key]).is_absolute():
                rec[key] = str((base / rec[key]).resolve())
    # sanity-parse once client-side for early, local error reporting
    parse_config(doc, base_dir=base)
    return doc
