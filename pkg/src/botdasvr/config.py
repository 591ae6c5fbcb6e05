"""Declarative run configuration.

A YAML file holds any subset of the sections below; omitted keys keep their
defaults and command-line flags override the file.  Keys are addressed as
``section.field`` (e.g. ``svr.C``, ``datapath.unroll``).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from . import baselines, datapath, engine, harness, spectra, svr


class ConfigFileError(ValueError):
    pass


@dataclass
class GridSection:
    start_ghz: float = 10.78
    step_mhz: float = 1.0
    count: int = 220


@dataclass
class CalibrationSection:
    bfs_at_0c_ghz: float = 10.855
    coeff_mhz_per_c: float = 1.0


@dataclass
class TrainingSection:
    t_min: float = 0.0
    t_max: float = 70.0
    t_step: float = 0.5
    lw_min: float = 30.0
    lw_max: float = 100.0
    lw_step: float = 2.0


@dataclass
class SvrSection:
    C: float = 0.1
    epsilon: float = 1.5
    tol: float = 1e-3
    max_iter: int = 1_000_000
    selection: str = "max-violating"


@dataclass
class SvcSection:
    C: float = 0.1
    tol: float = 1e-3
    full_scale: bool = False


@dataclass
class InferenceSection:
    unroll: int = 284
    batch: int = 40
    reduction: str = engine.PAIRWISE
    workers: int = 1


@dataclass
class DatapathSection:
    n_sv: int = datapath.REFERENCE_N_SV
    n_feat: int = datapath.REFERENCE_N_FEAT
    unroll: int = 284
    batch: int = 40
    adder_latency: int = datapath.DEFAULT_ADDER_LATENCY
    clock_mhz: float = 200.0
    board: str = "zcu104"
    batch_overhead_cycles: float = 0.0
    n_bgs: int = 96100


@dataclass
class FiberSection:
    length_m: float = 38440.0
    spacing_m: float = 0.4
    heated_start_m: float = 38040.0
    heated_end_m: float = 38440.0
    heated_c: float = 50.0
    ambient_c: float = 25.0
    linewidth_mhz: float = 60.0
    thin: int = 10


@dataclass
class AcquisitionSection:
    n: float = 1.5
    n_avg: int = 32
    t_switch_s: float = 0.0
    n_freq: int = 221
    sample_rate_msps: float = 250.0


@dataclass
class ExperimentSection:
    snrs: list = field(default_factory=lambda: list(harness.SNR_SWEEP_DB))
    seed: int = 0
    methods: list = field(default_factory=lambda: ["svr", "svc"])


@dataclass
class Config:
    grid: GridSection = field(default_factory=GridSection)
    calibration: CalibrationSection = field(default_factory=CalibrationSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    svr: SvrSection = field(default_factory=SvrSection)
    svc: SvcSection = field(default_factory=SvcSection)
    inference: InferenceSection = field(default_factory=InferenceSection)
    datapath: DatapathSection = field(default_factory=DatapathSection)
    fiber: FiberSection = field(default_factory=FiberSection)
    acquisition: AcquisitionSection = field(default_factory=AcquisitionSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)

    # -- typed views ----------------------------------------------------------

    def frequency_grid(self) -> spectra.FrequencyGrid:
        g = self.grid
        return spectra.FrequencyGrid(g.start_ghz, g.step_mhz, g.count)

    def temperature_calibration(self) -> spectra.TemperatureCalibration:
        return spectra.TemperatureCalibration(self.calibration.bfs_at_0c_ghz, self.calibration.coeff_mhz_per_c)

    def training_set(self) -> spectra.TrainingSet:
        t = self.training
        return spectra.generate_training_set(
            self.frequency_grid(),
            self.temperature_calibration(),
            (t.t_min, t.t_max, t.t_step),
            (t.lw_min, t.lw_max, t.lw_step),
        )

    def svr_hyperparams(self) -> svr.SvrHyperparams:
        return svr.SvrHyperparams(**asdict(self.svr))

    def svc_label_step(self):
        return None if self.svc.full_scale else baselines.DESK_LABEL_STEP

    def tile(self) -> engine.TileSpec:
        return engine.TileSpec(self.inference.unroll, self.inference.reduction)

    def datapath_config(self) -> datapath.DatapathConfig:
        d = asdict(self.datapath)
        d.pop("n_bgs")
        return datapath.DatapathConfig(**d)

    def fiber_profile(self, thin: int | None = None) -> harness.FiberProfile:
        f = self.fiber
        fp = harness.FiberProfile(
            f.length_m,
            f.spacing_m,
            ((f.heated_start_m, f.heated_end_m, f.heated_c),),
            f.ambient_c,
            f.linewidth_mhz,
        )
        thin = f.thin if thin is None else thin
        return fp.thinned(thin) if thin > 1 else fp

    def acquisition_config(self, n_avg: int | None = None) -> harness.AcquisitionConfig:
        a = self.acquisition
        return harness.AcquisitionConfig(
            self.fiber.length_m, a.n, a.n_avg if n_avg is None else n_avg, a.t_switch_s, a.n_freq, a.sample_rate_msps
        )


def _coerce(current: Any, value: Any, key: str):
    if isinstance(current, bool):
        if isinstance(value, str):
            return value.lower() in ("1", "true", "yes", "on")
        return bool(value)
    if isinstance(current, int) and not isinstance(value, bool):
        if isinstance(value, float) and value != int(value):
            raise ConfigFileError(f"{key} must be an integer, got {value}")
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, list):
        return list(value) if isinstance(value, (list, tuple)) else [value]
    return value


def apply(cfg: Config, overrides: dict) -> Config:
    """Return a copy with ``{"section.field": value}`` overrides applied."""
    sections = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for key, value in overrides.items():
        try:
            sec_name, name = key.split(".", 1)
        except ValueError:
            raise ConfigFileError(f"config key {key!r} must look like section.field") from None
        if sec_name not in sections:
            raise ConfigFileError(f"unknown config section {sec_name!r}")
        sec = sections[sec_name]
        if name not in {f.name for f in fields(sec)}:
            raise ConfigFileError(f"unknown config key {key!r}")
        try:
            sections[sec_name] = replace(sec, **{name: _coerce(getattr(sec, name), value, key)})
        except (TypeError, ValueError) as e:
            raise ConfigFileError(f"bad value for {key}: {e}") from None
    return Config(**sections)


def flatten(doc: dict) -> dict:
    if not isinstance(doc, dict):
        raise ConfigFileError("config file must be a mapping of sections")
    out = {}
    for sec, body in doc.items():
        if not isinstance(body, dict):
            raise ConfigFileError(f"section {sec!r} must be a mapping")
        for k, v in body.items():
            out[f"{sec}.{k}"] = v
    return out


def load(path=None, overrides: dict | None = None) -> Config:
    cfg = Config()
    if path is not None:
        text = Path(path).read_text()
        try:
            doc = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            raise ConfigFileError(f"{path}: {e}") from None
        cfg = apply(cfg, flatten(doc))
    return apply(cfg, overrides or {})


def dump(cfg: Config) -> str:
    return yaml.safe_dump(asdict(cfg), sort_keys=False)
