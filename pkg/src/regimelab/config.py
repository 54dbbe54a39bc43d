"""Run configuration: one optional TOML file drives every subcommand.

Sections: [run] [simulate] [dataset] [model] [train.sft] [train.rm]
[train.rlmf] [deploy] [deploy.updates] [ig] [eval]. Every key has a default,
so an empty (or absent) file is a complete configuration. Unknown keys
anywhere are rejected with their full dotted path; so are values of the
wrong type. Stage seeds are not configurable per section: everything derives
from the single [run] seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields as dc_fields

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python 3.10
    import tomli as tomllib

from .market_sim import RegimeSchedule, RegimeSpec, inject_regime_shift
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Bad configuration file or option."""


# ------------------------------------------------------------------ sections


@dataclass
class ShiftSettings:
    at_step: int
    mu: list[float] | None = None
    phi: list[float] | None = None
    sigma: list[float] | None = None
    transition: list[list[float]] | None = None


@dataclass
class SimulateSettings:
    horizon: int = 600
    init_price: float = 100.0
    o_init: float = 0.0
    mu: list[float] = field(default_factory=lambda: [0.06, -0.09])
    phi: list[float] = field(default_factory=lambda: [0.15, 0.25])
    sigma: list[float] = field(default_factory=lambda: [0.5, 1.3])
    transition: list[list[float]] = field(
        default_factory=lambda: [[0.96, 0.04], [0.05, 0.95]]
    )
    initial_dist: list[float] = field(default_factory=lambda: [0.5, 0.5])
    shock_dist: str = "normal"
    shift: ShiftSettings | None = None

    def build_spec(self) -> RegimeSpec | RegimeSchedule:
        try:
            spec = RegimeSpec(
                mu=np.asarray(self.mu, dtype=np.float64),
                phi=np.asarray(self.phi, dtype=np.float64),
                sigma=np.asarray(self.sigma, dtype=np.float64),
                transition=np.asarray(self.transition, dtype=np.float64),
                initial_dist=np.asarray(self.initial_dist, dtype=np.float64),
                shock_dist=self.shock_dist,
            )
            if self.shift is None:
                return spec
            return inject_regime_shift(
                spec,
                self.shift.at_step,
                mu=None if self.shift.mu is None else np.asarray(self.shift.mu),
                phi=None if self.shift.phi is None else np.asarray(self.shift.phi),
                sigma=None if self.shift.sigma is None else np.asarray(self.shift.sigma),
                transition=None
                if self.shift.transition is None
                else np.asarray(self.shift.transition),
            )
        except ValueError as exc:
            raise ConfigError(f"[simulate]: {exc}") from exc


@dataclass
class DatasetSettings:
    depth: int = 10
    news_dim: int = 8
    news_snr: float = 4.0
    ratios: list[float] = field(default_factory=lambda: [0.7, 0.15, 0.15])
    shuffle: bool = False
    base_date: str = "2010-01-04"


@dataclass
class ModelSettings:
    arch: str = "mlp"
    hidden: int = 32


@dataclass
class TrainSettings:
    sft: TrainConfig = field(
        default_factory=lambda: TrainConfig(learning_rate=0.1, epochs=30)
    )
    rm: TrainConfig = field(
        default_factory=lambda: TrainConfig(
            learning_rate=0.05, epochs=30, optimizer="adam"
        )
    )
    rlmf: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=0.05))
    rlmf_rounds: int = 40
    use_mf: bool = True


@dataclass
class DeploySettings:
    window: int = 10
    rm_epochs: int = 2
    rlmf_epochs: int = 2
    kl_anchor: str = "window"
    replay: bool = False
    updates: TrainConfig = field(
        default_factory=lambda: TrainConfig(learning_rate=0.05, optimizer="adam")
    )


@dataclass
class IGSettings:
    source: str = "news"
    perplexity: float = 12.0
    n_iter: int = 500
    min_cluster_size: int = 10
    include_outliers: bool = True
    radius: float | None = None


@dataclass
class EvalSettings:
    greedy: bool = True


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    simulate: SimulateSettings = field(default_factory=SimulateSettings)
    dataset: DatasetSettings = field(default_factory=DatasetSettings)
    model: ModelSettings = field(default_factory=ModelSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    deploy: DeploySettings = field(default_factory=DeploySettings)
    ig: IGSettings = field(default_factory=IGSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)


# ------------------------------------------------------------------ parsing


def _typed(value, kind, path: str):
    if kind is float:
        # TOML integers are valid floats, but bools must not pass as ints
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path} must be a number, got {value!r}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path} must be an integer, got {value!r}")
        return value
    if not isinstance(value, kind):
        raise ConfigError(f"{path} must be {kind.__name__}, got {value!r}")
    return value


def _float_list(value, path: str) -> list[float]:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{path} must be a non-empty array of numbers")
    return [_typed(v, float, f"{path}[{i}]") for i, v in enumerate(value)]


def _float_matrix(value, path: str) -> list[list[float]]:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{path} must be a non-empty array of arrays")
    return [_float_list(row, f"{path}[{i}]") for i, row in enumerate(value)]


class _Section:
    """Tracks consumed keys so leftovers can be reported with full paths."""

    def __init__(self, table: dict, path: str):
        if not isinstance(table, dict):
            raise ConfigError(f"[{path}] must be a table")
        self.table = dict(table)
        self.path = path

    def take(self, key: str, kind, default):
        if key not in self.table:
            return default
        raw = self.table.pop(key)
        if kind == "float_list":
            return _float_list(raw, f"{self.path}.{key}")
        if kind == "float_matrix":
            return _float_matrix(raw, f"{self.path}.{key}")
        return _typed(raw, kind, f"{self.path}.{key}")

    def subtable(self, key: str) -> dict | None:
        if key not in self.table:
            return None
        raw = self.table.pop(key)
        if not isinstance(raw, dict):
            raise ConfigError(f"[{self.path}.{key}] must be a table")
        return raw

    def finish(self) -> None:
        if self.table:
            raise ConfigError(f"unknown keys in [{self.path}]: {sorted(self.table)}")


_TRAIN_FIELD_KINDS = {
    "learning_rate": float,
    "batch_size": int,
    "epochs": int,
    "momentum": float,
    "optimizer": str,
    "grad_clip_norm": float,
    "clip_eps": float,
    "kl_coef": float,
    "mf_coef": float,
    "rollout_size": int,
    "ppo_epochs": int,
    "baseline": str,
}


def _parse_train_config(table: dict, path: str, base: TrainConfig) -> TrainConfig:
    sec = _Section(table, path)
    if "seed" in sec.table:
        raise ConfigError(f"{path}.seed is not configurable; set [run].seed")
    kwargs = {}
    for name, kind in _TRAIN_FIELD_KINDS.items():
        kwargs[name] = sec.take(name, kind, getattr(base, name))
    sec.finish()
    try:
        return TrainConfig(seed=0, **kwargs)
    except ValueError as exc:
        raise ConfigError(f"[{path}]: {exc}") from exc


def _parse_shift(table: dict, path: str) -> ShiftSettings:
    sec = _Section(table, path)
    if "at_step" not in sec.table:
        raise ConfigError(f"{path}.at_step is required when a shift is configured")
    settings = ShiftSettings(
        at_step=sec.take("at_step", int, None),
        mu=sec.take("mu", "float_list", None),
        phi=sec.take("phi", "float_list", None),
        sigma=sec.take("sigma", "float_list", None),
        transition=sec.take("transition", "float_matrix", None),
    )
    sec.finish()
    return settings


def _parse_simulate(table: dict) -> SimulateSettings:
    sec = _Section(table, "simulate")
    default = SimulateSettings()
    shift_table = sec.subtable("shift")
    settings = SimulateSettings(
        horizon=sec.take("horizon", int, default.horizon),
        init_price=sec.take("init_price", float, default.init_price),
        o_init=sec.take("o_init", float, default.o_init),
        mu=sec.take("mu", "float_list", default.mu),
        phi=sec.take("phi", "float_list", default.phi),
        sigma=sec.take("sigma", "float_list", default.sigma),
        transition=sec.take("transition", "float_matrix", default.transition),
        initial_dist=sec.take("initial_dist", "float_list", default.initial_dist),
        shock_dist=sec.take("shock_dist", str, default.shock_dist),
        shift=None if shift_table is None else _parse_shift(shift_table, "simulate.shift"),
    )
    sec.finish()
    if settings.horizon < 1:
        raise ConfigError("simulate.horizon must be >= 1")
    settings.build_spec()  # fail fast on inconsistent process parameters
    return settings


def _parse_dataset(table: dict) -> DatasetSettings:
    sec = _Section(table, "dataset")
    default = DatasetSettings()
    settings = DatasetSettings(
        depth=sec.take("depth", int, default.depth),
        news_dim=sec.take("news_dim", int, default.news_dim),
        news_snr=sec.take("news_snr", float, default.news_snr),
        ratios=sec.take("ratios", "float_list", default.ratios),
        shuffle=sec.take("shuffle", bool, default.shuffle),
        base_date=sec.take("base_date", str, default.base_date),
    )
    sec.finish()
    if settings.depth < 1:
        raise ConfigError("dataset.depth must be >= 1")
    if settings.news_dim < 0:
        raise ConfigError("dataset.news_dim must be >= 0")
    if settings.news_snr < 0:
        raise ConfigError("dataset.news_snr must be >= 0")
    if len(settings.ratios) != 3 or abs(sum(settings.ratios) - 1.0) > 1e-9:
        raise ConfigError("dataset.ratios must be three numbers summing to 1")
    return settings


def _parse_model(table: dict) -> ModelSettings:
    sec = _Section(table, "model")
    default = ModelSettings()
    settings = ModelSettings(
        arch=sec.take("arch", str, default.arch),
        hidden=sec.take("hidden", int, default.hidden),
    )
    sec.finish()
    if settings.arch not in ("linear", "mlp"):
        raise ConfigError("model.arch must be 'linear' or 'mlp'")
    if settings.hidden < 1:
        raise ConfigError("model.hidden must be >= 1")
    return settings


def _parse_train(table: dict) -> TrainSettings:
    sec = _Section(table, "train")
    default = TrainSettings()
    sft_t = sec.subtable("sft")
    rm_t = sec.subtable("rm")
    rlmf_t = sec.subtable("rlmf") or {}
    rlmf_sec = _Section(rlmf_t, "train.rlmf")
    rlmf_rounds = rlmf_sec.take("rounds", int, default.rlmf_rounds)
    use_mf = rlmf_sec.take("use_mf", bool, default.use_mf)
    settings = TrainSettings(
        sft=_parse_train_config(sft_t or {}, "train.sft", default.sft),
        rm=_parse_train_config(rm_t or {}, "train.rm", default.rm),
        rlmf=_parse_train_config(rlmf_sec.table, "train.rlmf", default.rlmf),
        rlmf_rounds=rlmf_rounds,
        use_mf=use_mf,
    )
    sec.finish()
    if settings.rlmf_rounds < 0:
        raise ConfigError("train.rlmf.rounds must be >= 0")
    return settings


def _parse_deploy(table: dict) -> DeploySettings:
    sec = _Section(table, "deploy")
    default = DeploySettings()
    updates_t = sec.subtable("updates")
    settings = DeploySettings(
        window=sec.take("window", int, default.window),
        rm_epochs=sec.take("rm_epochs", int, default.rm_epochs),
        rlmf_epochs=sec.take("rlmf_epochs", int, default.rlmf_epochs),
        kl_anchor=sec.take("kl_anchor", str, default.kl_anchor),
        replay=sec.take("replay", bool, default.replay),
        updates=_parse_train_config(updates_t or {}, "deploy.updates", default.updates),
    )
    sec.finish()
    if settings.window < 1:
        raise ConfigError("deploy.window must be >= 1")
    if settings.rm_epochs < 0 or settings.rlmf_epochs < 0:
        raise ConfigError("deploy epochs must be >= 0")
    if settings.kl_anchor not in ("window", "initial"):
        raise ConfigError("deploy.kl_anchor must be 'window' or 'initial'")
    return settings


def _parse_ig(table: dict) -> IGSettings:
    sec = _Section(table, "ig")
    default = IGSettings()
    settings = IGSettings(
        source=sec.take("source", str, default.source),
        perplexity=sec.take("perplexity", float, default.perplexity),
        n_iter=sec.take("n_iter", int, default.n_iter),
        min_cluster_size=sec.take("min_cluster_size", int, default.min_cluster_size),
        include_outliers=sec.take("include_outliers", bool, default.include_outliers),
        radius=sec.take("radius", float, default.radius),
    )
    sec.finish()
    if settings.source not in ("news", "features"):
        raise ConfigError("ig.source must be 'news' or 'features'")
    if settings.perplexity <= 1:
        raise ConfigError("ig.perplexity must be > 1")
    if settings.n_iter < 300:
        raise ConfigError("ig.n_iter must be >= 300")
    if settings.min_cluster_size < 1:
        raise ConfigError("ig.min_cluster_size must be >= 1")
    if settings.radius is not None and settings.radius <= 0:
        raise ConfigError("ig.radius must be > 0")
    return settings


def _parse_eval(table: dict) -> EvalSettings:
    sec = _Section(table, "eval")
    default = EvalSettings()
    settings = EvalSettings(greedy=sec.take("greedy", bool, default.greedy))
    sec.finish()
    return settings


def parse_config_dict(data: dict) -> RunConfig:
    root = _Section(data, "root")
    run_t = root.subtable("run") or {}
    run_sec = _Section(run_t, "run")
    seed = run_sec.take("seed", int, 0)
    out_dir = run_sec.take("out_dir", str, "runs/default")
    run_sec.finish()
    if seed < 0:
        raise ConfigError("run.seed must be >= 0")

    config = RunConfig(
        seed=seed,
        out_dir=out_dir,
        simulate=_parse_simulate(root.subtable("simulate") or {}),
        dataset=_parse_dataset(root.subtable("dataset") or {}),
        model=_parse_model(root.subtable("model") or {}),
        train=_parse_train(root.subtable("train") or {}),
        deploy=_parse_deploy(root.subtable("deploy") or {}),
        ig=_parse_ig(root.subtable("ig") or {}),
        eval=_parse_eval(root.subtable("eval") or {}),
    )
    root.finish()
    return config


def load_config(path: str | None) -> RunConfig:
    """Parse the TOML file, or return pure defaults when no path is given."""
    if path is None:
        return parse_config_dict({})
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path} is not valid TOML: {exc}") from exc
    return parse_config_dict(data)


def config_fingerprint(config: RunConfig) -> dict:
    """Flat JSON-friendly view of the resolved configuration, for manifests."""

    def as_dict(obj):
        if isinstance(obj, (int, float, str, bool)) or obj is None:
            return obj
        if isinstance(obj, list):
            return [as_dict(v) for v in obj]
        return {f.name: as_dict(getattr(obj, f.name)) for f in dc_fields(obj)}

    return as_dict(config)
