"""Run configuration: one flat JSON file drives every CLI subcommand.

Relative paths inside the file are resolved against the file's directory.
The config hash covers every setting that can change a result apart from the
seed, which artifacts record separately; the output directory is excluded
and the suite enters by content, not by path.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .data import NoiseConfig
from .geom import DEFAULT_N_POINT, KINDS as TRAJ_KINDS
from .sampling import DEFAULT_STEPS, SamplerConfig
from .schedule import ScheduleConfig
from .training import TrainConfig
from .world.scenario import Suite

CONFIG_SCHEMA = 1
VARIANTS = ("bridge", "full", "truncated")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    seeds: tuple = tuple(range(1000, 1080))  # scenario seeds used for expert data, disjoint from the eval suite
    scenario_kinds: tuple = ("lane-fork", "parked-overtake", "emergency-brake", "merge-lite")
    filter_seed: int = 0
    noise: NoiseConfig = NoiseConfig()


@dataclass(frozen=True)
class RunConfig:
    kind: str = "geometric"
    n_point: int = 0  # 0 selects the representation default
    seed: int = 0  # training and sampling seed
    anchor_seed: int = 0
    n_anchor: int = 20
    suite: Suite = Suite()
    suite_path: str = ""
    output_dir: str = "run"
    schedule: ScheduleConfig = ScheduleConfig()
    data: DataConfig = DataConfig()
    train: dict = field(default_factory=dict)  # TrainConfig overrides; kind, variant and seed are filled in
    solver: str = "ddim"
    start_offset: float = 1e-4
    steps: dict = field(default_factory=lambda: dict(DEFAULT_STEPS))

    def __post_init__(self):
        if self.kind not in TRAJ_KINDS:
            raise ConfigError(f"unknown representation kind {self.kind!r}")
        if self.n_anchor < 2:
            raise ConfigError("n_anchor must be at least 2")
        if self.n_point < 0:
            raise ConfigError("n_point must be non-negative")
        bad = set(self.train) - {f.name for f in fields(TrainConfig)}
        if bad or {"kind", "variant", "seed"} & set(self.train):
            raise ConfigError(f"unsupported train keys: {sorted(bad | ({'kind', 'variant', 'seed'} & set(self.train)))}")
        if set(self.steps) != set(VARIANTS) or any(int(v) < 1 for v in self.steps.values()):
            raise ConfigError(f"steps must give a positive count for each of {VARIANTS}")
        self.train_config("bridge")  # validates the overrides
        self.sampler_config("bridge")

    @property
    def points(self) -> int:
        return self.n_point or DEFAULT_N_POINT[self.kind]

    def train_config(self, variant: str) -> TrainConfig:
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}")
        kw = dict(self.train)
        for key in ("denoiser_hidden", "classifier_hidden"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return TrainConfig(kind=self.kind, variant=variant, seed=self.seed, **kw)

    def sampler_config(self, variant: str) -> SamplerConfig:
        tc = TrainConfig(**{k: v for k, v in self.train.items() if k == "t_trunc_frac"})
        return SamplerConfig(
            n_steps=int(self.steps[variant]), solver=self.solver, start_offset=self.start_offset, t_trunc_frac=tc.t_trunc_frac
        )

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=int(seed))

    # -- serialization ---------------------------------------------------------

    def to_dict(self, for_hash: bool = False) -> dict:
        d = {
            "schema": CONFIG_SCHEMA,
            "kind": self.kind,
            "n_point": self.n_point,
            "seed": self.seed,
            "anchor_seed": self.anchor_seed,
            "n_anchor": self.n_anchor,
            "schedule": asdict(self.schedule),
            "data": {
                "seeds": list(self.data.seeds),
                "scenario_kinds": list(self.data.scenario_kinds),
                "filter_seed": self.data.filter_seed,
                "noise": asdict(self.data.noise),
            },
            "train": {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(self.train.items())},
            "solver": self.solver,
            "start_offset": self.start_offset,
            "steps": dict(sorted(self.steps.items())),
        }
        if for_hash:
            del d["seed"]  # artifacts record the seed next to the hash
            d["suite"] = json.loads(self.suite.to_json())
        else:
            d["suite"] = self.suite_path or json.loads(self.suite.to_json())
            d["output_dir"] = self.output_dir
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @property
    def hash(self) -> str:
        canon = json.dumps(self.to_dict(for_hash=True), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, raw: dict, base: Path | None = None) -> "RunConfig":
        try:
            return cls._from_dict(raw, base)
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    @classmethod
    def _from_dict(cls, raw: dict, base: Path | None) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        raw = dict(raw)
        if raw.pop("schema", None) != CONFIG_SCHEMA:
            raise ConfigError(f"config schema must be {CONFIG_SCHEMA}")
        base = Path(base) if base is not None else Path.cwd()
        known = {f.name for f in fields(cls)} - {"suite_path"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {k: raw[k] for k in ("kind", "n_point", "seed", "anchor_seed", "n_anchor", "solver", "start_offset") if k in raw}
        if "schedule" in raw:
            kw["schedule"] = ScheduleConfig(**raw["schedule"])
        if "data" in raw:
            dd = dict(raw["data"])
            seeds = dd.get("seeds", DataConfig.seeds)
            if isinstance(seeds, dict):
                seeds = range(seeds["start"], seeds["stop"])
            kw["data"] = DataConfig(
                seeds=tuple(int(s) for s in seeds),
                scenario_kinds=tuple(dd.get("scenario_kinds", DataConfig.scenario_kinds)),
                filter_seed=int(dd.get("filter_seed", 0)),
                noise=NoiseConfig(**dd.get("noise", {})),
            )
        if "train" in raw:
            kw["train"] = dict(raw["train"])
        if "steps" in raw:
            kw["steps"] = {k: int(v) for k, v in raw["steps"].items()}
        suite = raw.get("suite")
        if isinstance(suite, str):
            path = (base / suite).resolve()
            if not path.exists():
                raise ConfigError(f"suite file not found: {path}")
            kw["suite"] = Suite.from_json(path.read_text())
            kw["suite_path"] = str(path)
        elif isinstance(suite, dict):
            kw["suite"] = Suite.from_json(json.dumps({"schema": 1, **{k: v for k, v in suite.items() if k != "schema"}}))
        if "output_dir" in raw:
            kw["output_dir"] = str((base / raw["output_dir"]).resolve())
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(raw, base=path.parent)
