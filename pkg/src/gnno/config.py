"""Experiment configuration: a flat ``key = value`` text file.

Lines starting with ``#`` are comments. ``preset = beauty|toys|phones``
loads that sampler profile first; any explicit key overrides it, and
command-line overrides win over the file.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

from gnno.analysis import AnalysisConfig
from gnno.evaluation import EvalProtocol
from gnno.negsampler import PRESETS, SamplerConfig
from gnno.synthetic import BlockCorpusSpec
from gnno.trainer import TrainConfig
from gnno.witg import WitgConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    path: str | None = None
    delimiter: str = "\t"
    skip_header: bool = False
    kcore: int = 5
    synthetic: BlockCorpusSpec = field(default_factory=BlockCorpusSpec)


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    witg: WitgConfig = field(default_factory=WitgConfig)
    tau: float = 0.0
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalProtocol = field(default_factory=EvalProtocol)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    out: str = "runs/default"
    seed: int = 0
    preset: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eval"] = self.eval.to_dict()
        return d

    def section_hash(self, *names: str) -> str:
        d = self.to_dict()
        payload = json.dumps({n: d[n] for n in names}, sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def with_sampler(self, sampler: str, seed: int | None = None) -> "ExperimentConfig":
        seed = self.seed if seed is None else seed
        train = replace(self.train, seed=seed, sampler=replace(self.train.sampler, sampler=sampler))
        return replace(self, seed=seed, train=train, eval=replace(self.eval, seed=seed),
                       analysis=replace(self.analysis, seed=seed))


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.replace(" ", "").split(",") if x)


def _delim(v: str) -> str:
    return {"\\t": "\t", "tab": "\t", "comma": ",", "space": " "}.get(v, v)


# key -> (section, field, parser)
KEYS = {
    "data": ("data", "path", str),
    "delimiter": ("data", "delimiter", _delim),
    "skip_header": ("data", "skip_header", _bool),
    "kcore": ("data", "kcore", int),
    "synth_items": ("synthetic", "num_items", int),
    "synth_blocks": ("synthetic", "num_blocks", int),
    "synth_users": ("synthetic", "num_users", int),
    "synth_length": ("synthetic", "length", int),
    "synth_stay_prob": ("synthetic", "stay_prob", float),
    "synth_max_hop": ("synthetic", "max_hop", int),
    "synth_seed": ("synthetic", "seed", int),
    "window": ("witg", "window", int),
    "self_loops": ("witg", "allow_self_loops", _bool),
    "tau": ("top", "tau", float),
    "sampler": ("sampler", "sampler", str),
    "neg_hard": ("sampler", "neg_hard", int),
    "neg_rand": ("sampler", "neg_rand", int),
    "pace_c": ("sampler", "pace_c", float),
    "initial_b": ("sampler", "initial_b", float),
    "lambda_max": ("sampler", "lambda_max", float),
    "step_unit": ("sampler", "step_unit", str),
    "dns_pool_size": ("sampler", "dns_pool_size", int),
    "exclude_sequence_items": ("sampler", "exclude_sequence_items", _bool),
    "epochs": ("train", "epochs", int),
    "batch_size": ("train", "batch_size", int),
    "learning_rate": ("train", "learning_rate", float),
    "embedding_dim": ("train", "embedding_dim", int),
    "max_sequence_length": ("train", "max_sequence_length", int),
    "encoder": ("train", "encoder", str),
    "neg_reduction": ("train", "neg_reduction", str),
    "candidate_set_size": ("eval", "candidate_set_size", int),
    "k_values": ("eval", "k_values", _ints),
    "phase": ("eval", "phase", str),
    "analysis_max_pairs": ("analysis", "max_pairs", int),
    "analysis_bins": ("analysis", "bins", int),
    "snapshot_epochs": ("analysis", "snapshot_epochs", _ints),
    "out": ("top", "out", str),
    "seed": ("top", "seed", int),
    "preset": ("top", "preset", str),
}


def parse_pairs(lines) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for line_no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {line_no}: expected 'key = value'")
        pairs[key.strip()] = value.strip()
    return pairs


def build_config(pairs: dict[str, str]) -> ExperimentConfig:
    unknown = sorted(set(pairs) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    sections: dict[str, dict] = {s: {} for s in ("data", "synthetic", "witg", "top", "sampler", "train", "eval", "analysis")}
    preset = pairs.get("preset")
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        sections["sampler"].update(asdict(PRESETS[preset]))
    for key, value in pairs.items():
        section, name, parse = KEYS[key]
        try:
            sections[section][name] = parse(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from None

    seed = sections["top"].get("seed", 0)
    try:
        sampler = SamplerConfig(**sections["sampler"])
        train = TrainConfig(**{"seed": seed, **sections["train"], "sampler": sampler})
        epochs = train.epochs
        cfg = ExperimentConfig(
            data=DataConfig(**sections["data"], synthetic=BlockCorpusSpec(**sections["synthetic"])),
            witg=WitgConfig(**sections["witg"]),
            train=train,
            eval=EvalProtocol(**{"seed": seed, **sections["eval"]}),
            analysis=AnalysisConfig(**{"seed": seed, **sections["analysis"]}),
            **sections["top"],
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if cfg.analysis.snapshot_epochs is None:
        cfg = replace(cfg, analysis=replace(cfg.analysis, snapshot_epochs=tuple(cfg.analysis.epochs_for(epochs))))
    return cfg


def load_config(path=None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    pairs = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                pairs = parse_pairs(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    pairs.update(overrides or {})
    return build_config(pairs)


def dump_config(cfg: ExperimentConfig) -> str:
    """Render ``cfg`` back into the key-value format."""
    d = cfg.to_dict()
    lookup = {
        "data": d["data"],
        "synthetic": d["data"]["synthetic"],
        "witg": d["witg"],
        "top": d,
        "sampler": d["train"]["sampler"],
        "train": d["train"],
        "eval": d["eval"],
        "analysis": d["analysis"],
    }
    lines = []
    for key, (section, name, _) in KEYS.items():
        value = lookup[section].get(name)
        if value is None:
            continue
        if isinstance(value, (list, tuple)):
            value = ",".join(map(str, value))
        elif key == "delimiter":
            value = {"\t": "\\t", " ": "space"}.get(value, value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
