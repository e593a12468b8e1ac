"""Experiment configuration: flat key=value files with dotted namespaces.

Example:

    seed = 7
    paths.corpus = data/corpus.jsonl
    model.n_layers = 4
    train.learning_rate = 1e-4
    bench.lengths = 128,256,512,768,1024

Unknown keys are rejected. validate() aggregates every violation instead
of stopping at the first. The config hash covers all settings except the
paths section, so moving artifacts does not change an experiment's
identity.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 600
    batch_size: int = 8
    learning_rate: float = 1e-3

    def validate(self) -> list[str]:
        problems = []
        if self.steps < 0:
            problems.append(f"pretrain.steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            problems.append(f"pretrain.batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            problems.append(f"pretrain.learning_rate must be positive, got {self.learning_rate}")
        return problems


@dataclass(frozen=True)
class RetrieverConfig:
    k1: float = 0.9
    b: float = 0.4
    top_k: int = 50

    def validate(self) -> list[str]:
        problems = []
        if self.k1 < 0:
            problems.append(f"retriever.k1 must be >= 0, got {self.k1}")
        if not 0 <= self.b <= 1:
            problems.append(f"retriever.b must be in [0, 1], got {self.b}")
        if self.top_k < 1:
            problems.append(f"retriever.top_k must be >= 1, got {self.top_k}")
        return problems


@dataclass(frozen=True)
class DataConfig:
    n_docs: int = 500
    n_queries: int = 100
    doc_len_lo: int = 100
    doc_len_hi: int = 150
    holdout_fraction: float = 0.1

    def validate(self) -> list[str]:
        problems = []
        if self.n_queries < 1 or self.n_docs < self.n_queries:
            problems.append(
                f"need data.n_docs >= data.n_queries >= 1, got {self.n_docs}, {self.n_queries}"
            )
        if self.doc_len_lo > self.doc_len_hi or self.doc_len_lo < 16:
            problems.append(
                f"invalid data doc length range ({self.doc_len_lo}, {self.doc_len_hi})"
            )
        if not 0 <= self.holdout_fraction < 1:
            problems.append(
                f"data.holdout_fraction must be in [0, 1), got {self.holdout_fraction}"
            )
        return problems


@dataclass(frozen=True)
class EvalConfig:
    ndcg_k: int = 10

    def validate(self) -> list[str]:
        return [] if self.ndcg_k >= 1 else [f"eval.ndcg_k must be >= 1, got {self.ndcg_k}"]


@dataclass(frozen=True)
class BenchConfig:
    lengths: tuple[int, ...] = (128, 256, 512, 768, 1024)
    n_queries: int = 50
    docs_per_query: int = 50
    batch: int = 256
    pool_size: int = 200
    dtype: str = "float32"

    def validate(self) -> list[str]:
        problems = []
        if not self.lengths or any(v < 16 for v in self.lengths):
            problems.append(f"bench.lengths must be >= 16, got {self.lengths}")
        if self.n_queries < 20:
            problems.append(f"bench.n_queries must be >= 20, got {self.n_queries}")
        if self.docs_per_query < 1 or self.batch < 1 or self.pool_size < 1:
            problems.append("bench.docs_per_query/batch/pool_size must be >= 1")
        if self.dtype not in ("float32", "float64"):
            problems.append(f"bench.dtype must be float32 or float64, got {self.dtype}")
        return problems


@dataclass(frozen=True)
class TextualConfig:
    max_doc_tokens: int = 256

    def validate(self) -> list[str]:
        if self.max_doc_tokens < 1:
            return [f"textual.max_doc_tokens must be >= 1, got {self.max_doc_tokens}"]
        return []


_SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "pretrain": PretrainConfig,
    "retriever": RetrieverConfig,
    "data": DataConfig,
    "eval": EvalConfig,
    "bench": BenchConfig,
    "textual": TextualConfig,
}

_PATH_KEYS = (
    "corpus", "queries", "qrels", "index", "compressor", "reranker", "textual",
    "pairs", "first_stage_run", "reranked_run", "output_dir",
)


@dataclass
class ExperimentConfig:
    seed: int = 7
    paths: dict[str, str] = field(default_factory=dict)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    retriever: RetrieverConfig = field(default_factory=RetrieverConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    textual: TextualConfig = field(default_factory=TextualConfig)

    def validate(self) -> list[str]:
        problems: list[str] = []
        for name in _SECTIONS:
            problems.extend(getattr(self, name).validate())
        return problems

    def settings_lines(self) -> list[str]:
        """Canonical non-path settings as sorted `key = value` lines."""
        lines = [f"seed = {self.seed}"]
        for section in sorted(_SECTIONS):
            obj = getattr(self, section)
            for f in fields(obj):
                value = getattr(obj, f.name)
                if isinstance(value, tuple):
                    value = ",".join(str(v) for v in value)
                lines.append(f"{section}.{f.name} = {value}")
        return sorted(lines)

    def config_hash(self) -> str:
        digest = hashlib.sha256("\n".join(self.settings_lines()).encode()).hexdigest()
        return digest[:32]

    @property
    def effective_input_length(self) -> int:
        return self.model.rerank_input_len


def _coerce(key: str, raw: str, target_type) -> object:
    raw = raw.strip()
    try:
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        if target_type is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if target_type is tuple:
            return tuple(int(v) for v in raw.split(",") if v)
        return raw
    except ValueError as e:
        raise ValueError(f"{key}: {e}") from e


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Flat key=value pairs; '#' starts a comment; duplicate keys rejected."""
    kv: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError([f"{path}:{line_no}: expected 'key = value'"])
            key, value = (part.strip() for part in line.split("=", 1))
            if key in kv:
                raise ConfigError([f"{path}:{line_no}: duplicate key {key!r}"])
            kv[key] = value
    return kv


def build_config(kv: dict[str, str]) -> ExperimentConfig:
    """Typed config from flat pairs; raises ConfigError listing ALL problems."""
    violations: list[str] = []
    cfg = ExperimentConfig()
    sections: dict[str, dict[str, object]] = {name: {} for name in _SECTIONS}
    for key, raw in kv.items():
        if key == "seed":
            try:
                cfg.seed = int(raw)
            except ValueError:
                violations.append(f"seed: not an integer: {raw!r}")
            continue
        if "." not in key:
            violations.append(f"unknown key {key!r}")
            continue
        section, name = key.split(".", 1)
        if section == "paths":
            if name not in _PATH_KEYS:
                violations.append(f"unknown path key {key!r}")
            else:
                cfg.paths[name] = raw.strip()
            continue
        klass = _SECTIONS.get(section)
        if klass is None:
            violations.append(f"unknown section {section!r} in key {key!r}")
            continue
        section_fields = {f.name: f for f in fields(klass)}
        if name not in section_fields:
            violations.append(f"unknown key {key!r}")
            continue
        target = section_fields[name].type
        base_type = {"int": int, "float": float, "bool": bool, "str": str,
                     "tuple[int, ...]": tuple}.get(target, str)
        try:
            sections[section][name] = _coerce(key, raw, base_type)
        except ValueError as e:
            violations.append(str(e))

    for section, values in sections.items():
        if values:
            setattr(cfg, section, replace(getattr(cfg, section), **values))
    # keep every stochastic component on the experiment seed unless overridden
    if "model.seed" not in kv:
        cfg.model = replace(cfg.model, seed=cfg.seed)
    if "train.seed" not in kv:
        cfg.train = replace(cfg.train, seed=cfg.seed)

    violations.extend(cfg.validate())
    if violations:
        raise ConfigError(violations)
    return cfg


def validate_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate a config file, aggregating every violation."""
    if not Path(path).exists():
        raise ConfigError([f"config file not found: {path}"])
    return build_config(parse_config_file(path))


def write_config(cfg: ExperimentConfig, path: str | Path) -> None:
    """Echo the resolved configuration (settings plus paths) to a file."""
    lines = cfg.settings_lines()
    lines.extend(f"paths.{k} = {v}" for k, v in sorted(cfg.paths.items()))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
