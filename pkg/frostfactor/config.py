"""
Pipeline configuration read from a YAML file.

Every section is optional except the master `seed`. Section seeds default
to the master seed. Relative paths are resolved against the directory of
the configuration file.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple, Type, TypeVar, Union

from ruamel.yaml import YAML
from ruamel.yaml.error import YAMLError

from .convnet import CnnConfig
from .corpus import FieldNames
from .errors import InputError, ParameterError
from .svdpp import MfHyper

__all__ = [
    "BaselineSettings",
    "CorpusSettings",
    "OutputSettings",
    "Paths",
    "PipelineConfig",
    "TextSettings",
    "WORKDIR_VARIABLE",
    "load_config",
    "parse_config",
]

WORKDIR_VARIABLE = "FROSTFACTOR_WORKDIR"

_SECTIONS = ("paths", "corpus", "svdpp", "textprep", "cnn", "baselines", "output")
_SPLIT_FORMATS = ("lines", "jsonl")

T = TypeVar("T")


@dataclass(frozen=True)
class Paths:
    """
    Attributes:
        reviews: JSON-lines review corpus.
        embeddings: Pretrained word vectors in GloVe text format, if any.
        workdir: Directory receiving every artifact.
    """

    reviews: Path
    embeddings: Optional[Path]
    workdir: Path


@dataclass(frozen=True)
class CorpusSettings:
    test1_frac: float = 0.15
    test2_band: Tuple[float, float] = (0.05, 0.10)
    min_votes: int = 5
    strict: bool = True
    vote_categories: Optional[Tuple[str, ...]] = None
    fields: FieldNames = FieldNames()

    def __post_init__(self) -> None:
        if len(self.test2_band) != 2:
            raise ParameterError("corpus.test2_band must be a pair of fractions.")
        low, high = self.test2_band
        if not 0 < self.test1_frac < 1:
            raise ParameterError("corpus.test1_frac must lie between 0 and 1.")
        if not 0 < low < high < 1:
            raise ParameterError("corpus.test2_band must increase within (0, 1).")
        if high + self.test1_frac > 1:
            raise ParameterError("corpus.test2_band overlaps the test set 1 share.")
        if self.min_votes < 0:
            raise ParameterError("corpus.min_votes must not be negative.")


@dataclass(frozen=True)
class TextSettings:
    """
    Attributes:
        dim: Dimensionality of the word vectors.
        max_length: Descriptions are truncated to this many tokens; `None`
            keeps them whole.
        max_distance: Edit distance threshold of vocabulary aliases.
        init_range: Bound of randomly initialised word vectors.
        seed: Seed of randomly initialised word vectors.
    """

    dim: int = 300
    max_length: Optional[int] = 1000
    max_distance: int = 2
    init_range: float = 0.25
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ParameterError("textprep.dim must be at least 1.")
        if self.max_length is not None and self.max_length < 1:
            raise ParameterError("textprep.max_length must be at least 1.")
        if self.max_distance < 0:
            raise ParameterError("textprep.max_distance must not be negative.")
        if not self.init_range >= 0:
            raise ParameterError("textprep.init_range must not be negative.")


@dataclass(frozen=True)
class BaselineSettings:
    n_runs: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_runs < 1:
            raise ParameterError("baselines.n_runs must be at least 1.")


@dataclass(frozen=True)
class OutputSettings:
    split_format: str = "lines"
    trial_csv: bool = True

    def __post_init__(self) -> None:
        if self.split_format not in _SPLIT_FORMATS:
            raise ParameterError(
                f"output.split_format must be one of {', '.join(_SPLIT_FORMATS)}."
            )


@dataclass(frozen=True)
class PipelineConfig:
    """The resolved configuration of a pipeline run."""

    seed: int
    paths: Paths
    corpus: CorpusSettings = CorpusSettings()
    svdpp: MfHyper = MfHyper()
    textprep: TextSettings = TextSettings()
    cnn: CnnConfig = CnnConfig()
    baselines: BaselineSettings = BaselineSettings()
    output: OutputSettings = OutputSettings()

    def to_dict(self) -> Dict[str, Any]:
        """Return the configuration as plain JSON-compatible data."""
        return json.loads(json.dumps(asdict(self), default=str))

    def digest(self, sections: Iterable[str] = ("seed",) + _SECTIONS[1:]) -> str:
        """
        Return the SHA-256 digest of the canonical JSON rendering of the
        given sections. Paths never contribute; input files are tracked by
        their content.
        """
        document = self.to_dict()
        del document["paths"]
        selected = {name: document[name] for name in sorted(sections)}
        encoded = json.dumps(selected, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(encoded.encode("utf-8")).hexdigest()


def _section(document: Mapping[str, Any], name: str, allowed: Iterable[str]) -> Dict:
    section = document.get(name)
    if section is None:
        return {}
    if not isinstance(section, Mapping):
        raise ParameterError(f"Configuration section ‘{name}’ must be a mapping.")
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ParameterError(f"Unknown configuration key ‘{name}.{unknown[0]}’.")
    return dict(section)


def _field_names(cls: type) -> Tuple[str, ...]:
    return tuple(item.name for item in dataclasses.fields(cls))


def _build(cls: Type[T], name: str, values: Mapping[str, Any]) -> T:
    try:
        return cls(**values)
    except TypeError as error:
        raise ParameterError(f"Invalid ‘{name}’ section: {error}") from error


def _seed(value: Any, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParameterError(f"‘{name}’ must be an integer, got {value!r}.")
    return value


def _resolve(base_dir: Path, value: Any, name: str) -> Path:
    if not isinstance(value, str) or not value:
        raise ParameterError(f"‘paths.{name}’ must be a non-empty path.")
    path = Path(value).expanduser()
    return path if path.is_absolute() else base_dir / path


def parse_config(
    document: Mapping[str, Any],
    *,
    base_dir: Union[str, Path] = ".",
    seed: Optional[int] = None,
    workdir: Optional[Union[str, Path]] = None,
    strict: Optional[bool] = None,
    n_runs: Optional[int] = None,
    environ: Mapping[str, str] = os.environ,
) -> PipelineConfig:
    """
    Resolve a configuration document.

    Arguments:
        document: Parsed YAML document.
        base_dir: Directory relative paths are resolved against.
        seed: Replaces the master seed of the document.
        workdir: Work directory; takes precedence over the environment
            variable `FROSTFACTOR_WORKDIR` and over `paths.workdir`.
        strict: Replaces `corpus.strict`.
        n_runs: Replaces `baselines.n_runs`.
        environ: Environment the work directory variable is read from.

    Raises:
        ParameterError: A key is unknown, a value is invalid, the master
            seed or a required path is missing.
    """
    if not isinstance(document, Mapping):
        raise ParameterError("The configuration must be a mapping.")
    unknown = sorted(set(document) - {"seed", *_SECTIONS})
    if unknown:
        raise ParameterError(f"Unknown configuration key ‘{unknown[0]}’.")

    if seed is None:
        if "seed" not in document:
            raise ParameterError("The configuration must set a master ‘seed’.")
        seed = document["seed"]
    master = _seed(seed, "seed")
    base = Path(base_dir)

    raw_paths = _section(document, "paths", ("reviews", "embeddings", "workdir"))
    # Command line and environment paths are relative to the current directory.
    if workdir is None and environ.get(WORKDIR_VARIABLE):
        workdir = environ[WORKDIR_VARIABLE]
    if workdir is not None:
        resolved_workdir = Path(workdir).expanduser().absolute()
    elif raw_paths.get("workdir") is not None:
        resolved_workdir = _resolve(base, raw_paths["workdir"], "workdir")
    else:
        raise ParameterError(
            "No work directory: pass --workdir, set "
            f"{WORKDIR_VARIABLE} or configure ‘paths.workdir’."
        )
    paths = Paths(
        reviews=_resolve(base, raw_paths.get("reviews"), "reviews"),
        embeddings=(
            _resolve(base, raw_paths["embeddings"], "embeddings")
            if raw_paths.get("embeddings") is not None
            else None
        ),
        workdir=resolved_workdir,
    )

    raw_corpus = _section(document, "corpus", _field_names(CorpusSettings))
    if "test2_band" in raw_corpus:
        raw_corpus["test2_band"] = tuple(raw_corpus["test2_band"])
    if raw_corpus.get("vote_categories") is not None:
        raw_corpus["vote_categories"] = tuple(raw_corpus["vote_categories"])
    if "fields" in raw_corpus:
        raw_corpus["fields"] = _build(
            FieldNames,
            "corpus.fields",
            _section(raw_corpus, "fields", _field_names(FieldNames)),
        )
    if strict is not None:
        raw_corpus["strict"] = strict
    corpus = _build(CorpusSettings, "corpus", raw_corpus)

    raw_svdpp = _section(document, "svdpp", _field_names(MfHyper))
    raw_svdpp["seed"] = _seed(raw_svdpp.get("seed", master), "svdpp.seed")
    svdpp = _build(MfHyper, "svdpp", raw_svdpp)

    raw_text = _section(document, "textprep", _field_names(TextSettings))
    raw_text["seed"] = _seed(raw_text.get("seed", master), "textprep.seed")
    textprep = _build(TextSettings, "textprep", raw_text)

    raw_cnn = _section(document, "cnn", _field_names(CnnConfig))
    raw_cnn["seed"] = _seed(raw_cnn.get("seed", master), "cnn.seed")
    raw_cnn.setdefault("embed_dim", textprep.dim)
    raw_cnn.setdefault("output_dim", svdpp.k)
    cnn = _build(CnnConfig, "cnn", raw_cnn)
    if cnn.embed_dim != textprep.dim:
        raise ParameterError("cnn.embed_dim must equal textprep.dim.")
    if cnn.output_dim != svdpp.k:
        raise ParameterError("cnn.output_dim must equal svdpp.k.")

    raw_baselines = _section(document, "baselines", _field_names(BaselineSettings))
    raw_baselines["seed"] = _seed(raw_baselines.get("seed", master), "baselines.seed")
    if n_runs is not None:
        raw_baselines["n_runs"] = n_runs
    baselines = _build(BaselineSettings, "baselines", raw_baselines)

    output = _build(
        OutputSettings,
        "output",
        _section(document, "output", _field_names(OutputSettings)),
    )

    return PipelineConfig(
        seed=master,
        paths=paths,
        corpus=corpus,
        svdpp=svdpp,
        textprep=textprep,
        cnn=cnn,
        baselines=baselines,
        output=output,
    )


def load_config(path: Union[str, Path], **overrides: Any) -> PipelineConfig:
    """
    Read and resolve a YAML configuration file. Keyword arguments are passed
    on to `parse_config`.

    Raises:
        OSError: The file cannot be read.
        InputError: The file is not valid YAML.
        ParameterError: The configuration is invalid.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as config_file:
        try:
            document = YAML(typ="safe").load(config_file)
        except YAMLError as error:
            raise InputError(f"‘{path}’ is not valid YAML: {error}") from error

    return parse_config(document or {}, base_dir=path.parent.absolute(), **overrides)
