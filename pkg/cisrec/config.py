"""
config
~~~~~~

이 모듈은 cisrec 의 설정입니다.
학습기별 설정(TrainConfig, TreeLearnConfig, BPRConfig, BMFConfig)과
CLI 가 사용하는 ExperimentConfig 를 정의합니다.

모든 필드에는 기본값이 있으므로 데이터 경로만 있는 설정도 실행 가능합니다.

:license: MIT, see LICENSE for more details.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union, get_type_hints

from .errors import ConfigError

logger = logging.getLogger("cisrec.config")


class RatingFormat(str, Enum):
    ML10M_DAT = "ml10m_dat"
    CSV = "csv"


class TreeInit(str, Enum):
    RANDOM = "random"
    CLUSTER = "cluster"


class ModelKind(str, Enum):
    CIS_RANDOM = "cis-random"
    CIS_LEARNED = "cis-learned"
    FLAT = "flat"
    BPR = "bpr"
    BMF = "bmf"


class Protocol(str, Enum):
    EXPLICIT = "explicit"
    ALL_UNOBSERVED = "all_unobserved"


# ============================================
DEFAULT_DIM = 25
DEFAULT_LEARNING_RATE = 0.05
DEFAULT_LR_DECAY = 0.9
DEFAULT_REG = 1e-4
DEFAULT_EPOCHS = 10
DEFAULT_INIT_SCALE = 0.01
DEFAULT_USER_INIT_SCALE = 0.1

DEFAULT_ARITY = 2
DEFAULT_ROUNDS = 5
DEFAULT_MIN_CHANGE_FRACTION = 0.001
DEFAULT_NODE_PASSES = 3
DEFAULT_KMEANS_MAX_ITER = 50
DEFAULT_MAX_STALLS = 3

DEFAULT_BPR_SAMPLES_PER_PAIR = 50
DEFAULT_BMF_ALPHA = 40.0
DEFAULT_BMF_REG = 0.1
DEFAULT_BMF_MAX_SWEEPS = 30
DEFAULT_BMF_TOL = 1e-4

DEFAULT_POSITIVE_THRESHOLD = 4.0
DEFAULT_RELEVANT_THRESHOLD = 4.0
DEFAULT_NOT_RELEVANT_BELOW = 3.0
DEFAULT_FRACTIONS = (0.8, 0.1, 0.1)
FRACTION_TOLERANCE = 1e-9
# ============================================


def _coerce_enum(enum_cls, value, name: str):
    # 문자열 -> Enum 변환 허용
    if isinstance(value, enum_cls):
        return value
    try:
        return enum_cls(value)
    except ValueError:
        valid = [p.value for p in enum_cls]
        raise ConfigError(f"cisrec: {name} must be one of {valid}, got {value!r}.")


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(f"cisrec: {message}")


@dataclass
class TrainConfig:
    """
    CIS 모델(flat / hierarchical) SGD 설정

    Parameters
    ----------
    learning_rate:        초기 학습률 η (기본값: 0.05)
    lr_decay:             epoch 마다 곱해지는 감쇠 (기본값: 0.9)
    epochs:               epoch 수
    reg:                  L2 가중치 λ (기본값: 1e-4)
    seed:                 셔플 / 초기화 시드
    freeze_user_factors:  True 시 유저 벡터를 갱신하지 않음
    init_scale:           아이템 / 노드 벡터 초기 표준편차
    user_init_scale:      유저 벡터 초기 표준편차
    """

    learning_rate: float = DEFAULT_LEARNING_RATE
    lr_decay: float = DEFAULT_LR_DECAY
    epochs: int = DEFAULT_EPOCHS
    reg: float = DEFAULT_REG
    seed: int = 0
    freeze_user_factors: bool = False
    init_scale: float = DEFAULT_INIT_SCALE
    user_init_scale: float = DEFAULT_USER_INIT_SCALE

    def __post_init__(self) -> None:
        self._validate()

    def _validate(self) -> None:
        # η = 0 은 "변경 없음" 검사용으로 허용
        _require(self.learning_rate >= 0, "learning_rate must be >= 0.")
        _require(0 < self.lr_decay <= 1, "lr_decay must be in (0, 1].")
        _require(self.epochs >= 0, "epochs must be >= 0.")
        _require(self.reg >= 0, "reg must be >= 0.")
        _require(self.init_scale >= 0 and self.user_init_scale >= 0, "init scales must be >= 0.")

    def rate(self, epoch: int) -> float:
        return self.learning_rate * self.lr_decay ** epoch


@dataclass
class TreeLearnConfig:
    """
    트리 학습기 설정

    ftilde_sign 은 디버그 용도입니다. -1 이 유도된 부호이고,
    +1 은 비교 실험(A/B)을 위해서만 남겨 두었습니다.
    """

    arity: int = DEFAULT_ARITY
    init: TreeInit = TreeInit.CLUSTER
    rounds: int = DEFAULT_ROUNDS
    min_change_fraction: float = DEFAULT_MIN_CHANGE_FRACTION
    node_passes: int = DEFAULT_NODE_PASSES
    learning_rate: float = DEFAULT_LEARNING_RATE
    lr_decay: float = DEFAULT_LR_DECAY
    reg: float = DEFAULT_REG
    seed: int = 0
    cluster_mean: bool = True
    kmeans_max_iter: int = DEFAULT_KMEANS_MAX_ITER
    max_stalls: int = DEFAULT_MAX_STALLS
    ftilde_sign: int = -1
    init_scale: float = DEFAULT_INIT_SCALE

    def __post_init__(self) -> None:
        self._validate()

    def _validate(self) -> None:
        _require(self.arity >= 2, "arity must be >= 2.")
        self.init = _coerce_enum(TreeInit, self.init, "init")
        _require(self.rounds >= 0, "rounds must be >= 0.")
        _require(0 <= self.min_change_fraction < 1, "min_change_fraction must be in [0, 1).")
        _require(self.node_passes >= 0, "node_passes must be >= 0.")
        _require(self.learning_rate >= 0, "learning_rate must be >= 0.")
        _require(0 < self.lr_decay <= 1, "lr_decay must be in (0, 1].")
        _require(self.reg >= 0, "reg must be >= 0.")
        _require(self.kmeans_max_iter >= 1, "kmeans_max_iter must be >= 1.")
        _require(self.max_stalls >= 1, "max_stalls must be >= 1.")
        _require(self.ftilde_sign in (-1, 1), "ftilde_sign must be -1 or +1.")
        if self.ftilde_sign == 1:
            logger.warning("cisrec: ftilde_sign=+1 rewards piling items into one child (debug only).")

    def rate(self, step: int) -> float:
        return self.learning_rate * self.lr_decay ** step


@dataclass
class BPRConfig:
    samples_per_pair: float = DEFAULT_BPR_SAMPLES_PER_PAIR
    learning_rate: float = DEFAULT_LEARNING_RATE
    reg: float = DEFAULT_REG
    use_bias: bool = True
    seed: int = 0
    init_scale: float = DEFAULT_USER_INIT_SCALE
    eval_every: int = 0

    def __post_init__(self) -> None:
        self._validate()

    def _validate(self) -> None:
        _require(self.samples_per_pair >= 0, "samples_per_pair must be >= 0.")
        _require(self.learning_rate >= 0, "learning_rate must be >= 0.")
        _require(self.reg >= 0, "reg must be >= 0.")
        _require(self.eval_every >= 0, "eval_every must be >= 0.")


@dataclass
class BMFConfig:
    alpha: float = DEFAULT_BMF_ALPHA
    reg: float = DEFAULT_BMF_REG
    max_sweeps: int = DEFAULT_BMF_MAX_SWEEPS
    tol: float = DEFAULT_BMF_TOL
    seed: int = 0
    init_scale: float = DEFAULT_INIT_SCALE
    max_ridge_retries: int = 3

    def __post_init__(self) -> None:
        self._validate()

    def _validate(self) -> None:
        # α = 0 은 가중치 없는 ridge ALS
        _require(self.alpha >= 0, "alpha must be >= 0.")
        _require(self.reg >= 0, "reg must be >= 0.")
        _require(self.max_sweeps >= 0, "max_sweeps must be >= 0.")
        _require(self.tol >= 0, "tol must be >= 0.")


@dataclass
class DataConfig:
    ratings_path: Optional[str] = None
    format: RatingFormat = RatingFormat.ML10M_DAT
    url: str = "https://files.grouplens.org/datasets/movielens/ml-10m.zip"
    synthetic: bool = False
    max_users: Optional[int] = None

    def __post_init__(self) -> None:
        self.format = _coerce_enum(RatingFormat, self.format, "data.format")
        _require(self.max_users is None or self.max_users >= 1, "data.max_users must be >= 1.")


@dataclass
class ThresholdConfig:
    positive: float = DEFAULT_POSITIVE_THRESHOLD
    relevant: float = DEFAULT_RELEVANT_THRESHOLD
    not_relevant_below: float = DEFAULT_NOT_RELEVANT_BELOW

    def __post_init__(self) -> None:
        _require(0 < self.positive <= 5, "thresholds.positive must be in (0, 5].")
        _require(
            self.not_relevant_below <= self.relevant,
            "thresholds.not_relevant_below must be <= thresholds.relevant.",
        )


@dataclass
class SplitConfig:
    fractions: Tuple[float, float, float] = DEFAULT_FRACTIONS
    seed: int = 0

    def __post_init__(self) -> None:
        self.fractions = validate_fractions(self.fractions)


@dataclass
class ModelConfig:
    kind: ModelKind = ModelKind.CIS_LEARNED
    dim: int = DEFAULT_DIM
    stage1_epochs: int = DEFAULT_EPOCHS

    def __post_init__(self) -> None:
        self.kind = _coerce_enum(ModelKind, self.kind, "model.kind")
        _require(self.dim >= 1, "model.dim must be >= 1.")
        _require(self.stage1_epochs >= 0, "model.stage1_epochs must be >= 0.")


@dataclass
class EvalConfig:
    protocols: List[Protocol] = field(
        default_factory=lambda: [Protocol.EXPLICIT, Protocol.ALL_UNOBSERVED]
    )

    def __post_init__(self) -> None:
        self.protocols = [_coerce_enum(Protocol, p, "eval.protocols") for p in self.protocols]
        _require(len(self.protocols) >= 1, "eval.protocols must not be empty.")


@dataclass
class ExperimentConfig:
    """
    실험 전체 설정 (JSON 한 개)

    CLI 플래그 ``--model.kind=bpr`` 처럼 점(.)으로 구분된 경로는
    이 문서의 키를 덮어씁니다.
    """

    data: DataConfig = field(default_factory=DataConfig)
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    treelearn: TreeLearnConfig = field(default_factory=TreeLearnConfig)
    bpr: BPRConfig = field(default_factory=BPRConfig)
    bmf: BMFConfig = field(default_factory=BMFConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output_dir: str = "runs/default"
    threads: int = 1
    debug: bool = False

    def __post_init__(self) -> None:
        _require(self.threads >= 1, "threads must be >= 1.")

    def to_dict(self) -> Dict[str, Any]:
        return _plain(dataclasses.asdict(self))

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        return _build(cls, data, prefix="")


def validate_fractions(fractions) -> Tuple[float, float, float]:
    values = tuple(float(f) for f in fractions)
    _require(len(values) == 3, "split fractions must have three entries (train, valid, test).")
    _require(all(f > 0 for f in values), "split fractions must be positive.")
    _require(
        math.isclose(sum(values), 1.0, rel_tol=0.0, abs_tol=FRACTION_TOLERANCE),
        f"split fractions must sum to 1, got {sum(values)!r}.",
    )
    return values  # type: ignore[return-value]


def _plain(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _build(cls, data: Mapping[str, Any], prefix: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"cisrec: {prefix or 'config'} must be an object.")
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"cisrec: unknown config key(s) {[prefix + k for k in unknown]}.")

    kwargs: Dict[str, Any] = {}
    for name, value in data.items():
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, prefix=f"{prefix}{name}.")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"cisrec: invalid {prefix or 'config'}: {exc}") from exc


def parse_override(text: str) -> Tuple[str, Any]:
    """
    ``--key=value`` 한 개를 (dotted key, value) 로 변환

    값은 JSON 으로 먼저 해석하고, 실패하면 문자열로 취급합니다.
    """
    body = text[2:] if text.startswith("--") else text
    if "=" not in body:
        raise ConfigError(f"cisrec: override {text!r} must look like --key=value.")
    key, raw = body.split("=", 1)
    key = key.replace("-", "_")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def apply_overrides(base: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    merged = json.loads(json.dumps(base))
    for dotted, value in overrides.items():
        node = merged
        parts = dotted.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"cisrec: unknown config key {dotted!r}.")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"cisrec: unknown config key {dotted!r}.")
        node[parts[-1]] = value
    return merged


def _deep_merge(base: Dict[str, Any], update: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    for key, value in update.items():
        if key not in base:
            raise ConfigError(f"cisrec: unknown config key {prefix + key!r}.")
        if isinstance(base[key], dict) and isinstance(value, Mapping):
            _deep_merge(base[key], value, prefix=f"{prefix}{key}.")
        else:
            base[key] = value
    return base


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> ExperimentConfig:
    """
    기본값 -> JSON 파일 -> CLI override 순서로 설정을 해석합니다.

    Raises
    ------
    ConfigError  파일을 읽을 수 없거나 키 / 값이 잘못되었을 때
    """
    resolved = ExperimentConfig().to_dict()
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
            document = json.loads(text)
        except OSError as exc:
            raise ConfigError(f"cisrec: cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"cisrec: config {path} is not valid JSON: {exc}") from exc
        if not isinstance(document, dict):
            raise ConfigError(f"cisrec: config {path} must hold a JSON object.")
        _deep_merge(resolved, document)
    if overrides:
        resolved = apply_overrides(resolved, overrides)
    return ExperimentConfig.from_dict(resolved)
