"""
baselines
~~~~~~~~~

비교용 모델 두 가지:

- BPR: 선택한 아이템이 무작위로 뽑은 선택하지 않은 아이템보다 높게 점수가 나오도록
  ``ln σ(x̂)`` 를 SGD 로 올립니다.
- BMF: 이진 선택 행렬 전체를 가중 최소제곱으로 근사합니다 (관측 1 은 가중치 1+α,
  나머지 0 은 가중치 1). 교대 최소제곱(ALS)에 rank-one 보정을 써서 한 sweep 이
  O((U+I)·D³ + |pairs|·D²) 입니다.

:license: MIT, see LICENSE for more details.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
from scipy.special import expit, log_expit

from .config import BMFConfig, BPRConfig, DEFAULT_DIM
from .dataset import ImplicitDataset
from .errors import ContractError, DivergenceError, UnknownItemError, UnknownUserError
from .progress import EventKind, ProgressReporter, null_reporter

logger = logging.getLogger("cisrec.baselines")

Triple = Tuple[int, int, int]


# ===================================================================================
# 모델
@dataclass
class BPRModel:
    user_factors: np.ndarray
    item_factors: np.ndarray
    item_bias: np.ndarray
    use_bias: bool = True

    @property
    def dim(self) -> int:
        return self.user_factors.shape[1]

    @property
    def n_users(self) -> int:
        return self.user_factors.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_factors.shape[0]

    def copy(self) -> "BPRModel":
        return BPRModel(self.user_factors.copy(), self.item_factors.copy(), self.item_bias.copy(), self.use_bias)

    def is_finite(self) -> bool:
        return bool(
            np.isfinite(self.user_factors).all()
            and np.isfinite(self.item_factors).all()
            and np.isfinite(self.item_bias).all()
        )

    def score_items(self, u: int, items: np.ndarray) -> np.ndarray:
        _check_user(self, u)
        items = np.asarray(items, dtype=np.int64)
        out = self.item_factors[items] @ self.user_factors[u]
        if self.use_bias:
            out = out + self.item_bias[items]
        return out


@dataclass
class BMFModel:
    """
    가중 이진 행렬 분해 모델. ``trace`` 는 half-sweep 마다의 목적 함수 값입니다
    (초기값 포함, 저장되지 않음).
    """

    user_factors: np.ndarray
    item_factors: np.ndarray
    alpha: float
    reg: float
    trace: List[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.alpha >= 0:
            raise ContractError("cisrec: BMF confidence weight alpha must be >= 0.")

    @property
    def dim(self) -> int:
        return self.user_factors.shape[1]

    @property
    def n_users(self) -> int:
        return self.user_factors.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_factors.shape[0]

    def copy(self) -> "BMFModel":
        return BMFModel(self.user_factors.copy(), self.item_factors.copy(), self.alpha, self.reg, list(self.trace))

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.user_factors).all() and np.isfinite(self.item_factors).all())

    def score_items(self, u: int, items: np.ndarray) -> np.ndarray:
        _check_user(self, u)
        return self.item_factors[np.asarray(items, dtype=np.int64)] @ self.user_factors[u]


Baseline = Union[BPRModel, BMFModel]


def _check_user(model, u: int) -> None:
    if not isinstance(u, (int, np.integer)) or not 0 <= u < model.n_users:
        raise UnknownUserError(u)


def score(model: Baseline, u: int, i: int) -> float:
    """U_u·V_i (BPR 은 + c_i). 클수록 선호."""
    if not isinstance(i, (int, np.integer)) or not 0 <= i < model.n_items:
        raise UnknownItemError(i)
    return float(model.score_items(u, np.asarray([i]))[0])


# ===================================================================================
# BPR
def _as_rng(seed: Union[int, np.random.Generator]) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def bpr_sample_triple(train: ImplicitDataset, seed: Union[int, np.random.Generator]) -> Triple:
    """
    (u, i, j) 하나를 뽑습니다.

    (u, i) 는 선택하지 않은 아이템이 남은 유저의 학습 pair 중 균등,
    j 는 u 가 선택하지 않은 아이템 중 균등 (rejection sampling).
    후보 pair 목록은 데이터셋에 캐시되므로 호출당 기대 비용은 O(I / (I − |I_u|)) 입니다.

    Raises
    ------
    ContractError  선택하지 않은 아이템이 있는 유저가 하나도 없을 때
    """
    rng = _as_rng(seed)
    if len(train) == 0:
        raise ContractError("cisrec: cannot sample BPR triples from an empty dataset.")
    pool = train.sampleable_pairs
    if len(pool) == 0:
        raise ContractError("cisrec: every training user has selected every item; no negatives to sample.")

    u, i = train.pairs[pool[rng.integers(len(pool))]].tolist()
    selected = train.user_items[u]
    while True:
        j = int(rng.integers(train.n_items))
        pos = np.searchsorted(selected, j)
        if pos >= len(selected) or selected[pos] != j:
            return u, i, j


def bpr_objective(model: BPRModel, triple: Triple) -> float:
    """ln σ(x̂), x̂ = (U_u·V_i + c_i) − (U_u·V_j + c_j)"""
    u, i, j = triple
    user = model.user_factors[u]
    x = user @ (model.item_factors[i] - model.item_factors[j])
    if model.use_bias:
        x += model.item_bias[i] - model.item_bias[j]
    return float(log_expit(x))


def bpr_gradients(
    model: BPRModel, triple: Triple
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, float, float]:
    """
    ln σ(x̂) 의 기울기 (U_u, V_i, V_j, c_i, c_j).
    계수 ∂ln σ(x)/∂x = 1 − σ(x̂) = σ(−x̂).
    """
    u, i, j = triple
    user = model.user_factors[u]
    vi, vj = model.item_factors[i], model.item_factors[j]
    x = user @ (vi - vj)
    if model.use_bias:
        x += model.item_bias[i] - model.item_bias[j]
    coef = float(expit(-x))
    if not model.use_bias:
        return coef * (vi - vj), coef * user, -coef * user, 0.0, 0.0
    return coef * (vi - vj), coef * user, -coef * user, coef, -coef


def bpr_step(model: BPRModel, triple: Triple, learning_rate: float, reg: float) -> BPRModel:
    """
    triple 하나에 대해 ``ln σ(x̂) − λ·‖θ‖²/2`` 를 한 스텝 올립니다 (in-place).
    u, i, j 외의 파라미터는 건드리지 않습니다.
    """
    u, i, j = triple
    g_user, g_i, g_j, g_ci, g_cj = bpr_gradients(model, triple)
    model.user_factors[u] += learning_rate * (g_user - reg * model.user_factors[u])
    model.item_factors[i] += learning_rate * (g_i - reg * model.item_factors[i])
    model.item_factors[j] += learning_rate * (g_j - reg * model.item_factors[j])
    if model.use_bias:
        model.item_bias[i] += learning_rate * (g_ci - reg * model.item_bias[i])
        model.item_bias[j] += learning_rate * (g_cj - reg * model.item_bias[j])
    if not (
        np.isfinite(model.user_factors[u]).all()
        and np.isfinite(model.item_factors[[i, j]]).all()
        and np.isfinite(model.item_bias[[i, j]]).all()
    ):
        raise DivergenceError(f"non-finite BPR parameters after triple {triple}", stage="bpr")
    return model


def bpr_auc(model: BPRModel, triples: Sequence[Triple]) -> float:
    """x̂ > 0 인 triple 비율"""
    if not len(triples):
        return 0.0
    wins = 0
    for u, i, j in triples:
        s = model.score_items(u, np.asarray([i, j]))
        wins += int(s[0] > s[1])
    return wins / len(triples)


def init_bpr(n_users: int, n_items: int, dim: int, config: Optional[BPRConfig] = None) -> BPRModel:
    config = config or BPRConfig()
    rng = np.random.default_rng([config.seed, 0])
    return BPRModel(
        rng.normal(0.0, config.init_scale, size=(n_users, dim)),
        rng.normal(0.0, config.init_scale, size=(n_items, dim)),
        np.zeros(n_items),
        config.use_bias,
    )


def train_bpr(
    train: ImplicitDataset,
    config: Optional[BPRConfig] = None,
    dim: int = DEFAULT_DIM,
    model: Optional[BPRModel] = None,
    n_triples: Optional[int] = None,
    callback: Optional[Callable[[int, BPRModel], None]] = None,
    reporter: Optional[ProgressReporter] = None,
) -> BPRModel:
    """
    샘플링한 triple 들로 BPR 을 학습합니다.

    Parameters
    ----------
    n_triples:  triple 수 (기본값: samples_per_pair × |train pairs|). 0 이면 초기 모델을 그대로 돌려줍니다.
    callback:   ``eval_every`` triple 마다 (기본값: |pairs| 마다) ``callback(step, model)``
    """
    config = config or BPRConfig()
    reporter = reporter or null_reporter()
    model = init_bpr(train.n_users, train.n_items, dim, config) if model is None else model.copy()
    total = int(round(config.samples_per_pair * len(train))) if n_triples is None else n_triples
    if total <= 0:
        return model

    rng = np.random.default_rng([config.seed, 2])
    every = config.eval_every or max(len(train), 1)
    running = 0.0
    for step in range(1, total + 1):
        triple = bpr_sample_triple(train, rng)
        running += bpr_objective(model, triple)
        bpr_step(model, triple, config.learning_rate, config.reg)
        if step % every == 0 or step == total:
            block = (step - 1) // every
            mean = running / (step - block * every)
            logger.info("cisrec: bpr %d/%d triples mean ln sigma=%.4f", step, total, mean)
            reporter.emit(EventKind.EPOCH, "bpr", epoch=block, triples=step, mean_log_sigmoid=mean)
            running = 0.0
            if callback is not None:
                callback(step, model)
    return model


# ===================================================================================
# BMF
def bmf_objective(model: BMFModel, train: ImplicitDataset) -> float:
    """
    Σ_{u,i} c_ui (r_ui − U_u·V_i)² + λ(‖U‖² + ‖V‖²)

    전체 Σ s² 는 (UᵀU)∘(VᵀV) 의 합으로 구하고, 관측 칸만 따로 보정합니다.
    """
    users, items = model.user_factors, model.item_factors
    total = float(np.sum((users.T @ users) * (items.T @ items)))
    rows, cols = train.binary_matrix().nonzero()
    s = np.einsum("ij,ij->i", users[rows], items[cols])
    total += float(np.sum((1.0 + model.alpha) * (1.0 - s) ** 2 - s ** 2))
    return total + model.reg * float(np.sum(users ** 2) + np.sum(items ** 2))


def _ridge_solve(a: np.ndarray, b: np.ndarray, reg: float, retries: int, row: int, side: str) -> np.ndarray:
    bump = max(reg, 1e-8)
    for attempt in range(retries + 1):
        try:
            return scipy.linalg.solve(a, b, assume_a="pos", check_finite=False)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            if attempt == retries:
                break
            logger.warning("cisrec: singular normal equations for %s %d; adding ridge %.3g", side, row, bump)
            a = a + bump * np.eye(len(a))
            bump *= 10.0
    raise DivergenceError(f"singular normal equations for {side} {row}", stage="bmf")


def solve_rows(
    fixed: np.ndarray,
    observed: List[np.ndarray],
    alpha: float,
    reg: float,
    retries: int = 3,
    threads: int = 1,
    side: str = "user",
) -> np.ndarray:
    """
    한 쪽 factor 를 고정하고 다른 쪽 각 행의 가중 정규 방정식을 풉니다.

    A_r = YᵀY + α·Σ_{k∈obs(r)} y_k y_kᵀ + λI,   b_r = (1+α)·Σ_{k∈obs(r)} y_k

    YᵀY 는 한 번만 계산하고 관측 칸만 rank-one 으로 더합니다.
    """
    dim = fixed.shape[1]
    gram = fixed.T @ fixed + reg * np.eye(dim)
    out = np.zeros((len(observed), dim))

    def work(rows: range) -> None:
        for r in rows:
            idx = observed[r]
            if len(idx):
                y = fixed[idx]
                a = gram + alpha * (y.T @ y)
                b = (1.0 + alpha) * y.sum(axis=0)
            else:
                a, b = gram, np.zeros(dim)
            out[r] = _ridge_solve(a, b, reg, retries, r, side)

    if threads > 1 and len(observed) > 1:
        bounds = np.linspace(0, len(observed), threads + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, [range(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])]))
    else:
        work(range(len(observed)))
    return out


def user_half_sweep(model: BMFModel, train: ImplicitDataset, retries: int = 3, threads: int = 1) -> BMFModel:
    model.user_factors = solve_rows(
        model.item_factors, train.user_items, model.alpha, model.reg, retries, threads, "user"
    )
    return model


def item_half_sweep(model: BMFModel, train: ImplicitDataset, retries: int = 3, threads: int = 1) -> BMFModel:
    model.item_factors = solve_rows(
        model.user_factors, train.item_users, model.alpha, model.reg, retries, threads, "item"
    )
    return model


def train_bmf(
    train: ImplicitDataset,
    config: Optional[BMFConfig] = None,
    dim: int = DEFAULT_DIM,
    threads: int = 1,
    reporter: Optional[ProgressReporter] = None,
) -> BMFModel:
    """
    ALS 로 BMF 를 학습합니다. 상대 목적 함수 변화가 ``tol`` 미만이거나
    ``max_sweeps`` 에 도달하면 멈춥니다. half-sweep 마다 목적 함수를 ``model.trace`` 에 남깁니다.
    """
    config = config or BMFConfig()
    reporter = reporter or null_reporter()
    rng = np.random.default_rng([config.seed, 0])
    model = BMFModel(
        rng.normal(0.0, config.init_scale, size=(train.n_users, dim)),
        rng.normal(0.0, config.init_scale, size=(train.n_items, dim)),
        config.alpha,
        config.reg,
    )
    previous = bmf_objective(model, train)
    model.trace.append(previous)

    for sweep in range(config.max_sweeps):
        for half in (user_half_sweep, item_half_sweep):
            half(model, train, config.max_ridge_retries, threads)
            current = bmf_objective(model, train)
            if current > model.trace[-1] * (1.0 + 1e-9) + 1e-9:
                logger.warning(
                    "cisrec: bmf objective increased in sweep %d (%.6f -> %.6f)", sweep, model.trace[-1], current
                )
            model.trace.append(current)
        if not model.is_finite():
            raise DivergenceError("non-finite BMF factors", stage="bmf", epoch=sweep)
        change = abs(previous - current) / max(abs(previous), 1e-12)
        logger.info("cisrec: bmf sweep %d objective=%.4f relative change=%.3g", sweep, current, change)
        reporter.emit(EventKind.SWEEP, "bmf", sweep=sweep, objective=current, relative_change=change)
        previous = current
        if change < config.tol:
            break
    return model
