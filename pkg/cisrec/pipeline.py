"""
pipeline
~~~~~~~~

CLI 하위 명령이 쓰는 단계별 실행 로직.

출력 디렉터리 구조::

    <output_dir>/
        config.json                해석된(기본값 적용) 설정
        progress.jsonl             진행 기록 (line-delimited JSON)
        data/                      prep 결과 (pair / id 맵 / 라벨 + manifest.json)
        checkpoints/<hash>/        단계별 / 트리 레벨별 체크포인트 (설정 해시별)
        models/<kind>.json         모델 파일 (계층 모델은 <kind>.tree.json 도 함께)
        reports/                   평가 결과 (TSV + JSON)

모든 산출물에는 설정 해시가 들어갑니다. 같은 설정이면 같은 바이트가 나옵니다.

:license: MIT, see LICENSE for more details.
"""

from __future__ import annotations

import dataclasses
import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import cis, codec, dataset, itemtree, modelio
from .baselines import train_bmf, train_bpr
from .cis import HierModel
from .config import ExperimentConfig, ModelKind, Protocol
from .context import artifact_meta
from .dataset import ImplicitDataset, SplitBundle
from .errors import ConfigError, DataError, DivergenceError, UnknownUserError
from .eval import MetricReport, build_protocol_all_unobserved, build_tasks, evaluate, rank_candidates
from .progress import EventKind, ProgressReporter, null_reporter
from .synthetic import planted_partition, to_dat_bytes
from .treelearn import learn_tree

logger = logging.getLogger("cisrec.pipeline")

VALIDATION_USERS = 500


class RunPaths:
    def __init__(self, root: Union[str, Path]) -> None:
        self.root = Path(root)
        self.config = self.root / "config.json"
        self.progress = self.root / "progress.jsonl"
        self.data = self.root / "data"
        self.models = self.root / "models"
        self.reports = self.root / "reports"

    def checkpoints(self, config_hash: str) -> Path:
        return self.root / "checkpoints" / config_hash[:16]

    def model(self, kind: Union[str, ModelKind]) -> Path:
        return self.models / f"{ModelKind(kind).value}.json"


def write_resolved_config(config: ExperimentConfig) -> Path:
    paths = RunPaths(config.output_dir)
    paths.root.mkdir(parents=True, exist_ok=True)
    document = {"config": config.to_dict(), "meta": artifact_meta(config.config_hash())}
    paths.config.write_bytes(codec.dumps(document))
    return paths.config


def open_reporter(config: ExperimentConfig) -> ProgressReporter:
    paths = RunPaths(config.output_dir)
    paths.root.mkdir(parents=True, exist_ok=True)
    stream = open(paths.progress, "a", encoding="utf-8")
    return ProgressReporter(stream, config_hash=config.config_hash(), owns_stream=True)


# ===================================================================================
# prep
def read_source(config: ExperimentConfig) -> dataset.RatingTable:
    if config.data.synthetic:
        ratings = planted_partition(seed=config.split.seed).ratings
    else:
        if not config.data.ratings_path:
            raise ConfigError(
                "cisrec: data.ratings_path is not set (use --data.ratings_path=... or --data.synthetic=true)."
            )
        path = Path(config.data.ratings_path)
        if not path.exists():
            raise DataError(f"cisrec: ratings file {path} does not exist")
        with open(path, "rb") as handle:
            ratings = dataset.ingest_ratings(handle, config.data.format, name=str(path))
    if config.data.max_users is not None:
        ratings = dataset.subsample_users(ratings, config.data.max_users, config.split.seed)
    return ratings


def prepare(config: ExperimentConfig) -> SplitBundle:
    """ingest -> to_implicit -> split -> build_relevance, 결과는 data/ 에 저장"""
    paths = RunPaths(config.output_dir)
    ratings = read_source(config)
    if config.data.synthetic:
        paths.data.mkdir(parents=True, exist_ok=True)
        (paths.data / "ratings.dat").write_bytes(to_dat_bytes(ratings))

    full = dataset.to_implicit(ratings, config.thresholds.positive)
    train, valid, test = dataset.split(full, config.split.fractions, config.split.seed)
    labels = dataset.build_relevance(
        ratings, config.thresholds.relevant, config.thresholds.not_relevant_below
    ).reindex(full)
    bundle = SplitBundle(train, valid, test, labels)
    bundle.save(paths.data)

    manifest = {
        "meta": artifact_meta(config.config_hash()),
        "sizes": {"train": len(train), "valid": len(valid), "test": len(test)},
        "users": full.n_users,
        "items": full.n_items,
        "labelled_users": len(labels),
    }
    (paths.data / "manifest.json").write_bytes(codec.dumps(manifest))
    write_resolved_config(config)
    logger.info(
        "cisrec: prepared %d/%d/%d pairs (%d users, %d items) in %s",
        len(train), len(valid), len(test), full.n_users, full.n_items, paths.data,
    )
    return bundle


def load_bundle(config: ExperimentConfig) -> SplitBundle:
    return SplitBundle.load(RunPaths(config.output_dir).data)


# ===================================================================================
# train
def validation_callback(
    stage: str,
    train: ImplicitDataset,
    valid: ImplicitDataset,
    reporter: ProgressReporter,
    max_users: int = VALIDATION_USERS,
) -> Callable:
    """
    epoch 마다 검증 pair 로 all_unobserved 지표(앞쪽 max_users 명)를 기록합니다.
    """
    tasks = build_protocol_all_unobserved(train, valid)[:max_users] if len(valid) else []

    def callback(epoch: int, model, *_) -> None:
        if not len(tasks):
            return
        report = evaluate(model.score_items, tasks, model=stage)
        logger.info("cisrec: %s epoch %d validation MAP=%.4f EPR=%.4f", stage, epoch, report.map, report.epr)
        reporter.emit(EventKind.EVAL, stage, epoch=epoch, valid_map=report.map, valid_epr=report.epr)

    return callback


class StageRunner:
    """
    단계 결과를 체크포인트로 저장하고, 체크포인트가 이미 있으면 그 단계를 건너뜁니다.
    체크포인트 디렉터리는 설정 해시별이라 설정이 바뀌면 처음부터 다시 합니다.
    발산 오류에는 단계 이름을 붙입니다.
    """

    def __init__(self, config: ExperimentConfig, reporter: ProgressReporter) -> None:
        self.config = config
        self.reporter = reporter
        self.meta = artifact_meta(config.config_hash())
        self.directory = RunPaths(config.output_dir).checkpoints(config.config_hash())

    def checkpoint(self, stage: str) -> Path:
        return self.directory / f"{stage}.json"

    def run(self, stage: str, fn: Callable[[], modelio.AnyModel]) -> modelio.AnyModel:
        path = self.checkpoint(stage)
        if path.exists():
            logger.info("cisrec: stage %s restored from %s", stage, path)
            return modelio.load_model(path)
        self.reporter.emit(EventKind.STAGE, stage, status="start")
        try:
            model = fn()
        except DivergenceError as exc:
            raise exc if exc.stage else exc.with_stage(stage)
        modelio.save_model(model, path, self.meta)
        self.reporter.emit(EventKind.STAGE, stage, status="done")
        return model

    def tree_stage(self, fn: Callable[[Path], itemtree.ItemTree]) -> itemtree.ItemTree:
        """트리 학습 단계. 진행 중에는 레벨 체크포인트를, 끝나면 트리 파일을 남깁니다."""
        path = self.checkpoint("tree")
        if path.exists():
            logger.info("cisrec: stage treelearn restored from %s", path)
            return itemtree.deserialize(path.read_bytes())
        self.directory.mkdir(parents=True, exist_ok=True)
        levels = self.checkpoint("treelearn-levels")
        self.reporter.emit(EventKind.STAGE, "treelearn", status="start")
        try:
            tree = fn(levels)
        except DivergenceError as exc:
            raise exc if exc.stage else exc.with_stage("treelearn")
        path.write_bytes(itemtree.serialize(tree, self.meta))
        levels.unlink(missing_ok=True)
        self.reporter.emit(EventKind.STAGE, "treelearn", status="done")
        return tree


def _random_tree(config: ExperimentConfig, n_items: int) -> itemtree.ItemTree:
    return itemtree.random_balanced(
        n_items, config.treelearn.arity, config.model.dim, config.train.seed, config.train.init_scale
    )


def _train_random(
    config: ExperimentConfig,
    train: ImplicitDataset,
    train_config,
    stage: str,
    callback: Optional[Callable],
    reporter: ProgressReporter,
) -> HierModel:
    start = cis.init_hier(train.n_users, _random_tree(config, train.n_items), train_config, train.item_counts)
    return cis.train_hier(start, train, train_config, callback=callback, reporter=reporter, stage=stage)


def learn_and_finetune(
    config: ExperimentConfig,
    bundle: SplitBundle,
    runner: StageRunner,
    user_factors: np.ndarray,
    callback: Optional[Callable] = None,
) -> HierModel:
    """2단계(U 고정 트리 학습) + 3단계(finetune)"""
    train = bundle.train

    def grow(levels: Path) -> itemtree.ItemTree:
        return learn_tree(
            train,
            user_factors,
            config=config.treelearn,
            validation=bundle.valid if len(bundle.valid) else None,
            reporter=runner.reporter,
            threads=config.threads,
            checkpoint=levels,
        )

    tree = runner.tree_stage(grow)

    def finetune() -> HierModel:
        start = HierModel(np.array(user_factors, dtype=np.float64), tree)
        return cis.finetune(start, train, config.train, callback=callback, reporter=runner.reporter)

    return runner.run("finetune", finetune)


def train_model(
    config: ExperimentConfig,
    bundle: SplitBundle,
    reporter: Optional[ProgressReporter] = None,
    kind: Optional[Union[str, ModelKind]] = None,
) -> Tuple[modelio.AnyModel, Path]:
    """
    설정의 모델 종류로 학습하고 models/<kind>.json 에 저장합니다.

    cis-learned 는 세 단계입니다: 랜덤 트리 위에서 학습 -> U 고정 후 트리 학습 -> finetune.
    """
    kind = ModelKind(kind or config.model.kind)
    reporter = reporter or null_reporter()
    runner = StageRunner(config, reporter)
    train, valid = bundle.train, bundle.valid
    dim = config.model.dim
    if len(train) == 0:
        raise DataError("cisrec: the training split is empty.")

    def cb(stage: str) -> Callable:
        return validation_callback(stage, train, valid, reporter)

    if kind is ModelKind.FLAT:
        model = runner.run(
            "flat", lambda: cis.train_flat(train, config.train, dim=dim, callback=cb("flat"), reporter=reporter)
        )
    elif kind is ModelKind.CIS_RANDOM:
        model = runner.run(
            "cis-random", lambda: _train_random(config, train, config.train, "cis-random", cb("cis-random"), reporter)
        )
    elif kind is ModelKind.CIS_LEARNED:
        stage1_config = dataclasses.replace(config.train, epochs=config.model.stage1_epochs)
        first = runner.run(
            "stage1", lambda: _train_random(config, train, stage1_config, "stage1", cb("stage1"), reporter)
        )
        model = learn_and_finetune(config, bundle, runner, first.user_factors, cb("finetune"))
    elif kind is ModelKind.BPR:
        model = runner.run("bpr", lambda: train_bpr(train, config.bpr, dim=dim, callback=cb("bpr"), reporter=reporter))
    else:
        model = runner.run(
            "bmf", lambda: train_bmf(train, config.bmf, dim=dim, threads=config.threads, reporter=reporter)
        )

    path = modelio.save_model(model, RunPaths(config.output_dir).model(kind), runner.meta)
    write_resolved_config(config)
    return model, path


def learn_tree_from_model(
    config: ExperimentConfig,
    bundle: SplitBundle,
    source: Union[str, Path],
    reporter: Optional[ProgressReporter] = None,
) -> Tuple[HierModel, Path]:
    """
    이미 학습된 모델 파일의 유저 벡터로 2~3단계만 실행합니다 (``learn-tree``).
    """
    reporter = reporter or null_reporter()
    base = modelio.load_model(source)
    _check_shapes(base, bundle, source)
    if base.dim != config.model.dim:
        raise ConfigError(f"cisrec: {source} has dim {base.dim}, config says model.dim={config.model.dim}")
    runner = StageRunner(config, reporter)
    callback = validation_callback("finetune", bundle.train, bundle.valid, reporter)
    model = learn_and_finetune(config, bundle, runner, base.user_factors, callback)
    path = modelio.save_model(model, RunPaths(config.output_dir).model(ModelKind.CIS_LEARNED), runner.meta)
    return model, path


# ===================================================================================
# eval / recommend / validate
def _check_shapes(model: modelio.AnyModel, bundle: SplitBundle, path: Union[str, Path]) -> None:
    if model.n_users != bundle.train.n_users or model.n_items != bundle.train.n_items:
        raise ConfigError(
            f"cisrec: {path} covers {model.n_users} users / {model.n_items} items, "
            f"data has {bundle.train.n_users} / {bundle.train.n_items}"
        )


def evaluate_models(
    config: ExperimentConfig,
    bundle: SplitBundle,
    model_paths: Sequence[Union[str, Path]],
    protocols: Optional[Sequence[Union[str, Protocol]]] = None,
    reporter: Optional[ProgressReporter] = None,
) -> List[MetricReport]:
    """
    모델마다, 프로토콜마다 테스트 분할로 평가하고 reports/ 에 TSV 와 JSON 을 씁니다.
    """
    reporter = reporter or null_reporter()
    protocols = [Protocol(p) for p in (protocols or config.eval.protocols)]
    task_sets = {p: build_tasks(p, bundle.train, bundle.test, bundle.labels) for p in protocols}

    reports: List[MetricReport] = []
    for path in model_paths:
        model = modelio.load_model(path)
        _check_shapes(model, bundle, path)
        name = Path(path).name[: -len(".json")] if str(path).endswith(".json") else Path(path).name
        for protocol in protocols:
            report = evaluate(model.score_items, task_sets[protocol], threads=config.threads, model=name)
            reporter.emit(EventKind.EVAL, "eval", **report.to_dict())
            reports.append(report)

    write_reports(config, reports)
    return reports


def write_reports(config: ExperimentConfig, reports: Sequence[MetricReport]) -> Tuple[Path, Path]:
    paths = RunPaths(config.output_dir)
    paths.reports.mkdir(parents=True, exist_ok=True)
    meta = artifact_meta(config.config_hash())
    tsv = paths.reports / "metrics.tsv"
    lines = [f"# config_hash={meta['config_hash']}", MetricReport.header()] + [r.to_row() for r in reports]
    tsv.write_text("\n".join(lines) + "\n", encoding="utf-8")
    js = paths.reports / "metrics.json"
    js.write_bytes(codec.dumps({"meta": meta, "reports": [r.to_dict() for r in reports]}))
    return tsv, js


def recommend(
    bundle: SplitBundle,
    model: modelio.AnyModel,
    user: str,
    k: int,
) -> List[Tuple[str, float]]:
    """
    학습에서 선택하지 않은 아이템 중 상위 k 개 (원본 아이디, 점수).
    계층 모델의 점수는 선택 확률입니다.
    """
    train = bundle.train
    index = train.user_index()
    if user not in index:
        raise UnknownUserError(user)
    u = index[user]
    candidates = np.setdiff1d(np.arange(train.n_items), train.user_items[u])
    if len(candidates) == 0:
        return []
    scores = model.score_items(u, candidates)
    ranked = rank_candidates(candidates, scores)[:max(k, 1)]
    lookup = dict(zip(candidates.tolist(), scores.tolist()))
    ids = train.item_ids or tuple(str(i) for i in range(train.n_items))
    return [(ids[i], float(lookup[i])) for i in ranked.tolist()]


def validate_artifacts(
    config: ExperimentConfig,
    paths: Sequence[Union[str, Path]] = (),
) -> Dict[str, List[str]]:
    """
    데이터 분할 감사와 트리 / 모델 파일 검증. 위반이 없으면 값이 모두 빈 리스트.
    """
    found: Dict[str, List[str]] = {}
    data_dir = RunPaths(config.output_dir).data
    if data_dir.exists():
        bundle = SplitBundle.load(data_dir)
        for name, part in (("train", bundle.train), ("valid", bundle.valid), ("test", bundle.test)):
            found[f"data/{name}"] = part.audit()
    for path in paths:
        path = Path(path)
        document = codec.loads(path.read_bytes())
        if document.get("format") == itemtree.FORMAT_NAME:
            found[str(path)] = itemtree.validate(itemtree.from_document(document))
            continue
        model = modelio.load_model(path)
        found[str(path)] = itemtree.validate(model.tree) if isinstance(model, HierModel) else []
    return found
