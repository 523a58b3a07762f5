"""
cli
~~~

``cisrec`` 명령줄 도구

    cisrec prep      --config=exp.json
    cisrec train     --config=exp.json --model.kind=cis-learned
    cisrec learn-tree runs/default/models/cis-random.json
    cisrec eval      runs/default/models/bpr.json runs/default/models/bmf.json
    cisrec recommend runs/default/models/cis-learned.json 42 --k 10
    cisrec validate  runs/default/models/cis-learned.tree.json
    cisrec fetch     --dest data/ml-10m

``--key=value`` 형태의 나머지 인자는 모두 설정 키 덮어쓰기입니다 (점으로 중첩 경로).
요약은 표준 에러로, 결과(모델 경로, 리포트 행, 추천 목록)는 표준 출력으로 나갑니다.

종료 코드: 0 성공, 2 설정 오류, 3 데이터 오류, 4 발산

:license: MIT, see LICENSE for more details.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, TextIO

from . import __version__, pipeline
from .config import ExperimentConfig, load_config, parse_override
from .download import DEFAULT_URL, MovieLensDownloader
from .errors import CisError, ConfigError
from .eval import MetricReport
from .modelio import load_model

logger = logging.getLogger("cisrec.cli")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config (defaults apply to missing keys)")
    common.add_argument("--threads", type=int, help="worker threads for tree learning, BMF and evaluation")
    common.add_argument("--debug", action="store_true", help="DEBUG logging")

    parser = argparse.ArgumentParser(
        prog="cisrec",
        description="Collaborative item selection models for implicit feedback.",
        epilog="Any other --dotted.key=value argument overrides the matching config key.",
    )
    parser.add_argument("--version", action="version", version=f"cisrec {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser("prep", parents=[common], help="ingest ratings and write the train/valid/test split")
    commands.add_parser("train", parents=[common], help="train the configured model kind")

    learn = commands.add_parser(
        "learn-tree", parents=[common], help="learn a tree from a trained model's user vectors, then finetune"
    )
    learn.add_argument("model", help="model file whose user factors are kept fixed")

    evaluate = commands.add_parser("eval", parents=[common], help="evaluate model files under both protocols")
    evaluate.add_argument("models", nargs="*", help="model files (default: every model under output_dir/models)")
    evaluate.add_argument("--protocol", action="append", choices=["explicit", "all_unobserved"])

    rec = commands.add_parser("recommend", parents=[common], help="top-k unobserved items for a user")
    rec.add_argument("model")
    rec.add_argument("user", help="raw user id as it appears in the ratings file")
    rec.add_argument("--k", type=int, default=10)

    check = commands.add_parser("validate", parents=[common], help="audit the data split and tree / model files")
    check.add_argument("paths", nargs="*")

    fetch = commands.add_parser("fetch", parents=[common], help="download the MovieLens ratings archive")
    fetch.add_argument("--dest", default="data/ml-10m")
    fetch.add_argument("--url", default=None, help=f"archive URL (default: data.url, {DEFAULT_URL})")
    return parser


def parse_overrides(extra: Sequence[str]) -> Dict[str, object]:
    overrides: Dict[str, object] = {}
    for text in extra:
        if not text.startswith("--"):
            raise ConfigError(f"cisrec: unexpected argument {text!r}.")
        key, value = parse_override(text)
        overrides[key] = value
    return overrides


def resolve_config(args: argparse.Namespace, extra: Sequence[str]) -> ExperimentConfig:
    overrides = parse_overrides(extra)
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.debug:
        overrides["debug"] = True
    return load_config(args.config, overrides)


def setup_logging(debug: bool) -> None:
    logging.basicConfig(level=logging.DEBUG if debug else logging.INFO, format=LOG_FORMAT, stream=sys.stderr)


def _default_models(config: ExperimentConfig) -> List[Path]:
    models = pipeline.RunPaths(config.output_dir).models
    return sorted(p for p in models.glob("*.json") if not p.name.endswith(".tree.json"))


def run(args: argparse.Namespace, config: ExperimentConfig, out: TextIO) -> int:
    if args.command == "fetch":
        downloader = MovieLensDownloader(args.url or config.data.url)
        try:
            print(downloader.fetch(args.dest), file=out)
        finally:
            downloader.close()
        return 0

    if args.command == "prep":
        pipeline.prepare(config)
        print(pipeline.RunPaths(config.output_dir).data, file=out)
        return 0

    if args.command == "validate":
        found = pipeline.validate_artifacts(config, args.paths)
        bad = 0
        for name, violations in found.items():
            for violation in violations:
                print(f"{name}\t{violation}", file=out)
            bad += len(violations)
        logger.info("cisrec: validated %d artifact(s), %d violation(s)", len(found), bad)
        return 3 if bad else 0

    bundle = pipeline.load_bundle(config)
    if args.command == "recommend":
        model = load_model(args.model)
        for item, value in pipeline.recommend(bundle, model, args.user, args.k):
            print(f"{item}\t{value:.6g}", file=out)
        return 0

    with pipeline.open_reporter(config) as reporter:
        if args.command == "train":
            _, path = pipeline.train_model(config, bundle, reporter)
            print(path, file=out)
        elif args.command == "learn-tree":
            _, path = pipeline.learn_tree_from_model(config, bundle, args.model, reporter)
            print(path, file=out)
        elif args.command == "eval":
            paths = args.models or _default_models(config)
            if not paths:
                raise ConfigError("cisrec: no model files to evaluate; run 'cisrec train' first.")
            reports = pipeline.evaluate_models(config, bundle, paths, args.protocol, reporter)
            print(MetricReport.header(), file=out)
            for report in reports:
                print(report.to_row(), file=out)
    return 0


def main(argv: Optional[Sequence[str]] = None, out: Optional[TextIO] = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    out = out or sys.stdout
    try:
        config = resolve_config(args, extra)
        setup_logging(config.debug)
        return run(args, config, out)
    except CisError as exc:
        logging.getLogger("cisrec").error("%s", exc)
        return exc.exit_code
    except KeyboardInterrupt:
        logger.warning("cisrec: interrupted; completed stages are kept as checkpoints")
        return 130


if __name__ == "__main__":
    sys.exit(main())
