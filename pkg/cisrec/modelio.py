"""
modelio
~~~~~~~

모델 파일 읽기 / 쓰기.

모든 모델은 같은 JSON 봉투를 씁니다::

    {"format": "cisrec-model", "version": 1, "kind": "hier",
     "meta": {...}, "params": {"user_factors": {"shape": [U, D], "data": "<base64>"}}}

계층 모델은 봉투에 U 만 담고, 트리는 같은 디렉터리의 ``<stem>.tree.json``
(itemtree 파일 형식)에 따로 씁니다. 봉투의 ``tree`` 키가 그 파일 이름입니다.

:license: MIT, see LICENSE for more details.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from . import codec, itemtree
from .baselines import BMFModel, BPRModel
from .cis import FlatModel, HierModel
from .errors import ConfigError, DataError

logger = logging.getLogger("cisrec.modelio")

FORMAT_NAME = "cisrec-model"
FORMAT_VERSION = 1

AnyModel = Union[FlatModel, HierModel, BPRModel, BMFModel]


def model_kind(model: AnyModel) -> str:
    if isinstance(model, FlatModel):
        return "flat"
    if isinstance(model, HierModel):
        return "hier"
    if isinstance(model, BPRModel):
        return "bpr"
    if isinstance(model, BMFModel):
        return "bmf"
    raise ConfigError(f"cisrec: cannot save object of type {type(model).__name__}")


def tree_path_for(path: Union[str, Path]) -> Path:
    path = Path(path)
    stem = path.name[: -len(".json")] if path.name.endswith(".json") else path.name
    return path.with_name(f"{stem}.tree.json")


def _write_atomic(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_model(model: AnyModel, path: Union[str, Path], meta: Optional[Dict[str, str]] = None) -> Path:
    """
    모델을 저장하고 봉투 파일 경로를 돌려줍니다.
    같은 모델과 meta 는 항상 같은 바이트를 씁니다.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    kind = model_kind(model)
    params: Dict[str, Dict] = {"user_factors": codec.encode_matrix(model.user_factors)}
    extra: Dict[str, object] = {}
    if isinstance(model, FlatModel):
        params["item_factors"] = codec.encode_matrix(model.item_factors)
        params["item_bias"] = codec.encode_matrix(model.item_bias)
    elif isinstance(model, BPRModel):
        params["item_factors"] = codec.encode_matrix(model.item_factors)
        params["item_bias"] = codec.encode_matrix(model.item_bias)
        extra["use_bias"] = bool(model.use_bias)
    elif isinstance(model, BMFModel):
        params["item_factors"] = codec.encode_matrix(model.item_factors)
        extra["alpha"] = float(model.alpha)
        extra["reg"] = float(model.reg)
    else:
        tree_path = tree_path_for(path)
        _write_atomic(tree_path, itemtree.serialize(model.tree, meta))
        extra["tree"] = tree_path.name

    document = {"format": FORMAT_NAME, "version": FORMAT_VERSION, "kind": kind, "params": params, **extra}
    if meta:
        document["meta"] = dict(meta)
    _write_atomic(path, codec.dumps(document))
    logger.info("cisrec: wrote %s model to %s", kind, path)
    return path


def _matrix(document: Dict, name: str) -> np.ndarray:
    params = document.get("params") or {}
    if name not in params:
        raise DataError(f"cisrec: model file is missing parameter block '{name}'")
    return codec.decode_matrix(params[name])


def load_model(path: Union[str, Path]) -> AnyModel:
    """
    Raises
    ------
    DataError        봉투 형식이 맞지 않을 때 (트리 파일 오류는 TreeFormatError)
    ConfigError      트리 차원과 U 의 차원이 다를 때
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"cisrec: model file {path} does not exist")
    document = codec.loads(path.read_bytes())
    if document.get("format") != FORMAT_NAME or document.get("version") != FORMAT_VERSION:
        raise DataError(f"cisrec: {path} is not a {FORMAT_NAME} v{FORMAT_VERSION} file")
    kind = document.get("kind")
    users = _matrix(document, "user_factors")
    if kind == "flat":
        return FlatModel(users, _matrix(document, "item_factors"), _matrix(document, "item_bias"))
    if kind == "bpr":
        return BPRModel(
            users, _matrix(document, "item_factors"), _matrix(document, "item_bias"), bool(document.get("use_bias", True))
        )
    if kind == "bmf":
        return BMFModel(
            users, _matrix(document, "item_factors"), float(document.get("alpha", 0.0)), float(document.get("reg", 0.0))
        )
    if kind == "hier":
        tree_file = path.with_name(str(document.get("tree") or tree_path_for(path).name))
        if not tree_file.exists():
            raise DataError(f"cisrec: tree file {tree_file} for {path} does not exist")
        tree = itemtree.deserialize(tree_file.read_bytes())
        return HierModel(users, tree)
    raise DataError(f"cisrec: unknown model kind {kind!r} in {path}")


def read_meta(path: Union[str, Path]) -> Dict[str, str]:
    return dict(codec.loads(Path(path).read_bytes()).get("meta") or {})
