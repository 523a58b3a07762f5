"""
codec
~~~~~

JSON 봉투(envelope) 안에 실수 행렬을 담는 인코딩.
파라미터 블록은 little-endian 64-bit float 을 base64 로 감싼 문자열입니다.
텍스트 반올림이 없으므로 왕복 변환은 비트 단위로 동일합니다.

:license: MIT, see LICENSE for more details.
"""

from __future__ import annotations

import base64
import binascii
import json
from typing import Any, Dict, Sequence

import numpy as np

from .errors import TreeFormatError

_LE_FLOAT64 = np.dtype("<f8")


def encode_block(array: np.ndarray) -> str:
    data = np.ascontiguousarray(array, dtype=_LE_FLOAT64)
    return base64.b64encode(data.tobytes()).decode("ascii")


def decode_block(text: str, count: int, offset: int = 0) -> np.ndarray:
    """
    ``count`` 개의 float64 를 복원합니다. 길이가 다르면 TreeFormatError(offset).
    """
    try:
        raw = base64.b64decode(text.encode("ascii"), validate=True)
    except (binascii.Error, ValueError, AttributeError) as exc:
        raise TreeFormatError(f"invalid base64 parameter block ({exc})", offset) from exc
    if len(raw) != count * _LE_FLOAT64.itemsize:
        raise TreeFormatError(
            f"parameter block holds {len(raw)} bytes, expected {count * _LE_FLOAT64.itemsize}",
            offset,
        )
    return np.frombuffer(raw, dtype=_LE_FLOAT64).astype(np.float64)


def encode_matrix(matrix: np.ndarray) -> Dict[str, Any]:
    matrix = np.asarray(matrix, dtype=np.float64)
    return {"shape": list(matrix.shape), "data": encode_block(matrix)}


def decode_matrix(block: Any, offset: int = 0) -> np.ndarray:
    if not isinstance(block, dict) or "shape" not in block or "data" not in block:
        raise TreeFormatError("matrix block must hold 'shape' and 'data'", offset)
    shape: Sequence[int] = block["shape"]
    if not isinstance(shape, list) or not all(isinstance(s, int) and s >= 0 for s in shape):
        raise TreeFormatError(f"bad matrix shape {shape!r}", offset)
    count = int(np.prod(shape)) if shape else 1
    return decode_block(block["data"], count, offset).reshape(shape)


def dumps(document: Dict[str, Any]) -> bytes:
    """정렬된 키, 공백 없는 직렬화 - 같은 문서는 같은 바이트"""
    return json.dumps(document, sort_keys=True, separators=(",", ":")).encode("utf-8")


def loads(data: bytes) -> Dict[str, Any]:
    try:
        text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    except UnicodeDecodeError as exc:
        raise TreeFormatError("document is not UTF-8", exc.start) from exc
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TreeFormatError(exc.msg, exc.pos) from exc
    if not isinstance(document, dict):
        raise TreeFormatError("top-level value must be an object", 0)
    return document
