"""
context
~~~~~~~

이 모듈은 산출물(모델 파일, 리포트, 진행 기록)에 함께 기록되는
실행 컨텍스트를 수집합니다.

:license: MIT, see LICENSE for more details.
"""

from __future__ import annotations

import sys
from typing import Dict, Optional

import numpy as np


# Python runtime
def get_runtime_version() -> str:
    """
    Python 런타임 버전 반환
    """
    try:
        v = sys.version_info
        return f"python{v.major}.{v.minor}.{v.micro}"
    except Exception:
        return "python-unknown"


def get_numpy_version() -> str:
    return getattr(np, "__version__", "unknown")


def artifact_meta(config_hash: Optional[str]) -> Dict[str, str]:
    """
    모든 산출물에 포함되는 메타데이터 블록

    시간 정보는 넣지 않습니다. 같은 설정과 시드면 바이트 단위로 같은 파일이 나와야 합니다.
    """
    from . import __version__

    meta = {
        "generator": f"cisrec/{__version__}",
        "runtime": get_runtime_version(),
        "numpy": get_numpy_version(),
    }
    if config_hash:
        meta["config_hash"] = config_hash
    return meta
