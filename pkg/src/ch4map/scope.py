from __future__ import annotations

from typing import NamedTuple, Optional

KINDS = ("scene", "cluster", "column_block")
VARIANT_OF_KIND = {"scene": "CMF", "cluster": "CTMF", "column_block": "CW-CMF"}


class Scope(NamedTuple):
    """One background-statistics domain: the scene, a cluster or a column block."""

    kind: str
    index: int = 0
    first_col: Optional[int] = None
    last_col: Optional[int] = None

    @property
    def label(self) -> str:
        if self.kind == "scene":
            return "scene"
        if self.kind == "cluster":
            return f"cluster:{self.index}"
        return f"columns:{self.first_col}-{self.last_col}"
