import hashlib
import json
from pathlib import Path
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, Field

from ..utilities.logging import get_logger

logger = get_logger(__name__)


def rng_digest(rng: np.random.Generator) -> str:
    """Short SHA-256 of the generator state, for checking that reruns stay in lockstep."""
    state = json.dumps(rng.bit_generator.state, sort_keys=True, default=str)
    return hashlib.sha256(state.encode("utf-8")).hexdigest()[:16]


class EpochRecord(BaseModel):
    kind: Literal["epoch"] = "epoch"
    phase: Literal["train", "calibrate"]
    epoch: int = Field(..., ge=1)
    steps: int = Field(..., ge=0)
    losses: dict[str, float] = Field(default_factory=dict, description="Mean of each term")
    total: float
    learning_rate: float
    wall_time: float | None = Field(None, description="Seconds since the phase started")
    rng_digest: str


class TrainHistory(BaseModel):
    """Per-epoch records of one train or calibrate run."""
    phase: Literal["train", "calibrate"]
    config: dict[str, Any] = Field(default_factory=dict)
    records: list[EpochRecord] = Field(default_factory=list)

    @property
    def totals(self) -> list[float]:
        return [r.total for r in self.records]

    def write_jsonl(self, path: str | Path, include_wall_time: bool = True) -> None:
        """One config header line, then one line per epoch."""
        with open(path, "w", encoding="utf-8") as f:
            header = {"kind": "config", "phase": self.phase, "config": self.config}
            f.write(json.dumps(header, sort_keys=True) + "\n")
            for record in self.records:
                exclude = None if include_wall_time else {"wall_time"}
                f.write(json.dumps(record.model_dump(mode="json", exclude=exclude),
                                   sort_keys=True) + "\n")
        logger.info(f"Wrote {len(self.records)} epoch records to {path}")
