"""Serialized run artifacts: evaluation reports, training logs and manifests."""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Sequence
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, computed_field

from deskmatch.config import MatcherConfig, RunConfig
from deskmatch.errors import ContractError
from deskmatch.geometry import auc

Benchmark = Literal["pose", "homography"]


class PairRecord(BaseModel):
    """Per-pair evaluation row; ``None`` errors mark a failed estimate (counted as infinite)."""

    pair_id: str = Field(description="Dataset pair identifier")
    subset: str = Field(default="viewpoint", description="viewpoint or illumination")
    n_matches: int = Field(default=0, ge=0, description="Matches fed to the estimator")
    n_inliers: int = Field(default=0, ge=0, description="Matches within the epipolar threshold")
    rotation_error: float | None = Field(default=None, description="Degrees")
    translation_error: float | None = Field(default=None, description="Degrees")
    pose_error: float | None = Field(default=None, description="max(rotation, translation)")
    corner_error: float | None = Field(default=None, description="Mean corner distance, px")
    mma: list[float] | None = Field(default=None, description="Accuracy per MMA threshold")

    def error(self, benchmark: Benchmark) -> float:
        value = self.pose_error if benchmark == "pose" else self.corner_error
        return math.inf if value is None else value


class EvalReport(BaseModel):
    benchmark: Benchmark
    thresholds: list[float] = Field(description="AUC thresholds (degrees or pixels)")
    auc: list[float] = Field(description="AUC percentage per threshold")
    mma_thresholds: list[float] = Field(default_factory=list)
    mma: dict[str, list[float]] = Field(
        default_factory=dict, description="Subset name -> mean accuracy per MMA threshold"
    )
    config_digest: str = Field(default="", description="sha256 of the evaluation settings")
    source: str = Field(default="", description="Dataset the pairs came from")
    pairs: list[PairRecord] = Field(default_factory=list)

    @computed_field  # type: ignore[prop-decorator]
    @property
    def mean_inliers(self) -> float:
        if not self.pairs:
            return 0.0
        return sum(p.n_inliers for p in self.pairs) / len(self.pairs)

    def recompute_auc(self) -> list[float]:
        """AUC from the per-pair rows alone."""
        return auc([p.error(self.benchmark) for p in self.pairs], self.thresholds)

    def to_csv(self) -> str:
        """Per-pair rows as CSV."""
        columns = [
            "pair_id",
            "subset",
            "n_matches",
            "n_inliers",
            "rotation_error",
            "translation_error",
            "pose_error",
            "corner_error",
        ]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for record in self.pairs:
            row = record.model_dump()
            writer.writerow(["" if row[c] is None else row[c] for c in columns])
        return buf.getvalue()


class TrainLogEntry(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    epoch: int = Field(ge=1)
    coarse: float = Field(alias="L_c")
    fine: float = Field(alias="L_f")
    mqd: float = Field(default=0.0, alias="L_MQD")
    attentive: float = Field(default=0.0, alias="L_att")
    total: float
    wall_time_s: float = Field(ge=0)
    val_coarse: float | None = Field(default=None, alias="val_L_c")

    def to_json_line(self) -> str:
        return self.model_dump_json(by_alias=True, exclude_none=True)


class ComparisonRow(BaseModel):
    """One variant of an experiment, averaged over its training seeds.

    ``seeds`` is empty for a fixed checkpoint that was reused rather than trained.
    """

    name: str = Field(description="Variant label")
    checkpoints: list[str] = Field(default_factory=list, description="Evaluated weights")
    seeds: list[int] = Field(default_factory=list, description="Training seeds")
    auc: list[float] = Field(description="Pose AUC per threshold, mean over seeds")
    auc_per_seed: list[list[float]] = Field(default_factory=list)
    mean_inliers: float = 0.0
    final_val_coarse: float | None = Field(default=None, description="Last validation L_c")
    param_count: int = Field(default=0, ge=0)

    @classmethod
    def average(cls, rows: Sequence[ComparisonRow]) -> ComparisonRow:
        """Merge per-seed rows of one variant."""
        if not rows:
            raise ContractError("no rows to average")
        val = [r.final_val_coarse for r in rows if r.final_val_coarse is not None]
        return cls(
            name=rows[0].name,
            checkpoints=[c for r in rows for c in r.checkpoints],
            seeds=[s for r in rows for s in r.seeds],
            auc=np.mean([r.auc for r in rows], axis=0).tolist(),
            auc_per_seed=[a for r in rows for a in (r.auc_per_seed or [r.auc])],
            mean_inliers=float(np.mean([r.mean_inliers for r in rows])),
            final_val_coarse=float(np.mean(val)) if val else None,
            param_count=rows[0].param_count,
        )


class ComparisonReport(BaseModel):
    """Side-by-side result of the ablation or compression experiment."""

    experiment: Literal["ablate", "compress"]
    seeds: list[int]
    thresholds: list[float]
    rows: list[ComparisonRow] = Field(default_factory=list)

    def row(self, name: str) -> ComparisonRow:
        for row in self.rows:
            if row.name == name:
                return row
        raise KeyError(name)

    def auc_at(self, name: str, threshold: float) -> float:
        """Seed-averaged AUC of variant ``name`` at ``threshold`` degrees."""
        return self.row(name).auc[self.thresholds.index(threshold)]


class RunManifest(BaseModel):
    """Everything needed to reproduce a CLI run, written before work begins."""

    command: str = Field(description="Subcommand name")
    argv: list[str] = Field(default_factory=list, description="Raw arguments")
    version: str = Field(description="deskmatch version")
    seed: int
    config: RunConfig = Field(description="Fully resolved configuration")
    input_digest: str = Field(default="", description="sha256 over input files")
    outputs: list[str] = Field(default_factory=list, description="Paths this run writes")


class ParameterCount(BaseModel):
    total: int = Field(ge=0, description="Trainable float parameters")
    by_module: dict[str, int] = Field(description="Counts grouped by top-level name prefix")
    config: MatcherConfig = Field(description="Architecture the count refers to")


class MatchExport(BaseModel):
    """Matches of one pair as written by ``deskmatch match``."""

    pair_id: str
    checkpoint: str
    columns: list[str] = Field(default=["xa", "ya", "xb", "yb", "confidence", "inlier"])
    matches: list[list[float]] = Field(default_factory=list, description="One row per match")

    @computed_field  # type: ignore[prop-decorator]
    @property
    def n_inliers(self) -> int:
        return sum(1 for row in self.matches if row[5] > 0)
