"""Configuration models for matching, training, scene generation and evaluation."""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Literal

if sys.version_info >= (3, 11):
    from typing import Self
else:
    from typing_extensions import Self

from pydantic import BaseModel, Field, model_validator

SceneKind = Literal["textured-planes", "box-room", "plane"]
TrainingRole = Literal["teacher", "student", "unimodal-baseline"]


class MatcherConfig(BaseModel):
    """Architecture hyperparameters shared by teacher and student."""

    input_channels: Literal[3, 4] = Field(
        default=3, description="3 for RGB (student/baseline), 4 for RGB+depth (teacher)"
    )
    backbone_widths: tuple[int, int, int] = Field(
        default=(16, 32, 64), description="Encoder channel widths at 1/2, 1/4, 1/8 resolution"
    )
    coarse_dim: int = Field(default=64, gt=0, description="Channels c of the 1/8 coarse map")
    fine_dim: int = Field(default=32, gt=0, description="Channels of the 1/2 fine map")
    coarse_layers: int = Field(default=4, ge=1, description="L_c: coarse self/cross blocks")
    fine_layers: int = Field(default=1, ge=1, description="L_f: fine self/cross blocks")
    heads: int = Field(default=8, ge=1, description="Attention heads")
    temperature: float = Field(default=0.1, gt=0, description="Dual-softmax temperature tau")
    match_threshold: float = Field(
        default=0.2, gt=0, lt=1, description="theta_c: coarse confidence threshold"
    )
    window: int = Field(default=5, ge=1, description="Fine window size w")

    @model_validator(mode="after")
    def _check_dims(self) -> Self:
        if self.coarse_dim % self.heads:
            raise ValueError(f"coarse_dim {self.coarse_dim} not divisible by heads {self.heads}")
        if (self.coarse_dim + self.fine_dim) % self.heads:
            raise ValueError(
                f"fine transformer width {self.coarse_dim + self.fine_dim} "
                f"not divisible by heads {self.heads}"
            )
        if self.coarse_dim % 4:
            raise ValueError("coarse_dim must be divisible by 4 for positional encoding")
        if self.window % 2 == 0:
            raise ValueError(f"window must be odd, got {self.window}")
        return self

    @property
    def fine_width(self) -> int:
        """Channel count of a fine window position after coarse concatenation."""
        return self.fine_dim + self.coarse_dim

    def slim(self) -> MatcherConfig:
        """Return the compressed variant with half the coarse attention layers."""
        return self.model_copy(update={"coarse_layers": max(1, self.coarse_layers // 2)})


class LossWeights(BaseModel):
    """Loss weights lambda_0..lambda_3, distillation temperature and focal parameters."""

    coarse: float = Field(default=0.25, ge=0, description="lambda_0 for L_c")
    fine: float = Field(default=0.25, ge=0, description="lambda_1 for L_f")
    mqd: float = Field(default=4.0, ge=0, description="lambda_2 for L_MQD")
    attentive: float = Field(default=0.25, ge=0, description="lambda_3 for L_att")
    distill_temperature: float = Field(default=1.0, gt=0, description="T in the MQD softmax")
    focal_alpha: float = Field(default=0.25, gt=0, le=1, description="Focal alpha")
    focal_gamma: float = Field(default=2.0, ge=0, description="Focal gamma")
    include_unmatched_queries: bool = Field(
        default=False,
        description="Let query distributions without a GT match enter L_MQD with y=0",
    )

    @classmethod
    def indoor(cls) -> LossWeights:
        return cls()

    @classmethod
    def outdoor(cls) -> LossWeights:
        return cls(mqd=1.0)


class SceneConfig(BaseModel):
    """Synthetic benchmark generation settings."""

    kind: SceneKind = Field(default="textured-planes", description="Scene family")
    richness: float = Field(
        default=1.0, ge=0, le=1, description="Fraction of surfaces carrying a texture"
    )
    height: int = Field(default=64, gt=0, description="Image height in pixels")
    width: int = Field(default=64, gt=0, description="Image width in pixels")
    focal_ratio: float = Field(default=0.875, gt=0, description="Focal length / image width")
    illumination_jitter: float = Field(
        default=0.15, ge=0, lt=1, description="Max relative brightness/gamma change per frame"
    )
    illumination_fraction: float = Field(
        default=0.0, ge=0, le=1, description="Fraction of same-pose illumination-only pairs"
    )
    min_overlap: float = Field(default=0.4, ge=0, le=1)
    max_overlap: float = Field(default=0.8, ge=0, le=1)

    @model_validator(mode="after")
    def _check_shape(self) -> Self:
        if self.height % 8 or self.width % 8:
            raise ValueError(f"image size {self.height}x{self.width} must be divisible by 8")
        if self.min_overlap > self.max_overlap:
            raise ValueError("min_overlap must not exceed max_overlap")
        return self


class TrainConfig(BaseModel):
    """Optimisation settings and the training role."""

    role: TrainingRole = Field(default="teacher", description="Which model is trained")
    learning_rate: float = Field(default=1e-3, gt=0)
    weight_decay: float = Field(default=1e-2, ge=0)
    batch_size: int = Field(default=4, ge=1, description="Pairs per optimizer step")
    epochs: int = Field(default=10, ge=1)
    seed: int = Field(default=0, description="Initialisation and shuffling seed")
    weights: LossWeights = Field(default_factory=LossWeights)
    dataset: Path | None = Field(default=None, description="Training dataset root")
    validation_dataset: Path | None = Field(default=None, description="Optional validation root")
    use_mqd: bool | None = Field(default=None, description="Student: enable L_MQD")
    use_att: bool | None = Field(default=None, description="Student: enable L_att")
    teacher_checkpoint: Path | None = Field(default=None, description="Frozen teacher weights")
    threads: int = Field(default=1, ge=1, description="Worker threads for per-pair passes")

    @model_validator(mode="after")
    def _check_role(self) -> Self:
        if self.role == "student":
            if self.teacher_checkpoint is None:
                raise ValueError("student role requires teacher_checkpoint")
        elif self.use_mqd or self.use_att:
            raise ValueError(f"role {self.role!r} does not accept distillation flags")
        return self

    @property
    def distill_mqd(self) -> bool:
        return self.role == "student" and self.use_mqd is not False

    @property
    def distill_att(self) -> bool:
        return self.role == "student" and self.use_att is not False


class EvalConfig(BaseModel):
    """Benchmark protocol settings."""

    pose_thresholds: tuple[float, ...] = Field(default=(5.0, 10.0, 20.0))
    ransac_threshold: float = Field(
        default=5e-4, gt=0, description="Essential RANSAC inlier threshold (normalized coords)"
    )
    ransac_iterations: int = Field(default=1000, ge=1)
    inlier_threshold: float = Field(
        default=5e-4, gt=0, description="Epipolar threshold for inlier counting"
    )
    homography_thresholds: tuple[float, ...] = Field(default=(3.0, 5.0, 10.0))
    homography_ransac_threshold: float = Field(default=3.0, gt=0, description="Pixels")
    top_k: int = Field(default=1000, ge=1)
    mma_thresholds: tuple[float, ...] = Field(default=tuple(float(t) for t in range(1, 11)))
    seed: int = 0

    @classmethod
    def outdoor(cls) -> EvalConfig:
        return cls(inlier_threshold=1e-4)


class RunConfig(BaseModel):
    """Umbrella config read from ``--config <json>``."""

    matcher: MatcherConfig = Field(default_factory=MatcherConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    scene: SceneConfig = Field(default_factory=SceneConfig)
    evaluation: EvalConfig = Field(default_factory=EvalConfig)
