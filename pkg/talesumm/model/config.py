from typing import List, Literal

from pydantic import BaseModel, Field, field_validator, model_validator

from ..core.config import settings


class DropoutConfig(BaseModel):
    proj: float = Field(0.1, ge=0, lt=1)
    attn: float = Field(0.2, ge=0, lt=1)
    head: float = Field(0.2, ge=0, lt=1)


class TaleSummConfig(BaseModel):
    """
    Architecture of the two-level model; defaults follow the published setup
    """

    d_model: int = Field(128, gt=0)
    heads: int = Field(8, gt=0)
    shot_layers: int = Field(1, ge=1)
    episode_layers: int = Field(6, ge=1)
    group_size: int = Field(20, ge=2)
    time_bin: float = Field(1.0, gt=0)
    frame_cap: int = Field(25, ge=1)
    dropout: DropoutConfig = Field(default_factory=DropoutConfig)

    backbone_dims: List[int] = Field(default_factory=lambda: [1664, 768, 512])
    utterance_dim: int = Field(1024, gt=0)
    max_duration: float = Field(default_factory=lambda: settings.max_duration_s, gt=0)
    max_groups: int = Field(default_factory=lambda: settings.max_groups, ge=1)

    # ablation switches
    backbones: List[int] = Field(default_factory=lambda: [0, 1, 2])
    fusion: Literal["attention", "stack", "avg", "max"] = "attention"
    modalities: List[Literal["video", "dialog"]] = Field(default_factory=lambda: ["video", "dialog"])
    use_group_tokens: bool = True
    link_group_tokens: bool = True
    attention: Literal["grouped", "full"] = "grouped"

    @field_validator("backbone_dims")
    @classmethod
    def dims_positive(cls, value: List[int]) -> List[int]:
        if not value or any(d <= 0 for d in value):
            raise ValueError(f"backbone dims must be positive, got {value}")
        return value

    @field_validator("modalities")
    @classmethod
    def some_modality(cls, value: List[str]) -> List[str]:
        if not value:
            raise ValueError("at least one modality is required")
        return sorted(set(value), key=["video", "dialog"].index)

    @model_validator(mode="after")
    def check_consistency(self) -> "TaleSummConfig":
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model {self.d_model} is not divisible by heads {self.heads}")
        if self.d_model % 2 != 0:
            raise ValueError(f"d_model {self.d_model} must be even for sinusoidal encodings")
        if not self.backbones or any(not 0 <= b < len(self.backbone_dims) for b in self.backbones):
            raise ValueError(
                f"backbones {self.backbones} must index into {len(self.backbone_dims)} backbone dims"
            )
        return self

    @property
    def time_bins(self) -> int:
        return int(-(-self.max_duration // self.time_bin))

    @property
    def uses_video(self) -> bool:
        return "video" in self.modalities

    @property
    def uses_dialog(self) -> bool:
        return "dialog" in self.modalities
