"""Training configuration and ablation presets."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from typing import Any, Mapping


@dataclass(frozen=True)
class AblationFlags:
    no_cycle: bool = False                  # Ours-cycle
    reuse_cycle_attention: bool = False     # Ours-cycleAtt
    disable_attention_s: bool = False       # Ours-As
    disable_attention_t: bool = False       # Ours-At
    whole_image_discriminator: bool = False  # Ours-D
    never_freeze_attention: bool = False    # with whole_image_discriminator: Ours-D-A

    def active(self) -> list[str]:
        return [f.name for f in fields(self) if getattr(self, f.name)]


ABLATIONS: dict[str, AblationFlags] = {
    "ours": AblationFlags(),
    "ours-minus-cycle": AblationFlags(no_cycle=True),
    "ours-minus-cycleatt": AblationFlags(reuse_cycle_attention=True),
    "ours-minus-as": AblationFlags(disable_attention_s=True),
    "ours-minus-at": AblationFlags(disable_attention_t=True),
    "ours-minus-d": AblationFlags(whole_image_discriminator=True),
    "ours-minus-d-a": AblationFlags(whole_image_discriminator=True, never_freeze_attention=True),
}


def ablation_from_name(name: str) -> AblationFlags:
    try:
        return ABLATIONS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}") from None


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    switch_epoch: int = 30
    tau: float = 0.1
    lambda_cyc: float = 10.0
    alpha: float = 2e-4
    seed: int = 0
    batch_size: int = 1
    image_size: int = 64
    width_multiplier: Fraction = Fraction(1, 4)
    n_residual: int = 3
    ablation: AblationFlags = field(default_factory=AblationFlags)
    attention_discriminator_enabled: bool = True
    checkpoint_every: int = 5

    def __post_init__(self):
        object.__setattr__(self, "width_multiplier", Fraction(self.width_multiplier))
        if isinstance(self.ablation, Mapping):
            object.__setattr__(self, "ablation", AblationFlags(**self.ablation))
        self.validate()

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0 <= self.switch_epoch <= self.epochs:
            raise ValueError(f"switch_epoch must lie in [0, epochs={self.epochs}], got {self.switch_epoch}")
        if not 0.0 <= self.tau < 1.0:
            raise ValueError(f"tau must lie in [0, 1), got {self.tau}")
        if self.lambda_cyc < 0:
            raise ValueError("lambda_cyc must be >= 0")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.image_size % 8:
            raise ValueError("image_size must be divisible by 8")
        if self.width_multiplier <= 0:
            raise ValueError("width_multiplier must be positive")
        if self.n_residual < 0:
            raise ValueError("n_residual must be >= 0")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["width_multiplier"] = str(self.width_multiplier)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if isinstance(d.get("ablation"), str):
            d["ablation"] = ablation_from_name(d["ablation"])
        elif isinstance(d.get("ablation"), Mapping):
            d["ablation"] = AblationFlags(**d["ablation"])
        if "width_multiplier" in d:
            d["width_multiplier"] = Fraction(str(d["width_multiplier"]))
        return cls(**d)

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)
