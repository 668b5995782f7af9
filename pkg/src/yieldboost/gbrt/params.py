from __future__ import annotations

from dataclasses import asdict, dataclass, fields


@dataclass(frozen=True)
class TrainParams:
    """Booster hyperparameters.

    ``lambda_`` is the L2 penalty on leaf weights and ``gamma`` the penalty per
    leaf; both enter the split gain.  ``sketch_eps`` sets the spacing of the
    hessian-weighted quantile cuts proposed as split candidates (about
    ``1/sketch_eps`` per feature).
    """

    eta: float = 0.3
    max_depth: int = 6
    lambda_: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0
    subsample: float = 1.0
    colsample: float = 1.0
    max_rounds: int = 500
    early_stop_patience: int = 25
    sketch_eps: float = 0.03
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if int(self.max_depth) != self.max_depth or self.max_depth < 0:
            raise ValueError(f"max_depth must be a non-negative integer, got {self.max_depth}")
        if self.lambda_ < 0 or self.gamma < 0 or self.min_child_weight < 0:
            raise ValueError("lambda, gamma and min_child_weight must be >= 0")
        if not 0.0 < self.subsample <= 1.0 or not 0.0 < self.colsample <= 1.0:
            raise ValueError("subsample and colsample must lie in (0, 1]")
        if self.max_rounds < 0 or self.early_stop_patience < 1:
            raise ValueError("max_rounds must be >= 0 and early_stop_patience >= 1")
        if not 0.0 < self.sketch_eps < 1.0:
            raise ValueError(f"sketch_eps must lie in (0, 1), got {self.sketch_eps}")
        object.__setattr__(self, "max_depth", int(self.max_depth))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lambda_")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainParams":
        d = dict(d)
        if "lambda" in d:
            d["lambda_"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown parameters: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "TrainParams":
        d = self.to_dict()
        d.update({("lambda" if k == "lambda_" else k): v for k, v in changes.items()})
        return TrainParams.from_dict(d)
