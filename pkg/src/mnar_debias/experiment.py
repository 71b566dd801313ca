"""Synthetic train/test protocol: MNAR training feedback, MAR test cells."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .core import LabeledMatrix, ObservationMask
from .errors import DomainError
from .metrics import EvalResult, evaluate_predictions
from .propensity import KINDS, fit_propensity, oracle_propensity
from .simulation import SyntheticSpec, generate_synthetic, sample_mask, stream
from .training import TrainConfig, train, train_joint

JOINT_FAMILIES = ("dr", "d_dr")


@dataclass(frozen=True, eq=False)
class SplitData:
    y_true: LabeledMatrix
    p_true: LabeledMatrix
    train_mask: ObservationMask
    test_mask: ObservationMask


def make_split(spec: SyntheticSpec, test_rate: float = 0.05) -> SplitData:
    """Ground truth plus an MNAR training mask and an independent MAR test mask."""
    if not 0.0 < test_rate <= 1.0:
        raise DomainError("test_rate must lie in (0, 1]")
    data = generate_synthetic(spec)
    train_mask = sample_mask(data.p_true, stream(spec.seed, 100))
    test_mask = ObservationMask(stream(spec.seed, 101).random(data.p_true.shape) < test_rate)
    return SplitData(data.y_true, data.p_true, train_mask, test_mask)


def propensity_for(split: SplitData, kind: str = "oracle", clip_floor: Optional[float] = None):
    if kind == "oracle":
        return oracle_propensity(split.p_true)
    if kind not in KINDS:
        raise DomainError(f"unknown propensity kind {kind!r}")
    kwargs = {} if clip_floor is None else {"clip_floor": clip_floor}
    return fit_propensity(split.train_mask, kind, **kwargs)


def fit_model(split: SplitData, cfg: TrainConfig, propensity: str = "oracle", joint: bool = True):
    """Train on the MNAR mask; DR-type families use joint learning when ``joint``."""
    p_hat = propensity_for(split, propensity)
    y = np.asarray(split.y_true)
    if joint and cfg.loss_family in JOINT_FAMILIES:
        return train_joint(y, split.train_mask, p_hat, cfg).prediction
    return train(y, split.train_mask, p_hat, cfg)


def run_trial(spec: SyntheticSpec, cfg: TrainConfig, seed: int, propensity: str = "oracle",
              test_rate: float = 0.05, k: int = 5, joint: bool = True) -> EvalResult:
    """One seed: regenerate data and masks, train, and score on the MAR test cells."""
    split = make_split(replace(spec, seed=seed), test_rate)
    model = fit_model(split, replace(cfg, seed=seed), propensity, joint)
    return evaluate_predictions(model.predict(), split.y_true, split.test_mask, k)


def compare(families: Sequence[str], spec: SyntheticSpec, cfg: TrainConfig, seeds: Sequence[int],
            propensity: str = "oracle", test_rate: float = 0.05, k: int = 5) -> dict[str, list[EvalResult]]:
    """Per-family results over ``seeds``; every family sees the same data for a given seed."""
    return {
        fam: [run_trial(spec, replace(cfg, loss_family=fam), s, propensity, test_rate, k) for s in seeds]
        for fam in families
    }
