"""Synthetic MNAR data and the two empirical oracles for the closed forms.

Random streams are counter-based (Philox) and keyed by ``(seed, block)``:
replicas are drawn in fixed-size blocks, each from its own stream, and
merged in block order, so results depend only on ``(inputs, seed, replicas)``.
"""
from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .analytics import CLOSED_FORM_FAMILIES, BiasVarianceReport, bias_variance_report
from .core import LabeledMatrix, MatrixLike, ObservationMask, as_values, check_same_shape
from .errors import DegenerateError, DomainError
from .estimators import SELF_NORMALIZED, EstimatorSpec, batch_evaluate, eval_real, evaluate

BLOCK_SIZE = 4096
MAX_EMPTY_FRACTION = 0.01
MAX_ENUMERATION_CELLS = 16
LABEL_MODES = ("binary", "rating_1_to_5")


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SyntheticSpec:
    """Low-rank MNAR ground truth.

    Ratings come from ``score = U V^T + b_u + b_i + noise`` (standardised);
    the observation propensity is ``clamp(sigmoid(a * (score - b)), floor, 1)``
    so better-liked items are more likely to be observed.
    """

    M: int = 200
    N: int = 300
    latent_rank: int = 4
    propensity_slope: float = 1.5
    propensity_center: float = 2.0
    propensity_floor: float = 0.01
    label_mode: str = "binary"
    seed: int = 0
    noise: float = 0.5
    binarize_threshold: float = 3.0

    def __post_init__(self) -> None:
        if self.M < 1 or self.N < 1:
            raise DomainError("M and N must be >= 1")
        if self.latent_rank < 1:
            raise DomainError("latent_rank must be >= 1")
        if not 0.0 < self.propensity_floor < 1.0:
            raise DomainError("propensity_floor must lie in (0, 1)")
        if self.label_mode not in LABEL_MODES:
            raise DomainError(f"label_mode must be one of {LABEL_MODES}")
        if self.noise < 0:
            raise DomainError("noise must be >= 0")


@dataclass(frozen=True, eq=False)
class SyntheticData:
    y_true: LabeledMatrix
    p_true: LabeledMatrix
    raw_score: np.ndarray
    ratings: np.ndarray


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def generate_synthetic(spec: SyntheticSpec) -> SyntheticData:
    rng = stream(spec.seed, 0)
    k = spec.latent_rank
    u = rng.normal(size=(spec.M, k))
    v = rng.normal(size=(spec.N, k))
    bu = rng.normal(scale=0.5, size=(spec.M, 1))
    bi = rng.normal(scale=0.5, size=(1, spec.N))
    raw = u @ v.T / math.sqrt(k) + bu + bi + spec.noise * rng.normal(size=(spec.M, spec.N))
    raw = (raw - raw.mean()) / (raw.std() or 1.0)
    ratings = np.clip(np.rint(3.0 + 1.25 * raw), 1, 5)
    if spec.label_mode == "binary":
        y = LabeledMatrix((ratings > spec.binarize_threshold).astype(float), "binary_labels")
    else:
        y = LabeledMatrix(ratings, "labels")
    p = np.clip(_sigmoid(spec.propensity_slope * (raw - spec.propensity_center)), spec.propensity_floor, 1.0)
    return SyntheticData(y, LabeledMatrix(p, "propensities"), raw, ratings)


def sample_mask(p_true: MatrixLike, rng: np.random.Generator) -> ObservationMask:
    """Independent Bernoulli(p) observation indicators."""
    p = as_values(p_true, "propensities")
    return ObservationMask(rng.random(p.shape) < p)


@dataclass(frozen=True)
class MonteCarloResult:
    family: str
    replicas: int
    empirical_mean: float
    empirical_variance: float
    empirical_bias: float
    standard_error: float
    real_value: float
    empty_draws: int
    closed_form: Optional[BiasVarianceReport]

    def bias_within(self, k: float = 4.0) -> bool:
        """Empirical mean within ``k`` standard errors of the closed-form expectation (0 bias if none)."""
        target = self.real_value if self.closed_form is None else self.closed_form.expected_value
        return abs(self.empirical_mean - target) <= k * self.standard_error

    def variance_rel_error(self) -> float:
        if self.closed_form is None:
            raise DomainError("no closed form attached")
        v = self.closed_form.variance
        return abs(self.empirical_variance - v) / v if v > 0 else abs(self.empirical_variance)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["closed_form"] = None if self.closed_form is None else self.closed_form.to_dict()
        d["unbiased_within_4se"] = self.bias_within(4.0)
        return d


def _needs_resample(spec: EstimatorSpec) -> bool:
    return spec.family in SELF_NORMALIZED or (spec.family == "naive" and spec.naive_normalizer is None)


def _run_block(args) -> tuple[np.ndarray, int]:
    spec, e, e_hat, p, p_hat, seed, block, count = args
    rng = stream(seed, block)
    masks = rng.random((count,) + p.shape) < p
    empty = 0
    if _needs_resample(spec):
        flat = masks.reshape(count, -1)
        bad = ~flat.any(axis=1)
        while bad.any():
            n_bad = int(bad.sum())
            empty += n_bad
            if empty > MAX_EMPTY_FRACTION * count + 1:
                break
            flat[bad] = rng.random((n_bad, p.size)) < p.ravel()
            bad = ~flat.any(axis=1)
    return batch_evaluate(spec, e, e_hat, p_hat, masks), empty


def monte_carlo(
    spec: EstimatorSpec,
    e: MatrixLike,
    e_hat: Optional[MatrixLike],
    p_true: MatrixLike,
    p_hat: Optional[MatrixLike],
    replicas: int,
    seed: int,
    threads: int = 1,
    block_size: int = BLOCK_SIZE,
    values_path: Optional[str] = None,
) -> MonteCarloResult:
    """Draw ``replicas`` independent masks from ``p_true`` and evaluate the estimator on each.

    Masks with nothing observed make the naive (realised ``|O|``) and
    self-normalised estimators undefined; such draws are redrawn and counted,
    and more than 1% of them aborts with :class:`DegenerateError`.
    """
    if replicas < 2:
        raise DomainError("need at least 2 replicas")
    ev = as_values(e)
    p = as_values(p_true, "propensities")
    ehv = as_values(e_hat) if e_hat is not None else None
    phv = as_values(p_hat, "propensities") if p_hat is not None else None
    check_same_shape(ev, p, *[x for x in (ehv, phv) if x is not None])

    counts = [block_size] * (replicas // block_size)
    if replicas % block_size:
        counts.append(replicas % block_size)
    jobs = [(spec, ev, ehv, p, phv, seed, b, c) for b, c in enumerate(counts)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_run_block, jobs))
    else:
        parts = [_run_block(j) for j in jobs]
    empty = sum(n for _, n in parts)
    if empty > MAX_EMPTY_FRACTION * replicas:
        raise DegenerateError(f"{empty} of {replicas} draws observed nothing; propensities are too small")
    values = np.concatenate([v for v, _ in parts])

    if values_path is not None:
        with open(values_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replica", "value"])
            for i, val in enumerate(values):
                w.writerow([i, f"{val:.17g}"])

    mean = math.fsum(values) / replicas
    var = math.fsum((values - mean) ** 2) / (replicas - 1)
    real = eval_real(ev)
    closed = None
    if spec.family in CLOSED_FORM_FAMILIES and not (spec.family == "naive" and spec.naive_normalizer is None):
        closed = bias_variance_report(spec.family, ev, ehv, p, phv, spec.naive_normalizer, spec.shaping, spec.alpha)
    return MonteCarloResult(spec.family, replicas, mean, var, abs(mean - real), math.sqrt(var / replicas),
                            real, empty, closed)


@dataclass(frozen=True)
class ExactMoments:
    mean: float
    variance: float
    bias: float
    nonempty_probability: float


def exhaustive_moments(spec: EstimatorSpec, e: MatrixLike, e_hat: Optional[MatrixLike], p_true: MatrixLike,
                       p_hat: Optional[MatrixLike]) -> ExactMoments:
    """Exact ``E_O[L]`` and ``Var_O[L]`` by enumerating every mask.

    Each mask is weighted by its Bernoulli probability and evaluated with the
    scalar estimator functions. Estimators undefined on the empty mask are
    conditioned on a nonempty observation.
    """
    ev = as_values(e)
    p = as_values(p_true, "propensities")
    cells = ev.size
    if cells > MAX_ENUMERATION_CELLS:
        raise DomainError(f"enumeration limited to {MAX_ENUMERATION_CELLS} cells, got {cells}")
    pf = p.ravel()
    probs, vals = [], []
    for bits in itertools.product((0, 1), repeat=cells):
        o = np.array(bits, dtype=bool)
        if _needs_resample(spec) and not o.any():
            continue
        prob = math.prod(float(pf[j]) if o[j] else 1.0 - float(pf[j]) for j in range(cells))
        if prob == 0.0:
            continue
        probs.append(prob)
        vals.append(evaluate(spec, ev, e_hat, p_hat, o.reshape(ev.shape)))
    probs = np.array(probs)
    vals = np.array(vals)
    total = math.fsum(probs)
    mean = math.fsum(probs * vals) / total
    var = math.fsum(probs * (vals - mean) ** 2) / total
    return ExactMoments(mean, var, abs(mean - eval_real(ev)), total)


def tail_exceedance(family: str, z: MatrixLike, e_hat: Optional[MatrixLike], p_true: MatrixLike,
                    p_hat: MatrixLike, shaping, alpha, bound: float, draws: int, seed: int) -> float:
    """Fraction of mask draws whose estimate deviates from its expectation by more than ``bound``.

    ``z`` is the error matrix ``e``; for ``d_dr`` the estimate is built from
    ``e`` and ``e_hat`` and its expectation from the closed form.
    """
    spec = EstimatorSpec(family, shaping=shaping, alpha=alpha)
    ev = as_values(z)
    p = as_values(p_true, "propensities")
    expected = bias_variance_report(family, ev, e_hat, p, p_hat, shaping=shaping, alpha=alpha).expected_value
    hits = 0
    done = 0
    block = 0
    while done < draws:
        n = min(BLOCK_SIZE, draws - done)
        masks = stream(seed, block).random((n,) + p.shape) < p
        vals = batch_evaluate(spec, ev, e_hat, p_hat, masks)
        hits += int(np.count_nonzero(np.abs(vals - expected) > bound))
        done += n
        block += 1
    return hits / draws
