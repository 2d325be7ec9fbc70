"""Survival and classification evaluation: concordance index, Kaplan-Meier
curves with Greenwood confidence bands, the log-rank test, percentile risk
stratification, and a per-class classification report.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .losses import SurvivalLabels

# two-sided 95% normal quantile
Z_95 = 1.959963984540054

RISK_GROUP_NAMES = ("low", "intermediate", "high")


class NonAdmissibleError(ValueError):
    """Raised when a survival metric has no evaluable pairs or events, e.g.
    a batch where every sample is censored."""


def concordance_index(hazard: np.ndarray, labels: SurvivalLabels) -> float:
    """Fraction of evaluable sample pairs whose hazard order matches their
    event order, counting hazard ties as half.

    A pair is evaluable when the earlier observed time is an event, or when
    times are equal and exactly one of the two is an event (the event sample
    is then the "earlier" one). Equal times with equal censor status carry
    no ordering information and are excluded. Higher hazard on the
    earlier-event sample is concordant; 1.0 is perfect ranking, 0.5 chance,
    0.0 perfect anti-ranking.
    """
    hazard = np.asarray(hazard, dtype=np.float64).reshape(-1)
    if hazard.shape[0] != len(labels):
        raise ValueError(f"hazard length {hazard.shape[0]} != batch size {len(labels)}")
    t = labels.time
    e = labels.event.astype(bool)
    ti, tj = t[:, None], t[None, :]
    ei, ej = e[:, None], e[None, :]
    evaluable = ((ti < tj) & ei) | ((ti == tj) & ei & ~ej)
    n_pairs = int(evaluable.sum())
    if n_pairs == 0:
        raise NonAdmissibleError(
            "no evaluable pairs: every pair is censored-blocked or time-tied"
        )
    hi, hj = hazard[:, None], hazard[None, :]
    concordant = int((evaluable & (hi > hj)).sum())
    tied = int((evaluable & (hi == hj)).sum())
    return (concordant + 0.5 * tied) / n_pairs


@dataclass
class KMCurve:
    """Product-limit survival estimate over the distinct event times.

    The step function starts at S(0) = 1; `survival[k]` is the value from
    just after `times[k]` until the next event time. `at_risk[k]` counts
    samples with observed time >= times[k].
    """

    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    n_samples: int


def km_estimator(labels: SurvivalLabels) -> KMCurve:
    """Kaplan-Meier estimate with plain (linear-scale) Greenwood 95% bands.

    S(t) = prod over event times u <= t of (1 - d_u / n_u). Censored-only
    times shrink later at-risk counts but add no step. Bands are
    S +/- z * S * sqrt(sum d / (n (n - d))), clipped to [0, 1]; once S
    reaches 0 the band collapses to [0, 0].
    """
    if len(labels) == 0:
        raise ValueError("km_estimator requires a non-empty batch")
    t, e = labels.time, labels.event
    event_times = np.unique(t[e == 1.0])
    if event_times.size == 0:
        return KMCurve(
            times=np.empty(0), survival=np.empty(0), at_risk=np.empty(0, dtype=int),
            events=np.empty(0, dtype=int), ci_low=np.empty(0), ci_high=np.empty(0),
            n_samples=len(labels),
        )
    at_risk = (t[None, :] >= event_times[:, None]).sum(axis=1)
    deaths = ((t[None, :] == event_times[:, None]) & (e[None, :] == 1.0)).sum(axis=1)
    survival = np.cumprod(1.0 - deaths / at_risk)
    with np.errstate(divide="ignore"):
        greenwood = np.where(
            at_risk > deaths, deaths / (at_risk * (at_risk - deaths)), np.inf
        )
    var = np.where(survival > 0.0, survival**2 * np.cumsum(greenwood), 0.0)
    half = Z_95 * np.sqrt(var)
    return KMCurve(
        times=event_times,
        survival=survival,
        at_risk=at_risk.astype(int),
        events=deaths.astype(int),
        ci_low=np.clip(survival - half, 0.0, 1.0),
        ci_high=np.clip(survival + half, 0.0, 1.0),
        n_samples=len(labels),
    )


def logrank_test(
    group_a: SurvivalLabels,
    group_b: SurvivalLabels,
    use_variance: bool = False,
) -> tuple[float, float]:
    """Observed-vs-expected event comparison between two groups.

    Default statistic: chi2 = sum over groups of (O_g - E_g)^2 / E_g with
    E_{g,t} = n_{g,t} d_t / n_t accumulated over distinct event times
    (1 degree of freedom). With use_variance=True the classic
    hypergeometric-variance form (O_a - E_a)^2 / V is used instead. The
    p-value is the chi-square(1) upper tail, erfc(sqrt(chi2 / 2)).
    """
    if len(group_a) == 0 or len(group_b) == 0:
        raise ValueError("both groups must be non-empty")
    ta, ea = group_a.time, group_a.event
    tb, eb = group_b.time, group_b.event
    event_times = np.unique(np.concatenate([ta[ea == 1.0], tb[eb == 1.0]]))
    if event_times.size == 0:
        raise NonAdmissibleError("log-rank test undefined: no events in either group")
    na = (ta[None, :] >= event_times[:, None]).sum(axis=1).astype(float)
    nb = (tb[None, :] >= event_times[:, None]).sum(axis=1).astype(float)
    da = ((ta[None, :] == event_times[:, None]) & (ea[None, :] == 1.0)).sum(axis=1)
    db = ((tb[None, :] == event_times[:, None]) & (eb[None, :] == 1.0)).sum(axis=1)
    n = na + nb
    d = (da + db).astype(float)
    exp_a = (na * d / n).sum()
    exp_b = (nb * d / n).sum()
    obs_a = float(da.sum())
    obs_b = float(db.sum())
    if use_variance:
        with np.errstate(invalid="ignore", divide="ignore"):
            var_terms = np.where(
                n > 1.0, na * nb * d * (n - d) / (n**2 * (n - 1.0)), 0.0
            )
        variance = var_terms.sum()
        chi2 = (obs_a - exp_a) ** 2 / variance if variance > 0 else 0.0
    else:
        chi2 = 0.0
        for obs, exp in ((obs_a, exp_a), (obs_b, exp_b)):
            if exp > 0.0:
                chi2 += (obs - exp) ** 2 / exp
    p = math.erfc(math.sqrt(chi2 / 2.0))
    return float(chi2), float(p)


@dataclass
class RiskGroups:
    """Tertile assignment of samples by hazard score (0=low, 1=intermediate,
    2=high) plus the percentile cut values used."""

    assignment: np.ndarray
    cut_values: tuple[float, float]
    percentiles: tuple[float, float]
    degenerate: bool = False

    def indices(self, group: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == group)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(int((self.assignment == g).sum()) for g in range(3))


def stratify_percentile(
    hazard: np.ndarray, cuts: tuple[float, float] = (33.0, 66.0)
) -> RiskGroups:
    """Split samples at the given hazard percentiles (linear-interpolation
    quantiles): hazard <= P_low -> low, <= P_high -> intermediate, else high.

    When every hazard is identical all samples land in `low`; the result is
    flagged degenerate and a warning is emitted.
    """
    hazard = np.asarray(hazard, dtype=np.float64).reshape(-1)
    if hazard.shape[0] < 3:
        raise ValueError(f"stratification needs >= 3 samples, got {hazard.shape[0]}")
    lo, hi = (float(np.percentile(hazard, c)) for c in cuts)
    assignment = np.where(hazard <= lo, 0, np.where(hazard <= hi, 1, 2)).astype(np.int8)
    degenerate = len(np.unique(assignment)) < 3
    if degenerate:
        warnings.warn(
            f"degenerate stratification: cut values {lo:g}/{hi:g} produce "
            f"group sizes {tuple(int((assignment == g).sum()) for g in range(3))}",
            stacklevel=2,
        )
    return RiskGroups(
        assignment=assignment,
        cut_values=(lo, hi),
        percentiles=(float(cuts[0]), float(cuts[1])),
        degenerate=degenerate,
    )


@dataclass
class ClassificationReport:
    confusion: np.ndarray           # rows = truth, cols = prediction
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: float
    empty_classes: list[int] = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return self.confusion.shape[0]


def classification_report(
    pred: np.ndarray, truth: np.ndarray, n_classes: int
) -> ClassificationReport:
    """Confusion matrix plus per-class precision/recall/F1 (0/0 -> 0).

    Classes with zero support are reported with precision = recall = 0 and
    listed in `empty_classes`.
    """
    pred = np.asarray(pred).astype(int).reshape(-1)
    truth = np.asarray(truth).astype(int).reshape(-1)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: pred {pred.shape} vs truth {truth.shape}")
    if pred.size == 0:
        raise ValueError("classification_report requires at least one sample")
    for name, arr in (("pred", pred), ("truth", truth)):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise ValueError(f"{name} labels outside [0, {n_classes})")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (truth, pred), 1)
    tp = np.diag(confusion).astype(float)
    support = confusion.sum(axis=1)
    predicted = confusion.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2 * precision * recall / pr, 0.0)
    return ClassificationReport(
        confusion=confusion,
        precision=precision,
        recall=recall,
        f1=f1,
        support=support,
        accuracy=float(tp.sum() / pred.size),
        empty_classes=[int(c) for c in np.flatnonzero(support == 0)],
    )
