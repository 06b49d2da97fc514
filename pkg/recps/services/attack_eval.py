# recps/services/attack_eval.py
# Membership-inference evaluation of a target model: ROC, AUC, low-FPR TPR, HR@k
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from recps.models.base import RecModel
from recps.services.dataset import TEST, InteractionDataset
from recps.services.ranking import hit_rate
from recps.services.shadow import ShadowEnsemble, TargetRun
from recps.services.stats import lambda_statistic, phi_from_probability
from recps.utils.exceptions import EvaluationError, VocabularyError
from recps.utils.hashing import derive_seed

logger = logging.getLogger(__name__)

LOW_FPR_GRID = (1e-4, 1e-3, 1e-2, 1e-1)
GLOBAL_THRESHOLD = 0.5


@dataclass(frozen=True)
class RocCurve:
    """
    Exact ROC: point i > 0 predicts IN for statistics >= thresholds[i - 1];
    point 0 is (0, 0).
    """

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float
    score_name: str = "recps"

    @property
    def points(self) -> list:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def _check_vocabulary(ensemble: ShadowEnsemble, target: RecModel) -> None:
    ds = ensemble.dataset
    if (target.num_users, target.num_items) != (ds.num_users, ds.num_items):
        raise VocabularyError(
            f"Target vocabulary ({target.num_users} users, {target.num_items} items) does not match "
            f"the ensemble dataset ({ds.num_users} users, {ds.num_items} items)",
            {"target": [target.num_users, target.num_items], "ensemble": [ds.num_users, ds.num_items]},
        )


def attack_statistics(
    ensemble: ShadowEnsemble, target: RecModel, users: Iterable[int], items: Iterable[int]
) -> np.ndarray:
    """Λ of the target's predictions under the ensemble's OUT distribution."""
    _check_vocabulary(ensemble, target)
    probabilities = target.predict_many(users, items)
    return lambda_statistic(phi_from_probability(probabilities), ensemble.out_dist)


def attack_statistic(ensemble: ShadowEnsemble, target: RecModel, interaction: Tuple[int, int]) -> float:
    user, item = interaction
    return float(attack_statistics(ensemble, target, [user], [item])[0])


def _as_arrays(statistics, labels) -> Tuple[np.ndarray, np.ndarray]:
    if labels is None:
        pairs = np.asarray(list(statistics), dtype=np.float64).reshape(-1, 2)
        statistics, labels = pairs[:, 0], pairs[:, 1]
    return np.asarray(statistics, dtype=np.float64).ravel(), np.asarray(labels).astype(bool).ravel()


def roc(statistics, labels: Optional[Sequence[int]] = None, score_name: str = "recps") -> RocCurve:
    """
    Sweep every distinct statistic value as a threshold.

    Accepts either a list of (statistic, membership bit) pairs or two
    aligned arrays.

    Raises:
        EvaluationError: only one class present
    """
    scores, truth = _as_arrays(statistics, labels)
    positives = int(truth.sum())
    negatives = int(truth.size - positives)
    if positives == 0 or negatives == 0:
        raise EvaluationError(
            "ROC needs both members and non-members",
            {"members": positives, "non_members": negatives},
        )
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_truth = truth[order]
    last_of_value = np.r_[np.flatnonzero(np.diff(sorted_scores) != 0), scores.size - 1]
    tps = np.cumsum(sorted_truth)[last_of_value]
    fps = (last_of_value + 1) - tps
    tpr = np.r_[0.0, tps / positives]
    fpr = np.r_[0.0, fps / negatives]
    return RocCurve(
        fpr=fpr,
        tpr=tpr,
        thresholds=sorted_scores[last_of_value],
        auc=float(np.trapezoid(tpr, fpr)),
        score_name=score_name,
    )


def tpr_at_fpr(curve: RocCurve, fpr: float) -> float:
    """Largest TPR reachable without exceeding the given FPR."""
    allowed = curve.fpr <= fpr + 1e-12
    return float(curve.tpr[allowed].max())


def low_fpr_readout(curve: RocCurve, grid: Sequence[float] = LOW_FPR_GRID) -> Dict[float, float]:
    return {level: tpr_at_fpr(curve, level) for level in grid}


def max_log_ratio_from_roc(curve: RocCurve, thresholds: Optional[Sequence[float]] = None) -> float:
    """
    Best ln(TPR/FPR) over ROC points with FPR > 0, floored at 0.

    With `thresholds`, only the points whose prediction rule equals
    "statistic > t" for some t are considered, so passing an interaction's
    OUT-model Λ values reproduces its privacy score.
    """
    if thresholds is None:
        index = np.arange(curve.fpr.size)
    else:
        # number of distinct curve thresholds strictly above t is the point index of "> t"
        descending = curve.thresholds
        index = np.array([int(np.sum(descending > t)) for t in np.asarray(thresholds, dtype=np.float64)])
    fpr, tpr = curve.fpr[index], curve.tpr[index]
    valid = (fpr > 0) & (tpr > 0)
    if not valid.any():
        return 0.0
    return max(0.0, float(np.max(np.log(tpr[valid]) - np.log(fpr[valid]))))


def global_threshold_rates(
    statistics, labels: Optional[Sequence[int]] = None, t: float = GLOBAL_THRESHOLD
) -> Tuple[float, float]:
    """(TPR, FPR) of the trivial rule statistic > t."""
    scores, truth = _as_arrays(statistics, labels)
    if truth.all() or not truth.any():
        raise EvaluationError("Global threshold rates need both members and non-members")
    predicted = scores > t
    return float(predicted[truth].mean()), float(predicted[~truth].mean())


def hit_rate_at_k(model: RecModel, ds: InteractionDataset, k: int = 100) -> float:
    """
    HR@k on the test split: share of users whose held-out test item ranks in
    the top k among all items outside their train and validation sets.
    """
    if ds.split_positions(TEST).size == 0:
        raise EvaluationError("HR@k needs a non-empty test split")
    return hit_rate(model, ds, TEST, k)


def build_evaluation_population(
    members: Tuple[np.ndarray, np.ndarray],
    nonmembers: Tuple[np.ndarray, np.ndarray],
    n_members: int,
    n_nonmembers: int,
    seed: int,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Seeded sample of member and non-member (user, item) pairs.

    Each class is sampled without replacement up to its requested count;
    returns aligned users, items and labels (members first).
    """
    rng = np.random.default_rng(derive_seed(seed, "evaluation"))
    users, items, labels = [], [], []
    for (pool_users, pool_items), count, label in ((members, n_members, 1), (nonmembers, n_nonmembers, 0)):
        pool_users = np.asarray(pool_users, dtype=np.int64)
        take = min(int(count), pool_users.size)
        chosen = np.sort(rng.choice(pool_users.size, size=take, replace=False))
        users.append(pool_users[chosen])
        items.append(np.asarray(pool_items, dtype=np.int64)[chosen])
        labels.append(np.full(take, label, dtype=np.int8))
    return np.concatenate(users), np.concatenate(items), np.concatenate(labels)


@dataclass
class AttackReport:
    curve: RocCurve
    low_fpr: Dict[float, float]
    global_tpr: float
    global_fpr: float
    hit_rate: float
    hr_k: int
    members: int
    nonmembers: int
    extra: Dict[str, Union[str, float, int]] = field(default_factory=dict)

    def metrics(self) -> Dict[str, Union[str, float, int]]:
        values: Dict[str, Union[str, float, int]] = {"auc": self.curve.auc}
        for level, tpr in self.low_fpr.items():
            values[f"tpr@{level:g}"] = tpr
        values["max_log_ratio"] = max_log_ratio_from_roc(self.curve)
        values["global_tpr@0.5"] = self.global_tpr
        values["global_fpr@0.5"] = self.global_fpr
        values[f"hr@{self.hr_k}"] = self.hit_rate
        values["members"] = self.members
        values["nonmembers"] = self.nonmembers
        values.update(self.extra)
        return values


def evaluate_attack(ensemble: ShadowEnsemble, target: TargetRun, hr_k: int = 100) -> AttackReport:
    """Run the likelihood-ratio attack against the stored target and collect the metrics."""
    statistics = attack_statistics(ensemble, target.model, target.eval_users, target.eval_items)
    curve = roc(statistics, target.eval_labels)
    global_tpr, global_fpr = global_threshold_rates(statistics, target.eval_labels)
    members = int(target.eval_labels.sum())
    report = AttackReport(
        curve=curve,
        low_fpr=low_fpr_readout(curve),
        global_tpr=global_tpr,
        global_fpr=global_fpr,
        hit_rate=hit_rate_at_k(target.model, target.dataset, hr_k),
        hr_k=hr_k,
        members=members,
        nonmembers=int(target.eval_labels.size - members),
    )
    logger.info(f"Attack AUC={curve.auc:.4f} on {members} members / {report.nonmembers} non-members")
    return report


def write_roc_csv(curve: RocCurve, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"fpr": curve.fpr, "tpr": curve.tpr}).to_csv(
        path, index=False, float_format="%.17g", lineterminator="\n"
    )
    return path


def format_metric(value) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def write_metrics(metrics: Dict[str, Union[str, float, int]], path: Union[str, Path]) -> Path:
    """Flat key=value text file, one metric per line in insertion order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{key}={format_metric(value)}\n" for key, value in metrics.items()), encoding="utf-8")
    return path


def read_metrics(path: Union[str, Path]) -> Dict[str, str]:
    values = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line and not line.startswith("#"):
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values
