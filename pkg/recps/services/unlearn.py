# recps/services/unlearn.py
# Score-guided removal experiments: remove, retrain from scratch, re-score, compare
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from recps.schemas.run import RemovalPlan, RunConfig
from recps.services.attack_eval import format_metric, hit_rate_at_k, write_metrics
from recps.services.dataset import TRAIN, InteractionDataset, remove_interactions
from recps.services.pipeline import train_target
from recps.services.scoring import ScoreTable, build_score_table
from recps.services.shadow import build_ensemble
from recps.utils.exceptions import RemovalError
from recps.utils.hashing import derive_seed

logger = logging.getLogger(__name__)


@dataclass
class RemovalSet:
    """Interactions a plan takes out of D, keyed by raw user/item keys."""

    plan: RemovalPlan
    targeted_users: List[str]
    pairs: pd.DataFrame
    counts: Dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass
class RemovalReport:
    mode: str
    hr_before: float
    hr_after: float
    hr_drop_pct: float
    cutoff_theta: float
    targeted_users: int
    removed_interactions: int
    emptied_users: int
    rescored_users: int
    reduced_user_fraction: float
    histogram: pd.DataFrame
    hr_k: int = 100

    def metrics(self) -> Dict[str, Union[str, float, int]]:
        return {
            "mode": self.mode,
            f"hr@{self.hr_k}_before": self.hr_before,
            f"hr@{self.hr_k}_after": self.hr_after,
            "hr_drop_pct": self.hr_drop_pct,
            "cutoff_theta": self.cutoff_theta,
            "targeted_users": self.targeted_users,
            "removed_interactions": self.removed_interactions,
            "emptied_users": self.emptied_users,
            "rescored_users": self.rescored_users,
            "reduced_user_fraction": self.reduced_user_fraction,
        }


def _ranked_candidates(table: ScoreTable) -> Dict[str, pd.DataFrame]:
    """Per user: scored interactions by score desc then item key, residual interactions last."""
    scored = table.interactions[["user", "item", "score"]].sort_values(
        ["user", "score", "item"], ascending=[True, False, True], kind="stable"
    )
    residual = table.residual[["user", "item"]].sort_values(["user", "item"], kind="stable")
    ranked = pd.concat([scored[["user", "item"]], residual], ignore_index=True)
    return {user: group.reset_index(drop=True) for user, group in ranked.groupby("user", sort=False)}


def target_users(table: ScoreTable, fraction: float) -> Tuple[List[str], float]:
    """Top round(fraction x n) users by score (at least one), ties in table order; returns them and θ."""
    if table.users.empty:
        raise RemovalError("Cannot plan a removal from an empty score table")
    count = max(1, int(math.floor(fraction * len(table.users) + 0.5)))
    order = np.argsort(-table.users["score"].to_numpy(dtype=np.float64), kind="stable")[:count]
    chosen = table.users.iloc[order]
    return chosen["user"].tolist(), float(chosen["score"].min())


def plan_removal(table: ScoreTable, plan: RemovalPlan) -> RemovalSet:
    """
    Pick the interactions to remove.

    user-level takes every training interaction of the targeted users;
    interaction-level takes each targeted user's top floor(fraction x n_u) by
    score; random-interaction takes the same count per user uniformly at
    random (seeded).
    """
    users, theta = target_users(table, plan.target_user_fraction)
    candidates = _ranked_candidates(table)
    rng = np.random.default_rng(derive_seed(plan.seed, "random-removal"))

    chosen: List[pd.DataFrame] = []
    counts: Dict[str, int] = {}
    for user in users:
        pool = candidates.get(user)
        if pool is None:
            continue
        if plan.mode == "user-level":
            take = len(pool)
        else:
            take = int(math.floor(plan.interaction_fraction * len(pool) + 1e-9))
        if plan.mode == "random-interaction":
            picked = pool.iloc[np.sort(rng.choice(len(pool), size=take, replace=False))]
        else:
            picked = pool.iloc[:take]
        counts[user] = take
        chosen.append(picked)

    pairs = pd.concat(chosen, ignore_index=True) if chosen else pd.DataFrame(columns=["user", "item"])
    logger.info(
        f"{plan.mode} removal: {len(pairs)} interactions of {len(users)} targeted users (theta={theta:.6f})"
    )
    return RemovalSet(
        plan=plan.model_copy(update={"cutoff_theta": theta}),
        targeted_users=users,
        pairs=pairs,
        counts=counts,
    )


def apply_removal(ds: InteractionDataset, removal: RemovalSet) -> InteractionDataset:
    users = removal.pairs["user"].map(ds.user_index)
    items = removal.pairs["item"].map(ds.item_index)
    if users.isna().any() or items.isna().any():
        raise RemovalError("Removal set references users or items outside the dataset")
    pairs = np.column_stack([users.to_numpy(dtype=np.int64), items.to_numpy(dtype=np.int64)])
    return remove_interactions(ds, pairs)


def score_difference_histogram(
    before: ScoreTable, after: ScoreTable, bin_width: float = 0.005
) -> Tuple[pd.DataFrame, np.ndarray]:
    """
    Histogram of (new - old) user scores over users present in both tables.

    Bins have a fixed width and cover a symmetric range around 0 wide enough
    for every difference; counts sum to the number of compared users.
    """
    merged = before.users[["user", "score"]].merge(
        after.users[["user", "score"]], on="user", suffixes=("_before", "_after")
    )
    diffs = (merged["score_after"] - merged["score_before"]).to_numpy(dtype=np.float64)
    widest = float(np.max(np.abs(diffs))) if diffs.size else 0.0
    half_bins = max(1, int(math.ceil(widest / bin_width)))
    # the quotient can round down past a bin edge
    while bin_width * half_bins < widest:
        half_bins += 1
    edges = bin_width * np.arange(-half_bins, half_bins + 1)
    counts, _ = np.histogram(diffs, bins=edges)
    return pd.DataFrame({"bin_start": edges[:-1], "frequency": counts}), diffs


def reduced_fraction(after: ScoreTable, targeted: List[str], theta: float) -> Tuple[float, int]:
    """
    Share of re-scored targeted users now strictly below θ, and how many were re-scored.

    NaN when no targeted user has a score after removal (every user-level arm).
    """
    scores = after.user_scores
    rescored = [scores[user] for user in targeted if user in scores]
    if not rescored:
        return float("nan"), 0
    return float(np.mean(np.asarray(rescored) < theta)), len(rescored)


def run_removal_experiment(
    ds: InteractionDataset,
    config: RunConfig,
    plan: RemovalPlan,
    baseline: ScoreTable,
    hr_before: Optional[float] = None,
) -> Tuple[RemovalReport, RemovalSet, ScoreTable]:
    """
    Remove per plan, retrain the target and a fresh shadow ensemble from
    scratch on the reduced D, and compare against the baseline.

    θ comes from the baseline table only.
    """
    removal = plan_removal(baseline, plan)
    reduced = apply_removal(ds, removal)
    if hr_before is None:
        hr_before = hit_rate_at_k(train_target(ds, config), ds, config.hr_k)
    hr_after = hit_rate_at_k(train_target(reduced, config), reduced, config.hr_k)

    ensemble = build_ensemble(
        reduced,
        config.num_shadows,
        config.train_config(),
        config.seed,
        family=config.family,
        out_sample_cap=config.out_sample_cap,
        workers=config.workers,
    )
    after = build_score_table(ensemble)

    train_counts = np.bincount(reduced.users[reduced.split == TRAIN], minlength=reduced.num_users)
    emptied = sum(1 for user in removal.targeted_users if train_counts[reduced.user_index[user]] == 0)
    theta = removal.plan.cutoff_theta
    fraction, rescored = reduced_fraction(after, removal.targeted_users, theta)
    histogram, _ = score_difference_histogram(baseline, after, config.histogram_bin_width)

    report = RemovalReport(
        mode=plan.mode,
        hr_before=hr_before,
        hr_after=hr_after,
        hr_drop_pct=(hr_before - hr_after) / hr_before * 100.0 if hr_before > 0 else 0.0,
        cutoff_theta=theta,
        targeted_users=len(removal.targeted_users),
        removed_interactions=len(removal),
        emptied_users=emptied,
        rescored_users=rescored,
        reduced_user_fraction=fraction,
        histogram=histogram,
        hr_k=config.hr_k,
    )
    logger.info(
        f"{plan.mode}: HR@{config.hr_k} {hr_before:.4f} -> {hr_after:.4f}, "
        f"{fraction:.1%} of {rescored} re-scored targeted users below theta"
    )
    return report, removal, after


def write_removal_report(report: RemovalReport, removal: RemovalSet, directory: Union[str, Path]) -> Path:
    """plan.txt, metrics.txt, histogram.csv (bin_start,frequency) and removed.csv."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    plan_lines = "".join(
        f"{key}={format_metric(value)}\n" for key, value in removal.plan.model_dump(mode="json").items()
    )
    (directory / "plan.txt").write_text(plan_lines, encoding="utf-8")
    write_metrics(report.metrics(), directory / "metrics.txt")
    report.histogram.to_csv(directory / "histogram.csv", index=False, float_format="%.6g", lineterminator="\n")
    removal.pairs[["user", "item"]].to_csv(directory / "removed.csv", index=False, lineterminator="\n")
    logger.info(f"Wrote {report.mode} removal report to {directory}")
    return directory
