# recps/services/scoring.py
# Per-interaction privacy scores (max ln(TPR/FPR) over OUT thresholds) and user means
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple, Union

import numpy as np
import pandas as pd

from recps.services.dataset import TRAIN
from recps.services.shadow import ShadowEnsemble, ensemble_phi
from recps.services.stats import lambda_statistic
from recps.utils.exceptions import DegenerateMembershipError, EvaluationError, MissingInputError

logger = logging.getLogger(__name__)

INTERACTIONS_FILE = "interactions.csv"
USERS_FILE = "users.csv"
RESIDUAL_FILE = "residual.csv"
FLOAT_FORMAT = "%.17g"
# Boolean cells per comparison block in batched scoring
BLOCK_CELLS = 1 << 22


def _log_ratio_block(lambdas: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """
    Scores for a block of interactions: lambdas and labels are (m, c).

    For every OUT model j the threshold t = lambdas[j] predicts IN for the
    models with lambda strictly above t. Thresholds with FPR = 0 (or TPR = 0)
    contribute nothing; the result is floored at 0.
    """
    in_mask = labels.astype(bool)
    out_mask = ~in_mask
    n_in = in_mask.sum(axis=0)
    n_out = out_mask.sum(axis=0)
    # above[k, j, c]: model k predicted IN at the threshold of model j
    above = lambdas[:, None, :] > lambdas[None, :, :]
    tp = np.einsum("kjc,kc->jc", above, in_mask, dtype=np.int64)
    fp = np.einsum("kjc,kc->jc", above, out_mask, dtype=np.int64)
    valid = out_mask & (fp > 0) & (tp > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = (np.log(tp) - np.log(n_in)) - (np.log(fp) - np.log(n_out))
    log_ratio = np.where(valid, log_ratio, -np.inf)
    return np.maximum(log_ratio.max(axis=0, initial=-np.inf), 0.0)


def max_log_ratio_batch(lambdas: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Score every column of (m, n) lambdas / membership labels; all-IN or all-OUT columns give nan."""
    lambdas = np.asarray(lambdas, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    m, n = lambdas.shape
    scores = np.full(n, np.nan)
    in_counts = labels.sum(axis=0)
    ok = np.flatnonzero((in_counts > 0) & (in_counts < m))
    step = max(1, BLOCK_CELLS // max(m * m, 1))
    for start in range(0, ok.size, step):
        cols = ok[start:start + step]
        scores[cols] = _log_ratio_block(lambdas[:, cols], labels[:, cols])
    return scores


def max_log_ratio(lambdas, labels) -> float:
    """
    max over OUT-derived thresholds t (FPR != 0) of ln(TPR/FPR) for one
    interaction's m (lambda, membership) pairs, or 0 if none qualifies.
    """
    lambdas = np.asarray(lambdas, dtype=np.float64).reshape(-1, 1)
    labels = np.asarray(labels, dtype=bool).reshape(-1, 1)
    if labels.all() or not labels.any():
        raise ValueError("max_log_ratio needs both IN and OUT models")
    return float(_log_ratio_block(lambdas, labels)[0])


def global_threshold_batch(lambdas: np.ndarray, labels: np.ndarray, t: float = 0.5) -> np.ndarray:
    """Fixed-threshold ln(TPR/FPR) of the rule lambda > t per column; all-IN or all-OUT columns give nan."""
    lambdas = np.asarray(lambdas, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_in = labels.sum(axis=0)
    n_out = labels.shape[0] - n_in
    predicted = lambdas > t
    tp = (predicted & labels).sum(axis=0)
    fp = (predicted & ~labels).sum(axis=0)
    valid = (tp > 0) & (fp > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = (np.log(tp) - np.log(n_in)) - (np.log(fp) - np.log(n_out))
    scores = np.maximum(np.where(valid, log_ratio, 0.0), 0.0)
    return np.where((n_in > 0) & (n_out > 0), scores, np.nan)


def global_threshold_score(lambdas, labels, t: float = 0.5) -> float:
    """Fixed-threshold diagnostic: ln(TPR/FPR) of the rule lambda > t, 0 when undefined or negative."""
    lambdas = np.asarray(lambdas, dtype=np.float64).reshape(-1, 1)
    labels = np.asarray(labels, dtype=bool).reshape(-1, 1)
    if labels.all() or not labels.any():
        raise ValueError("global_threshold_score needs both IN and OUT models")
    return float(global_threshold_batch(lambdas, labels, t)[0])


def _interaction_inputs(ensemble: ShadowEnsemble, interaction: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    user, item = interaction
    column = ensemble.column_of(user, item)
    labels = ensemble.membership[:, column]
    in_count = int(labels.sum())
    if in_count == 0 or in_count == ensemble.m:
        raise DegenerateMembershipError((int(user), int(item)), in_count, ensemble.m)
    lambdas = lambda_statistic(ensemble_phi(ensemble, (user, item)), ensemble.out_dist)
    return lambdas, labels


def score_interaction(ensemble: ShadowEnsemble, interaction: Tuple[int, int]) -> float:
    """
    Privacy score of one training interaction from the shadow models alone.

    Raises:
        DegenerateMembershipError: the interaction is IN for all or none of the shadows
        VocabularyError: user or item outside the ensemble vocabulary
    """
    lambdas, labels = _interaction_inputs(ensemble, interaction)
    return max_log_ratio(lambdas, labels)


def exact_mean(values: Iterable[float]) -> float:
    values = list(values)
    if not values:
        raise EvaluationError("Cannot average an empty set of interaction scores")
    return math.fsum(values) / len(values)


def score_user(ensemble: ShadowEnsemble, user: int, interactions: Optional[Iterable[int]] = None) -> float:
    """Mean interaction score over I_u (default: the user's training items)."""
    items = ensemble.dataset.user_items(user, split=TRAIN) if interactions is None else list(interactions)
    if len(items) == 0:
        raise EvaluationError(f"User {user} has no training interactions to score", {"user": int(user)})
    return exact_mean(score_interaction(ensemble, (user, int(item))) for item in items)


def score_query(ensemble: ShadowEnsemble, user: int) -> Tuple[Dict[int, float], float]:
    """All interaction scores of a user plus their mean, computed with m predictions per interaction."""
    items = ensemble.dataset.user_items(user, split=TRAIN)
    if items.size == 0:
        raise EvaluationError(f"User {user} has no training interactions to score", {"user": int(user)})
    lambdas = np.empty((ensemble.m, items.size))
    labels = np.empty((ensemble.m, items.size), dtype=bool)
    for c, item in enumerate(items):
        lambdas[:, c], labels[:, c] = _interaction_inputs(ensemble, (user, int(item)))
    scores = max_log_ratio_batch(lambdas, labels)
    per_item = {int(item): float(score) for item, score in zip(items, scores)}
    return per_item, exact_mean(per_item.values())


@dataclass
class ScoreTable:
    """
    Scores keyed by raw user/item keys.

    `interactions` has columns user, item, score; `users` has user, score,
    n_interactions in dataset user order; `residual` lists interactions that
    could not be scored (user, item, in_count).
    """

    interactions: pd.DataFrame
    users: pd.DataFrame
    residual: pd.DataFrame
    ensemble_ref: str
    created_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))

    @property
    def interaction_scores(self) -> Dict[Tuple[str, str], float]:
        return {(u, i): float(s) for u, i, s in self.interactions[["user", "item", "score"]].itertuples(index=False)}

    @property
    def user_scores(self) -> Dict[str, float]:
        return dict(zip(self.users["user"], self.users["score"].astype(float)))

    def __len__(self) -> int:
        return len(self.interactions)


def _user_means(frame: pd.DataFrame, user_order: Dict[str, int]) -> pd.DataFrame:
    grouped = frame.groupby("user", sort=False)["score"]
    users = pd.DataFrame(
        {
            "score": grouped.agg(lambda s: math.fsum(s) / len(s)),
            "n_interactions": grouped.size(),
        }
    ).reset_index()
    users["_order"] = users["user"].map(user_order)
    return users.sort_values("_order", kind="stable").drop(columns="_order").reset_index(drop=True)


def build_score_table(
    ensemble: ShadowEnsemble, users: Optional[Iterable[int]] = None, global_threshold: Optional[float] = None
) -> ScoreTable:
    """
    Score every training interaction of the ensemble dataset (or of the given
    users) and aggregate user means. Degenerate interactions go to `residual`.

    With global_threshold set, interactions also get a `global_score` column:
    the fixed-threshold diagnostic, never used for the user means.
    """
    ds = ensemble.dataset
    positions = ensemble.positions
    columns = np.arange(positions.size)
    if users is not None:
        wanted = np.asarray(sorted({int(u) for u in users}), dtype=np.int64)
        for user in wanted:
            ds.check_user(user)
        columns = columns[np.isin(ds.users[positions], wanted)]

    lambdas = lambda_statistic(ensemble.phi_matrix()[:, columns], ensemble.out_dist)
    labels = ensemble.membership[:, columns]
    scores = max_log_ratio_batch(lambdas, labels)

    user_keys = np.asarray(ds.user_ids, dtype=object)[ds.users[positions[columns]]]
    item_keys = np.asarray(ds.item_ids, dtype=object)[ds.items[positions[columns]]]
    degenerate = np.isnan(scores)
    residual = pd.DataFrame(
        {
            "user": user_keys[degenerate],
            "item": item_keys[degenerate],
            "in_count": labels[:, degenerate].sum(axis=0).astype(int),
        }
    )
    if degenerate.any():
        logger.warning(f"{int(degenerate.sum())} interactions are IN for all or none of the shadows; left unscored")

    interactions = pd.DataFrame(
        {"user": user_keys[~degenerate], "item": item_keys[~degenerate], "score": scores[~degenerate]}
    )
    if global_threshold is not None:
        diagnostic = global_threshold_batch(lambdas, labels, global_threshold)
        interactions["global_score"] = diagnostic[~degenerate]
    user_table = _user_means(interactions, ds.user_index)
    logger.info(f"Scored {len(interactions)} interactions of {len(user_table)} users")
    return ScoreTable(
        interactions=interactions.reset_index(drop=True),
        users=user_table,
        residual=residual,
        ensemble_ref=ensemble.digest or "unsaved",
    )


def _write_csv(frame: pd.DataFrame, path: Path, ensemble_ref: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# ensemble={ensemble_ref}\n")
        frame.to_csv(fh, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def save_score_table(table: ScoreTable, directory: Union[str, Path]) -> Path:
    """Write interactions.csv, users.csv and residual.csv; each starts with the ensemble digest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    columns = ["user", "item", "score"]
    if "global_score" in table.interactions:
        columns.append("global_score")
    _write_csv(table.interactions[columns], directory / INTERACTIONS_FILE, table.ensemble_ref)
    _write_csv(table.users[["user", "score", "n_interactions"]], directory / USERS_FILE, table.ensemble_ref)
    _write_csv(table.residual[["user", "item", "in_count"]], directory / RESIDUAL_FILE, table.ensemble_ref)
    logger.info(f"Wrote score table ({len(table)} interactions) to {directory}")
    return directory


def _read_csv(path: Path) -> Tuple[pd.DataFrame, str]:
    if not path.is_file():
        raise MissingInputError(str(path))
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
    ref = first.split("=", 1)[1] if first.startswith("# ensemble=") else "unknown"
    frame = pd.read_csv(
        path, comment=None, skiprows=1, dtype={"user": str, "item": str}, keep_default_na=False
    )
    return frame, ref


def load_score_table(directory: Union[str, Path]) -> ScoreTable:
    directory = Path(directory)
    interactions, ref = _read_csv(directory / INTERACTIONS_FILE)
    users, _ = _read_csv(directory / USERS_FILE)
    residual_path = directory / RESIDUAL_FILE
    if residual_path.is_file():
        residual, _ = _read_csv(residual_path)
    else:
        residual = pd.DataFrame(columns=["user", "item", "in_count"])
    interactions["score"] = interactions["score"].astype(float)
    users["score"] = users["score"].astype(float)
    return ScoreTable(interactions=interactions, users=users, residual=residual, ensemble_ref=ref)
