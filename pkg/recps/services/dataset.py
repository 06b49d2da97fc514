# recps/services/dataset.py
# Interaction logs: ingestion, vocabularies, filtering, leave-two-out split, negatives
import io
import logging
import re
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from recps.schemas.interaction import Interaction, LabeledExample
from recps.utils.exceptions import (
    ConfigError,
    DatasetParseError,
    EmptyDatasetError,
    MissingInputError,
    NegativeSamplingError,
    SplitPreconditionError,
    VocabularyError,
)
from recps.utils.hashing import sha256_bytes

logger = logging.getLogger(__name__)

TRAIN, VALIDATION, TEST = 0, 1, 2
SPLIT_NAMES = {TRAIN: "train", VALIDATION: "validation", TEST: "test"}
SPLIT_CODES = {name: code for code, name in SPLIT_NAMES.items()}

SEPARATORS = {"tsv": "\t", "csv": ",", "movielens-dat": "::"}
HEADER_NAMES = {"user", "user_id", "userid"}
CANONICAL_HEADER = "# recps-dataset v1"
CANONICAL_COLUMNS = ["user", "item", "rating", "timestamp", "split"]


@dataclass(frozen=True, eq=False)
class InteractionDataset:
    """
    Immutable, indexed collection of interactions.

    Row r is the interaction (users[r], items[r]); ids are dense indices into
    user_ids / item_ids. Rows keep input file order. split[r] is TRAIN,
    VALIDATION or TEST; an unsplit dataset is all TRAIN.
    """

    user_ids: Tuple[str, ...]
    item_ids: Tuple[str, ...]
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    timestamps: np.ndarray
    has_timestamp: np.ndarray
    split: np.ndarray

    def __post_init__(self):
        for name in ("users", "items", "ratings", "timestamps", "has_timestamp", "split"):
            getattr(self, name).setflags(write=False)

    def __len__(self) -> int:
        return int(self.users.shape[0])

    @property
    def num_users(self) -> int:
        return len(self.user_ids)

    @property
    def num_items(self) -> int:
        return len(self.item_ids)

    @cached_property
    def user_index(self) -> Dict[str, int]:
        return {key: idx for idx, key in enumerate(self.user_ids)}

    @cached_property
    def item_index(self) -> Dict[str, int]:
        return {key: idx for idx, key in enumerate(self.item_ids)}

    @property
    def interactions(self) -> List[Interaction]:
        return [self.interaction(r) for r in range(len(self))]

    def interaction(self, row: int) -> Interaction:
        rating = self.ratings[row]
        return Interaction(
            user_id=self.user_ids[self.users[row]],
            item_id=self.item_ids[self.items[row]],
            rating=None if np.isnan(rating) else float(rating),
            timestamp=int(self.timestamps[row]) if self.has_timestamp[row] else None,
        )

    def split_positions(self, split: int) -> np.ndarray:
        return np.flatnonzero(self.split == split)

    def member_positions(self) -> np.ndarray:
        """Rows of the training set D: the records whose membership is audited."""
        return self.split_positions(TRAIN)

    def pair_codes(self, positions: Optional[np.ndarray] = None) -> np.ndarray:
        users = self.users if positions is None else self.users[positions]
        items = self.items if positions is None else self.items[positions]
        return users.astype(np.int64) * self.num_items + items

    @cached_property
    def positions_by_user(self) -> List[np.ndarray]:
        order = np.argsort(self.users, kind="stable")
        bounds = np.cumsum(np.bincount(self.users, minlength=self.num_users))
        return np.split(order, bounds[:-1]) if self.num_users else []

    def user_items(self, user: int, split: Optional[int] = None) -> np.ndarray:
        self.check_user(user)
        rows = self.positions_by_user[user]
        if split is not None:
            rows = rows[self.split[rows] == split]
        return self.items[rows]

    def check_user(self, user: int) -> None:
        if not 0 <= int(user) < self.num_users:
            raise VocabularyError(
                f"User id {user} outside vocabulary of {self.num_users} users",
                {"user": int(user), "num_users": self.num_users},
            )

    def check_item(self, item: int) -> None:
        if not 0 <= int(item) < self.num_items:
            raise VocabularyError(
                f"Item id {item} outside vocabulary of {self.num_items} items",
                {"item": int(item), "num_items": self.num_items},
            )

    def select(self, mask: np.ndarray) -> "InteractionDataset":
        """Rows where mask is true; vocabularies are kept so ids stay comparable."""
        mask = np.asarray(mask, dtype=bool)
        return InteractionDataset(
            user_ids=self.user_ids,
            item_ids=self.item_ids,
            users=self.users[mask].copy(),
            items=self.items[mask].copy(),
            ratings=self.ratings[mask].copy(),
            timestamps=self.timestamps[mask].copy(),
            has_timestamp=self.has_timestamp[mask].copy(),
            split=self.split[mask].copy(),
        )

    def with_split(self, split: np.ndarray) -> "InteractionDataset":
        return InteractionDataset(
            user_ids=self.user_ids,
            item_ids=self.item_ids,
            users=self.users.copy(),
            items=self.items.copy(),
            ratings=self.ratings.copy(),
            timestamps=self.timestamps.copy(),
            has_timestamp=self.has_timestamp.copy(),
            split=np.asarray(split, dtype=np.int8).copy(),
        )


@dataclass(frozen=True, eq=False)
class TrainingExamples:
    """Labelled (user, item) pairs: observed interactions and sampled negatives."""

    users: np.ndarray
    items: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def __iter__(self) -> Iterator[LabeledExample]:
        for user, item, label in zip(self.users, self.items, self.labels):
            yield LabeledExample(user=int(user), item=int(item), label=int(label))


def dataset_from_frame(frame: pd.DataFrame) -> InteractionDataset:
    """Dense vocabularies by first appearance; duplicate pairs keep the latest timestamp."""
    user_codes, user_vocab = pd.factorize(frame["user"], sort=False)
    item_codes, item_vocab = pd.factorize(frame["item"], sort=False)
    work = pd.DataFrame(
        {
            "user": user_codes.astype(np.int64),
            "item": item_codes.astype(np.int64),
            "rating": frame["rating"].to_numpy(dtype=np.float64),
            "timestamp": frame["timestamp"].to_numpy(dtype=np.float64),
            "order": np.arange(len(frame)),
        }
    )
    work["ts_key"] = work["timestamp"].fillna(-np.inf)
    work = (
        work.sort_values(["ts_key", "order"], kind="stable")
        .drop_duplicates(subset=["user", "item"], keep="last")
        .sort_values("order", kind="stable")
    )
    has_timestamp = work["timestamp"].notna().to_numpy()
    timestamps = np.where(has_timestamp, work["timestamp"].fillna(0).to_numpy(), 0).astype(np.int64)
    return InteractionDataset(
        user_ids=tuple(str(u) for u in user_vocab),
        item_ids=tuple(str(i) for i in item_vocab),
        users=work["user"].to_numpy(dtype=np.int64),
        items=work["item"].to_numpy(dtype=np.int64),
        ratings=work["rating"].to_numpy(dtype=np.float64),
        timestamps=timestamps,
        has_timestamp=has_timestamp,
        split=np.full(len(work), TRAIN, dtype=np.int8),
    )


def _parse_numeric(raw: pd.Series, line_numbers: np.ndarray, column: str, path: str) -> pd.Series:
    values = pd.to_numeric(raw.replace("", np.nan), errors="coerce")
    bad = raw.ne("").to_numpy() & values.isna().to_numpy()
    if bad.any():
        row = int(np.argmax(bad))
        raise DatasetParseError(f"Invalid {column} value '{raw.iloc[row]}'", int(line_numbers[row]), path)
    return values


def _parse_rows(text: str, sep: str, path: str) -> pd.DataFrame:
    lines = pd.Series(text.splitlines(), dtype=object)
    line_numbers = np.arange(1, len(lines) + 1)
    stripped = lines.str.strip()
    keep = ((stripped != "") & ~stripped.str.startswith("#")).to_numpy()
    lines, line_numbers = lines[keep].reset_index(drop=True), line_numbers[keep]
    if lines.empty:
        raise EmptyDatasetError(f"No interactions in {path}", {"path": path})

    first_field = lines.iloc[0].split(sep, 1)[0].strip().lower()
    if first_field in HEADER_NAMES:
        lines, line_numbers = lines.iloc[1:].reset_index(drop=True), line_numbers[1:]
        if lines.empty:
            raise EmptyDatasetError(f"No interactions in {path}", {"path": path})

    field_counts = (lines.str.count(re.escape(sep)) + 1).to_numpy()
    bad = (field_counts < 2) | (field_counts > 4)
    if bad.any():
        row = int(np.argmax(bad))
        raise DatasetParseError(
            f"Expected 2 to 4 fields (user, item, rating, timestamp), got {field_counts[row]}",
            int(line_numbers[row]),
            path,
        )

    parts = lines.str.split(sep, n=3, expand=True, regex=False).reindex(columns=range(4))
    parts = parts.fillna("").apply(lambda col: col.str.strip())
    for column, name in ((0, "user"), (1, "item")):
        empty = (parts[column] == "").to_numpy()
        if empty.any():
            raise DatasetParseError(f"Empty {name} id", int(line_numbers[int(np.argmax(empty))]), path)

    ratings = _parse_numeric(parts[2], line_numbers, "rating", path)
    out_of_range = (ratings.notna() & ((ratings < 1.0) | (ratings > 5.0))).to_numpy()
    if out_of_range.any():
        row = int(np.argmax(out_of_range))
        raise DatasetParseError(f"Rating {ratings.iloc[row]} outside [1, 5]", int(line_numbers[row]), path)

    timestamps = _parse_numeric(parts[3], line_numbers, "timestamp", path)
    fractional = (timestamps.notna() & (timestamps != np.floor(timestamps))).to_numpy()
    if fractional.any():
        row = int(np.argmax(fractional))
        raise DatasetParseError(f"Timestamp '{parts[3].iloc[row]}' is not an integer", int(line_numbers[row]), path)

    return pd.DataFrame({"user": parts[0], "item": parts[1], "rating": ratings, "timestamp": timestamps})


def ingest(path: Union[str, Path], fmt: str = "tsv") -> InteractionDataset:
    """
    Read a delimiter-separated interaction log.

    Columns are user, item, rating, timestamp (rating and timestamp optional).
    Blank lines and lines starting with '#' are ignored; a first row whose
    first field is 'user' is treated as a header.

    Args:
        path: Input file
        fmt: tsv, csv, movielens-dat ('::'-delimited) or canonical

    Returns:
        InteractionDataset with every interaction in the TRAIN split
    """
    path = Path(path)
    if fmt == "canonical":
        return load_dataset(path)
    if fmt not in SEPARATORS:
        raise DatasetParseError(f"Unknown dataset format '{fmt}'", path=str(path))
    if not path.is_file():
        raise MissingInputError(str(path))

    raw = path.read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        line_number = raw.count(b"\n", 0, e.start) + 1
        raise DatasetParseError(f"Invalid UTF-8 byte at offset {e.start}", line_number, str(path)) from e
    frame = _parse_rows(text, SEPARATORS[fmt], str(path))
    dataset = dataset_from_frame(frame)
    logger.info(
        f"Ingested {len(dataset)} interactions ({dataset.num_users} users, "
        f"{dataset.num_items} items) from {path}"
    )
    if len(frame) != len(dataset):
        logger.info(f"Dropped {len(frame) - len(dataset)} duplicate (user, item) rows")
    return dataset


def dataset_from_records(records: Sequence[Tuple]) -> InteractionDataset:
    """Build a dataset from (user, item[, rating[, timestamp]]) tuples, in order."""
    if not records:
        raise EmptyDatasetError("No interactions given")
    padded = [tuple(record) + (None,) * (4 - len(record)) for record in records]
    frame = pd.DataFrame(padded, columns=["user", "item", "rating", "timestamp"])
    frame["user"] = frame["user"].astype(str)
    frame["item"] = frame["item"].astype(str)
    frame["rating"] = pd.to_numeric(frame["rating"], errors="coerce")
    frame["timestamp"] = pd.to_numeric(frame["timestamp"], errors="coerce")
    return dataset_from_frame(frame)


def serialize_dataset(ds: InteractionDataset) -> str:
    """Canonical text form: version line, vocabulary lines, then TSV rows."""
    ratings = pd.Series(ds.ratings)
    timestamps = pd.Series(ds.timestamps)
    frame = pd.DataFrame(
        {
            "user": np.asarray(ds.user_ids, dtype=object)[ds.users] if len(ds) else [],
            "item": np.asarray(ds.item_ids, dtype=object)[ds.items] if len(ds) else [],
            "rating": ratings.map(lambda r: "" if np.isnan(r) else f"{r:g}"),
            "timestamp": timestamps.astype(str).where(ds.has_timestamp, ""),
            "split": pd.Series(ds.split).map(SPLIT_NAMES),
        },
        columns=CANONICAL_COLUMNS,
    )
    buffer = io.StringIO()
    buffer.write(CANONICAL_HEADER + "\n")
    buffer.write("\t".join(("#users",) + ds.user_ids) + "\n")
    buffer.write("\t".join(("#items",) + ds.item_ids) + "\n")
    frame.to_csv(buffer, sep="\t", index=False, lineterminator="\n")
    return buffer.getvalue()


def save_dataset(ds: InteractionDataset, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize_dataset(ds), encoding="utf-8")
    return path


def dataset_hash(ds: InteractionDataset) -> str:
    return sha256_bytes(serialize_dataset(ds).encode("utf-8"))


def load_dataset(path: Union[str, Path]) -> InteractionDataset:
    """Read a canonical dataset file written by save_dataset."""
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(str(path))
    text = path.read_text(encoding="utf-8")
    head = text.split("\n", 3)
    if len(head) < 4 or head[0] != CANONICAL_HEADER:
        raise DatasetParseError(f"Missing '{CANONICAL_HEADER}' header", 1, str(path))
    for line_number, (line, tag) in enumerate(((head[1], "#users"), (head[2], "#items")), start=2):
        if line.split("\t", 1)[0] != tag:
            raise DatasetParseError(f"Expected {tag} vocabulary line", line_number, str(path))
    user_ids = tuple(head[1].split("\t")[1:])
    item_ids = tuple(head[2].split("\t")[1:])

    frame = pd.read_csv(io.StringIO(head[3]), sep="\t", dtype=str, keep_default_na=False)
    user_index = {key: idx for idx, key in enumerate(user_ids)}
    item_index = {key: idx for idx, key in enumerate(item_ids)}
    try:
        users = frame["user"].map(user_index).to_numpy(dtype=np.int64)
        items = frame["item"].map(item_index).to_numpy(dtype=np.int64)
        split = frame["split"].map(SPLIT_CODES).to_numpy(dtype=np.int8)
    except (KeyError, ValueError, TypeError) as e:
        raise DatasetParseError(f"Row references an unknown user, item or split: {e}", path=str(path)) from e

    ratings = pd.to_numeric(frame["rating"].replace("", np.nan), errors="coerce").to_numpy(dtype=np.float64)
    raw_ts = pd.to_numeric(frame["timestamp"].replace("", np.nan), errors="coerce")
    has_timestamp = raw_ts.notna().to_numpy()
    return InteractionDataset(
        user_ids=user_ids,
        item_ids=item_ids,
        users=users,
        items=items,
        ratings=ratings,
        timestamps=raw_ts.fillna(0).to_numpy(dtype=np.int64),
        has_timestamp=has_timestamp,
        split=split,
    )


def _compact(ds: InteractionDataset, mask: np.ndarray) -> InteractionDataset:
    """Keep masked rows and renumber users/items, preserving vocabulary order."""
    users = ds.users[mask]
    items = ds.items[mask]
    kept_users, new_users = np.unique(users, return_inverse=True)
    kept_items, new_items = np.unique(items, return_inverse=True)
    return InteractionDataset(
        user_ids=tuple(ds.user_ids[u] for u in kept_users),
        item_ids=tuple(ds.item_ids[i] for i in kept_items),
        users=new_users.astype(np.int64),
        items=new_items.astype(np.int64),
        ratings=ds.ratings[mask].copy(),
        timestamps=ds.timestamps[mask].copy(),
        has_timestamp=ds.has_timestamp[mask].copy(),
        split=ds.split[mask].copy(),
    )


def filter_min_interactions(ds: InteractionDataset, min_count: int) -> InteractionDataset:
    """Keep users with more than min_count interactions; recompact vocabularies."""
    if min_count <= 0:
        return ds
    counts = np.bincount(ds.users, minlength=ds.num_users)
    mask = (counts > min_count)[ds.users]
    filtered = _compact(ds, mask)
    logger.info(
        f"Filtered to users with > {min_count} interactions: "
        f"{filtered.num_users}/{ds.num_users} users, {len(filtered)}/{len(ds)} interactions"
    )
    return filtered


def split_leave_two_out(ds: InteractionDataset) -> InteractionDataset:
    """
    Chronological leave-two-out split: per user the most recent interaction
    is the test instance, the second most recent the validation instance.

    Timestamp ties keep input order. A dataset without timestamps is split
    by input order.
    """
    if len(ds) == 0:
        raise EmptyDatasetError("Cannot split an empty dataset")
    if ds.has_timestamp.any() and not ds.has_timestamp.all():
        missing = int(np.argmin(ds.has_timestamp))
        raise SplitPreconditionError(
            "Timestamps are missing for some interactions",
            user=ds.user_ids[ds.users[missing]],
        )

    counts = np.bincount(ds.users, minlength=ds.num_users)
    short = np.flatnonzero((counts > 0) & (counts < 3))
    if short.size:
        user = ds.user_ids[short[0]]
        raise SplitPreconditionError(
            f"User {user} has {counts[short[0]]} interactions; leave-two-out needs at least 3",
            user=user,
        )

    position = np.arange(len(ds))
    clock = ds.timestamps if ds.has_timestamp.all() else position
    order = np.lexsort((position, clock, ds.users))
    sorted_users = ds.users[order]
    is_last = np.r_[sorted_users[1:] != sorted_users[:-1], True]
    is_second_last = np.r_[is_last[1:], False]

    split = np.full(len(ds), TRAIN, dtype=np.int8)
    split[order[is_second_last]] = VALIDATION
    split[order[is_last]] = TEST
    return ds.with_split(split)


def sample_negatives(ds: InteractionDataset, ratio: int, seed: int) -> TrainingExamples:
    """
    Label every TRAIN interaction 1 and draw ratio x (user's TRAIN count)
    negatives per user, uniformly without replacement from the items that user
    never interacted with (in any split of ds).
    """
    if ratio < 1:
        raise ConfigError(f"Negative sampling ratio must be >= 1, got {ratio}", field="negative_ratio", value=ratio)
    rng = np.random.default_rng(seed)
    train_rows = ds.member_positions()
    all_items = np.arange(ds.num_items)

    neg_users: List[np.ndarray] = []
    neg_items: List[np.ndarray] = []
    for user, rows in enumerate(ds.positions_by_user):
        n_train = int(np.count_nonzero(ds.split[rows] == TRAIN))
        if n_train == 0:
            continue
        pool = np.setdiff1d(all_items, ds.items[rows])
        required = ratio * n_train
        if pool.size < required:
            raise NegativeSamplingError(ds.user_ids[user], required, int(pool.size))
        neg_items.append(rng.choice(pool, size=required, replace=False))
        neg_users.append(np.full(required, user, dtype=np.int64))

    negatives_u = np.concatenate(neg_users) if neg_users else np.empty(0, dtype=np.int64)
    negatives_i = np.concatenate(neg_items) if neg_items else np.empty(0, dtype=np.int64)
    return TrainingExamples(
        users=np.concatenate([ds.users[train_rows], negatives_u]).astype(np.int64),
        items=np.concatenate([ds.items[train_rows], negatives_i]).astype(np.int64),
        labels=np.concatenate([np.ones(train_rows.size), np.zeros(negatives_u.size)]).astype(np.int8),
    )


def split_users(
    ds: InteractionDataset, target_fraction: float = 0.8, seed: int = 0
) -> Tuple[InteractionDataset, InteractionDataset]:
    """User-level split into a target population and a disjoint shadow population."""
    active = np.flatnonzero(np.bincount(ds.users, minlength=ds.num_users) > 0)
    rng = np.random.default_rng(seed)
    shuffled = rng.permutation(active)
    n_target = int(round(target_fraction * active.size))
    target_users = np.zeros(ds.num_users, dtype=bool)
    target_users[shuffled[:n_target]] = True
    in_target = target_users[ds.users]
    logger.info(f"User split: {n_target} target users, {active.size - n_target} shadow users")
    return ds.select(in_target), ds.select(~in_target)


def remove_interactions(ds: InteractionDataset, pairs: np.ndarray) -> InteractionDataset:
    """Drop the listed (user, item) TRAIN interactions; vocabularies unchanged."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    codes = pairs[:, 0] * ds.num_items + pairs[:, 1]
    hit = np.isin(ds.pair_codes(), codes) & (ds.split == TRAIN)
    return ds.select(~hit)
