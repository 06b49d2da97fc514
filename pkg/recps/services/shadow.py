# recps/services/shadow.py
# Shadow-model preparation: Bernoulli(0.5) subsets of D, trained shadows, OUT distribution
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import yaml

from recps.models.base import RecModel
from recps.models.checkpoint import load_checkpoint, save_checkpoint
from recps.schemas.training import TrainConfig
from recps.services.dataset import (
    TRAIN,
    InteractionDataset,
    dataset_hash,
    load_dataset,
    save_dataset,
)
from recps.services.stats import OutDistribution, fit_out_distribution, phi_from_probability
from recps.services.training import train_on_dataset
from recps.tasks.worker_pool import run_jobs
from recps.utils.exceptions import (
    ConfigError,
    EmptyDatasetError,
    EnsembleError,
    MissingInputError,
    ProvenanceError,
)
from recps.utils.hashing import config_hash, derive_seed, sha256_bytes, sha256_file

logger = logging.getLogger(__name__)

ENSEMBLE_FORMAT = "recps-ensemble v1"
MANIFEST_NAME = "manifest.yaml"
DATASET_NAME = "dataset.tsv"
MEMBERSHIP_NAME = "membership.bin"
TARGET_DIR = "target"


@dataclass(eq=False)
class TargetRun:
    """The model attacked in an evaluation run, its training data and the labelled evaluation population."""

    model: RecModel
    dataset: InteractionDataset
    eval_users: np.ndarray
    eval_items: np.ndarray
    eval_labels: np.ndarray

    def evaluation_frame(self) -> pd.DataFrame:
        user_ids = np.asarray(self.dataset.user_ids, dtype=object)
        item_ids = np.asarray(self.dataset.item_ids, dtype=object)
        return pd.DataFrame(
            {
                "user": user_ids[self.eval_users] if self.eval_users.size else [],
                "item": item_ids[self.eval_items] if self.eval_items.size else [],
                "label": self.eval_labels.astype(int),
            }
        )


@dataclass(eq=False)
class ShadowEnsemble:
    """
    m shadow models over the TRAIN interactions D of `dataset`.

    Column r of `membership` is the interaction at row member_positions()[r];
    membership[j, r] is true when that interaction is IN shadow set S_j.
    """

    family: str
    dataset: InteractionDataset
    membership: np.ndarray
    models: List[RecModel]
    out_dist: OutDistribution
    seed: int
    train_config: TrainConfig
    digest: Optional[str] = None
    run_config: Optional[Dict[str, Any]] = None
    _phi: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return int(self.membership.shape[0])

    @property
    def positions(self) -> np.ndarray:
        return self.dataset.member_positions()

    @property
    def in_counts(self) -> np.ndarray:
        return self.membership.sum(axis=0)

    @cached_property
    def _columns(self) -> Dict[int, int]:
        codes = self.dataset.pair_codes(self.positions)
        # first column wins on repeated pairs
        return {int(code): column for column, code in reversed(list(enumerate(codes)))}

    def column_of(self, user: int, item: int) -> int:
        """Membership column of the D interaction (user, item)."""
        self.dataset.check_user(user)
        self.dataset.check_item(item)
        column = self._columns.get(int(user) * self.dataset.num_items + int(item))
        if column is None:
            raise EnsembleError(
                f"({user}, {item}) is not a training interaction of the ensemble dataset",
                {"user": int(user), "item": int(item)},
            )
        return column

    def phi_matrix(self) -> np.ndarray:
        """φ of every shadow model on every interaction of D, shape (m, |D|)."""
        if self._phi is None:
            rows = self.positions
            users, items = self.dataset.users[rows], self.dataset.items[rows]
            self._phi = np.vstack([phi_from_probability(model.predict_many(users, items)) for model in self.models])
            self._phi.setflags(write=False)
        return self._phi


def sample_shadow_datasets(ds: InteractionDataset, m: int, seed: int) -> np.ndarray:
    """
    Membership bit-matrix of shape (m, |D|): each TRAIN interaction joins each
    shadow set independently with probability 0.5.
    """
    if m < 2:
        raise ConfigError(f"At least 2 shadow models are required, got {m}", field="num_shadows", value=m)
    rng = np.random.default_rng(derive_seed(seed, "membership"))
    return rng.random((m, ds.member_positions().size)) < 0.5


def shadow_subset(ds: InteractionDataset, members: np.ndarray) -> InteractionDataset:
    """ds restricted to the selected TRAIN interactions; validation and test rows are kept."""
    keep = ds.split != TRAIN
    keep[ds.member_positions()[np.asarray(members, dtype=bool)]] = True
    return ds.select(keep)


@dataclass(frozen=True)
class ShadowJob:
    index: int
    family: str
    dataset: InteractionDataset
    cfg: TrainConfig
    seed: int


def train_shadow_model(job: ShadowJob) -> RecModel:
    """Train shadow model j; its parameters depend only on S_j, the config and seed_j."""
    seed_j = derive_seed(job.seed, job.index)
    model = train_on_dataset(
        job.family,
        job.dataset,
        job.cfg.with_seed(seed_j),
        seed=derive_seed(seed_j, "negatives"),
    )
    logger.info(f"Trained shadow model {job.index} ({job.family}, {len(job.dataset)} interactions)")
    return model


def collect_out_phis(phi: np.ndarray, membership: np.ndarray, cap: int, seed: int) -> np.ndarray:
    """φ values of OUT (model, interaction) cells, subsampled to at most cap."""
    out_values = phi[~membership]
    if out_values.size > cap:
        rng = np.random.default_rng(derive_seed(seed, "out-sample"))
        out_values = out_values[np.sort(rng.choice(out_values.size, size=cap, replace=False))]
    return out_values


def build_ensemble(
    ds: InteractionDataset,
    m: int,
    cfg: TrainConfig,
    seed: int,
    family: str = "lightgcn",
    out_sample_cap: int = 10_000,
    workers: int = 1,
) -> ShadowEnsemble:
    """
    Sample m shadow sets from D, train one model per set and fit the OUT
    distribution over the φ values of excluded interactions.

    Raises:
        EmptyDatasetError: D is empty
        InsufficientSamplesError: fewer than 30 OUT samples
        TrainingDivergedError: propagated from a shadow run
    """
    if ds.member_positions().size == 0:
        raise EmptyDatasetError("Cannot build shadow models without training interactions")
    membership = sample_shadow_datasets(ds, m, seed)
    jobs = [ShadowJob(j, family, shadow_subset(ds, membership[j]), cfg, seed) for j in range(m)]
    logger.info(f"Training {m} {family} shadow models on {membership.shape[1]} interactions")
    models = run_jobs(train_shadow_model, jobs, workers)

    ensemble = ShadowEnsemble(
        family=family,
        dataset=ds,
        membership=membership,
        models=models,
        out_dist=OutDistribution(0.0, 1.0, 0),
        seed=seed,
        train_config=cfg,
    )
    out_phis = collect_out_phis(ensemble.phi_matrix(), membership, out_sample_cap, seed)
    ensemble.out_dist = fit_out_distribution(out_phis)
    logger.info(
        f"Fitted OUT distribution: mu={ensemble.out_dist.mu:.4f} "
        f"sigma={ensemble.out_dist.sigma:.4f} n={ensemble.out_dist.n}"
    )
    return ensemble


def ensemble_phi(ensemble: ShadowEnsemble, interaction: Tuple[int, int]) -> np.ndarray:
    """φ of (user, item) under each shadow model, length m."""
    user, item = interaction
    ensemble.dataset.check_user(user)
    ensemble.dataset.check_item(item)
    return np.array(
        [float(phi_from_probability(model.predict_many([user], [item])[0])) for model in ensemble.models]
    )


def _pack_membership(membership: np.ndarray) -> bytes:
    return np.packbits(membership.astype(np.uint8), axis=None).tobytes()


def _unpack_membership(payload: bytes, m: int, n: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=m * n)
    return bits.reshape(m, n).astype(bool)


def _dump_manifest(body: Dict[str, Any]) -> str:
    return yaml.safe_dump(body, sort_keys=True, default_flow_style=False)


def _model_path(index: int) -> str:
    return f"models/shadow_{index:04d}.npz"


def save_ensemble(
    ensemble: ShadowEnsemble,
    directory: Union[str, Path],
    target: Optional[TargetRun] = None,
) -> str:
    """
    Write the ensemble directory and return the manifest digest.

    The manifest holds no paths or timestamps; with the same inputs and seed
    the whole directory is byte-identical.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files: Dict[str, str] = {}

    save_dataset(ensemble.dataset, directory / DATASET_NAME)
    (directory / MEMBERSHIP_NAME).write_bytes(_pack_membership(ensemble.membership))
    for index, model in enumerate(ensemble.models):
        save_checkpoint(model, directory / _model_path(index), ensemble.train_config)
    relpaths = [DATASET_NAME, MEMBERSHIP_NAME] + [_model_path(j) for j in range(ensemble.m)]

    if target is not None:
        target_dir = directory / TARGET_DIR
        save_checkpoint(target.model, target_dir / "model.npz", ensemble.train_config)
        save_dataset(target.dataset, target_dir / "dataset.tsv")
        target.evaluation_frame().to_csv(target_dir / "evaluation.tsv", sep="\t", index=False, lineterminator="\n")
        relpaths += [f"{TARGET_DIR}/model.npz", f"{TARGET_DIR}/dataset.tsv", f"{TARGET_DIR}/evaluation.tsv"]

    for relpath in relpaths:
        files[relpath] = sha256_file(directory / relpath)

    body = {
        "format": ENSEMBLE_FORMAT,
        "family": ensemble.family,
        "m": ensemble.m,
        "seed": int(ensemble.seed),
        "num_interactions": int(ensemble.membership.shape[1]),
        "dataset_hash": dataset_hash(ensemble.dataset),
        "train_config": ensemble.train_config.model_dump(mode="json"),
        "out_dist": ensemble.out_dist.as_dict(),
        "run_config": ensemble.run_config,
        "config_hash": config_hash(ensemble.run_config or ensemble.train_config.model_dump(mode="json")),
        "has_target": target is not None,
        "files": files,
    }
    digest = sha256_bytes(_dump_manifest(body).encode("utf-8"))
    (directory / MANIFEST_NAME).write_text(_dump_manifest({**body, "digest": digest}), encoding="utf-8")
    ensemble.digest = digest
    logger.info(f"Saved ensemble of {ensemble.m} shadow models to {directory} (digest {digest[:12]})")
    return digest


def read_manifest(directory: Union[str, Path]) -> Dict[str, Any]:
    """
    Load and verify manifest.yaml and every file it references.

    Raises:
        MissingInputError: no manifest in directory
        ProvenanceError: manifest digest or any file hash does not match
    """
    directory = Path(directory)
    path = directory / MANIFEST_NAME
    if not path.is_file():
        raise MissingInputError(str(path))
    try:
        manifest = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ProvenanceError(f"Unreadable manifest {path}: {e}", {"path": str(path)}) from e
    if not isinstance(manifest, dict) or manifest.get("format") != ENSEMBLE_FORMAT:
        raise ProvenanceError(f"{path} is not a {ENSEMBLE_FORMAT} manifest", {"path": str(path)})

    body = {key: value for key, value in manifest.items() if key != "digest"}
    expected = sha256_bytes(_dump_manifest(body).encode("utf-8"))
    if manifest.get("digest") != expected:
        raise ProvenanceError(
            "Manifest digest mismatch; the ensemble directory was modified",
            {"path": str(path), "recorded": manifest.get("digest"), "computed": expected},
        )
    for relpath, recorded in body["files"].items():
        file_path = directory / relpath
        if not file_path.is_file():
            raise ProvenanceError(f"Ensemble file missing: {relpath}", {"file": relpath})
        actual = sha256_file(file_path)
        if actual != recorded:
            raise ProvenanceError(
                f"Hash mismatch for {relpath}",
                {"file": relpath, "recorded": recorded, "computed": actual},
            )
    return manifest


def load_ensemble(directory: Union[str, Path]) -> ShadowEnsemble:
    """Read a verified ensemble directory written by save_ensemble."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    dataset = load_dataset(directory / DATASET_NAME)
    m, n = int(manifest["m"]), int(manifest["num_interactions"])
    if dataset.member_positions().size != n:
        raise ProvenanceError(
            f"Dataset holds {dataset.member_positions().size} training interactions, manifest says {n}",
            {"expected": n},
        )
    membership = _unpack_membership((directory / MEMBERSHIP_NAME).read_bytes(), m, n)
    models = [load_checkpoint(directory / _model_path(j)) for j in range(m)]
    out = manifest["out_dist"]
    ensemble = ShadowEnsemble(
        family=manifest["family"],
        dataset=dataset,
        membership=membership,
        models=models,
        out_dist=OutDistribution(mu=float(out["mu"]), sigma=float(out["sigma"]), n=int(out["n"])),
        seed=int(manifest["seed"]),
        train_config=TrainConfig(**manifest["train_config"]),
        digest=manifest["digest"],
        run_config=manifest.get("run_config"),
    )
    logger.info(f"Loaded ensemble of {m} shadow models from {directory}")
    return ensemble


def load_target(directory: Union[str, Path]) -> Optional[TargetRun]:
    """The target stored next to a verified ensemble, or None if the run has no target."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    if not manifest.get("has_target"):
        return None
    target_dir = directory / TARGET_DIR
    dataset = load_dataset(target_dir / "dataset.tsv")
    frame = pd.read_csv(
        target_dir / "evaluation.tsv", sep="\t", dtype={"user": str, "item": str, "label": int}, keep_default_na=False
    )
    try:
        users = frame["user"].map(dataset.user_index).to_numpy(dtype=np.int64)
        items = frame["item"].map(dataset.item_index).to_numpy(dtype=np.int64)
    except (ValueError, TypeError) as e:
        raise EnsembleError(f"Evaluation set references unknown ids: {e}", {"path": str(target_dir)}) from e
    return TargetRun(
        model=load_checkpoint(target_dir / "model.npz"),
        dataset=dataset,
        eval_users=users,
        eval_items=items,
        eval_labels=frame["label"].to_numpy(dtype=np.int8),
    )
