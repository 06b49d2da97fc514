# recps/models/checkpoint.py
# Byte-stable model checkpoints: a zip of .npy tensors plus a JSON header
import io
import json
import logging
import zipfile
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from recps.models.base import RecModel
from recps.models.registry import model_class
from recps.schemas.training import TrainConfig
from recps.utils.exceptions import EnsembleError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "recps-checkpoint v1"
META_ENTRY = "meta.json"
# Fixed member timestamp keeps archives identical across runs
ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def _array_bytes(array: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    np.lib.format.write_array(buffer, np.ascontiguousarray(array), allow_pickle=False)
    return buffer.getvalue()


def _write_entry(archive: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    archive.writestr(info, payload)


def checkpoint_meta(model: RecModel, cfg: Optional[TrainConfig] = None) -> Dict[str, Any]:
    return {
        "format": CHECKPOINT_FORMAT,
        "family": model.family,
        "num_users": model.num_users,
        "num_items": model.num_items,
        "dim": model.dim,
        "layers": model.layers,
        "layer_widths": model.layer_widths(),
        "config": cfg.model_dump(mode="json") if cfg is not None else None,
        "params": sorted(model.params),
        "buffers": sorted(model.buffers),
    }


def save_checkpoint(model: RecModel, path: Union[str, Path], cfg: Optional[TrainConfig] = None) -> Path:
    """
    Write model parameters and buffers to path.

    Entries are stored uncompressed in sorted order with a fixed timestamp, so
    identical models give identical bytes.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = checkpoint_meta(model, cfg)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as archive:
        _write_entry(archive, META_ENTRY, json.dumps(meta, sort_keys=True, indent=2).encode("utf-8"))
        for name in meta["params"]:
            _write_entry(archive, f"params/{name}.npy", _array_bytes(model.params[name]))
        for name in meta["buffers"]:
            _write_entry(archive, f"buffers/{name}.npy", _array_bytes(model.buffers[name]))
    logger.debug(f"Saved {model.family} checkpoint to {path}")
    return path


def read_checkpoint_meta(path: Union[str, Path]) -> Dict[str, Any]:
    try:
        with zipfile.ZipFile(path) as archive:
            meta = json.loads(archive.read(META_ENTRY).decode("utf-8"))
    except (OSError, KeyError, ValueError, zipfile.BadZipFile) as e:
        raise EnsembleError(f"Unreadable checkpoint {path}: {e}", {"path": str(path)}) from e
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise EnsembleError(
            f"Unsupported checkpoint format {meta.get('format')!r}",
            {"path": str(path), "format": meta.get("format")},
        )
    return meta


def load_checkpoint(path: Union[str, Path]) -> RecModel:
    """Rebuild the model stored at path."""
    meta = read_checkpoint_meta(path)
    try:
        with zipfile.ZipFile(path) as archive:
            params = {
                name: np.lib.format.read_array(io.BytesIO(archive.read(f"params/{name}.npy")))
                for name in meta["params"]
            }
            buffers = {
                name: np.lib.format.read_array(io.BytesIO(archive.read(f"buffers/{name}.npy")))
                for name in meta["buffers"]
            }
    except (KeyError, ValueError, zipfile.BadZipFile) as e:
        raise EnsembleError(f"Corrupt checkpoint {path}: {e}", {"path": str(path)}) from e

    cls = model_class(meta["family"])
    return cls(
        meta["num_users"],
        meta["num_items"],
        meta["dim"],
        params,
        buffers=buffers,
        layers=meta["layers"],
    )
