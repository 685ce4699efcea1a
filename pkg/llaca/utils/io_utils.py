import os
import json
import logging
from pathlib import Path

from llaca.core.params import ParamVector


def ensure_dir(path):
    """Create ``path`` (and parents) if needed and return it as a Path."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def checkpoint_path(out_dir, task_index, prefix="checkpoint", suffix=".json"):
    """
    Compute the checkpoint path for a task.

    Args:
        out_dir: Run output directory
        task_index: Zero-based task index (file names are 1-based)
        prefix: File prefix
        suffix: File suffix

    Returns:
        Path inside ``out_dir/checkpoints``, ensuring the directory exists.
    """
    ckpt_dir = ensure_dir(os.path.join(out_dir, "checkpoints"))
    return ckpt_dir / f"{prefix}_task_{task_index + 1}{suffix}"


def save_checkpoint(path, params: ParamVector):
    """
    Save a ParamVector as JSON (layout + values).

    Floats are written with repr precision, so loading restores them bit for bit.
    """
    with open(path, "w", encoding="utf-8") as f:
        json.dump(params.to_dict(), f)
    logging.debug("[io_utils] Saved checkpoint to %s", path)
    return Path(path)


def load_checkpoint(path) -> ParamVector:
    """Load a ParamVector written by save_checkpoint."""
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    logging.debug("[io_utils] Loaded checkpoint from %s", path)
    return ParamVector.from_dict(data)
