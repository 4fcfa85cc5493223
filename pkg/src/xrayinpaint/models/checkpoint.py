"""Self-describing checkpoint container shared by all model estimators.

A checkpoint is a torch-serialized dict carrying a magic tag, format
version, model type, the estimator's parameter snapshot, epoch counter,
per-step loss history, module/optimizer state dicts, and the RNG states
needed to resume training mid-run. Content hashes are computed over the
parameter snapshot plus raw weight bytes in sorted key order, so two
checkpoints hash equal iff they would behave identically.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np
import torch

from ..errors import StoreError

MAGIC = "xrayinpaint-checkpoint"
VERSION = 1


def _state_bytes(state: dict) -> bytes:
    buf = io.BytesIO()
    for key in sorted(state):
        buf.write(key.encode())
        tensor = state[key]
        buf.write(np.ascontiguousarray(tensor.detach().cpu().numpy()).tobytes())
    return buf.getvalue()


def checkpoint_hash(params: dict, states: dict) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(params, sort_keys=True, default=str).encode())
    for name in sorted(states):
        h.update(name.encode())
        h.update(_state_bytes(states[name]))
    return h.hexdigest()


def capture_rng(np_rng: np.random.Generator, torch_gen: torch.Generator | None = None) -> dict:
    out = {"numpy": np_rng.bit_generator.state, "torch": torch.get_rng_state()}
    if torch_gen is not None:
        out["torch_gen"] = torch_gen.get_state()
    return out


def restore_rng(state: dict, np_rng: np.random.Generator, torch_gen: torch.Generator | None = None):
    np_rng.bit_generator.state = state["numpy"]
    torch.set_rng_state(state["torch"])
    if torch_gen is not None and "torch_gen" in state:
        torch_gen.set_state(state["torch_gen"])


def save_checkpoint(
    path,
    model_type: str,
    params: dict,
    epoch: int,
    loss_history: list,
    loss_columns: list,
    module_states: dict,
    optimizer_states: dict | None = None,
    rng_state: dict | None = None,
    seed: int | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "magic": MAGIC,
        "version": VERSION,
        "model_type": model_type,
        "params": params,
        "epoch": epoch,
        "loss_history": loss_history,
        "loss_columns": loss_columns,
        "module_states": module_states,
        "optimizer_states": optimizer_states or {},
        "rng_state": rng_state,
        "seed": seed,
        "content_hash": checkpoint_hash(params, module_states),
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise StoreError(f"checkpoint {path} does not exist")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("magic") != MAGIC:
        raise StoreError(f"{path} is not a model checkpoint")
    if payload.get("version") != VERSION:
        raise StoreError(f"unsupported checkpoint version {payload.get('version')!r}")
    return payload


def export_loss_history(history: list, columns: list, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        writer.writerows(history)
    return path
