"""Versioned checkpoint directories: NDF1 arrays plus a JSON manifest.

A checkpoint is a directory holding every model parameter and Adam
state array as an individual NDF1 file, with ``manifest.json`` mapping
logical names to files and carrying the step counter, a full config
snapshot (model config, vocabulary, training config), and the RNG
states needed for exact training resume.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig, TrainConfig, config_from_dict
from .errors import SchemaError
from .model import DubbingModel
from .ndf import load_array, save_array

FORMAT_NAME = "videodub-checkpoint"
FORMAT_VERSION = 1


@dataclass
class CheckpointInfo:
    step: int
    model_config: ModelConfig
    train_config: TrainConfig | None
    vocab_symbols: list[str]
    extra: dict


def _file_name(kind: str, name: str) -> str:
    return f"{kind}__{name.replace('.', '__')}.ndf"


def save_checkpoint(
    out_dir: str | Path,
    model: DubbingModel,
    step: int,
    vocab_symbols: list[str],
    optimizer: torch.optim.Adam | None = None,
    train_config: TrainConfig | None = None,
    torch_rng_state: torch.Tensor | None = None,
    data_state: dict | None = None,
    extra: dict | None = None,
) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    arrays: dict[str, dict] = {}

    for name, tensor in model.state_dict().items():
        fname = _file_name("param", name)
        save_array(out_dir / fname, tensor.detach().cpu().numpy())
        arrays[f"param/{name}"] = {"file": fname, "shape": list(tensor.shape)}

    opt_meta = None
    if optimizer is not None:
        opt_meta = {"steps": {}}
        params = [p for group in optimizer.param_groups for p in group["params"]]
        for idx, param in enumerate(params):
            state = optimizer.state.get(param)
            if not state:
                continue
            for key in ("exp_avg", "exp_avg_sq"):
                fname = _file_name(f"opt{idx}", key)
                save_array(out_dir / fname, state[key].detach().cpu().numpy())
                arrays[f"opt/{idx}/{key}"] = {"file": fname, "shape": list(state[key].shape)}
            opt_meta["steps"][str(idx)] = float(state["step"])

    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "step": step,
        "model_config": asdict(model.config),
        "train_config": asdict(train_config) if train_config is not None else None,
        "vocab": list(vocab_symbols),
        "arrays": arrays,
        "optimizer": opt_meta,
        "torch_rng": torch_rng_state.numpy().tobytes().hex() if torch_rng_state is not None else None,
        "data_state": data_state,
        "extra": extra or {},
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    return out_dir


def read_manifest(ckpt_dir: str | Path) -> dict:
    path = Path(ckpt_dir) / "manifest.json"
    if not path.exists():
        raise SchemaError(f"no manifest.json in checkpoint directory {ckpt_dir}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest.get("format") != FORMAT_NAME:
        raise SchemaError(f"{ckpt_dir}: not a {FORMAT_NAME} directory")
    if manifest.get("version") != FORMAT_VERSION:
        raise SchemaError(f"{ckpt_dir}: unsupported checkpoint version {manifest.get('version')}")
    return manifest


def load_model(ckpt_dir: str | Path) -> tuple[DubbingModel, CheckpointInfo]:
    """Rebuild the model from a checkpoint directory."""
    ckpt_dir = Path(ckpt_dir)
    manifest = read_manifest(ckpt_dir)
    model_config = config_from_dict(ModelConfig, manifest["model_config"])
    train_config = (
        config_from_dict(TrainConfig, manifest["train_config"]) if manifest["train_config"] else None
    )
    model = DubbingModel(model_config)
    state = {}
    for logical, entry in manifest["arrays"].items():
        if not logical.startswith("param/"):
            continue
        name = logical[len("param/") :]
        state[name] = torch.from_numpy(load_array(ckpt_dir / entry["file"]))
    missing, unexpected = model.load_state_dict(state, strict=False)
    if missing or unexpected:
        raise SchemaError(
            f"{ckpt_dir}: checkpoint/model mismatch (missing {sorted(missing)}, unexpected {sorted(unexpected)})"
        )
    info = CheckpointInfo(
        step=int(manifest["step"]),
        model_config=model_config,
        train_config=train_config,
        vocab_symbols=list(manifest["vocab"]),
        extra=manifest.get("extra", {}),
    )
    return model, info


def load_optimizer_state(ckpt_dir: str | Path, optimizer: torch.optim.Adam) -> None:
    """Restore Adam moments and step counters saved by ``save_checkpoint``."""
    ckpt_dir = Path(ckpt_dir)
    manifest = read_manifest(ckpt_dir)
    opt_meta = manifest.get("optimizer")
    if not opt_meta:
        return
    params = [p for group in optimizer.param_groups for p in group["params"]]
    for idx, param in enumerate(params):
        key = str(idx)
        if key not in opt_meta["steps"]:
            continue
        state = optimizer.state.setdefault(param, {})
        state["step"] = torch.tensor(opt_meta["steps"][key])
        for name in ("exp_avg", "exp_avg_sq"):
            entry = manifest["arrays"][f"opt/{idx}/{name}"]
            state[name] = torch.from_numpy(load_array(ckpt_dir / entry["file"]))


def load_rng_states(ckpt_dir: str | Path) -> tuple[torch.Tensor | None, dict | None]:
    manifest = read_manifest(Path(ckpt_dir))
    torch_rng = None
    if manifest.get("torch_rng"):
        torch_rng = torch.from_numpy(
            np.frombuffer(bytes.fromhex(manifest["torch_rng"]), dtype=np.uint8).copy()
        )
    return torch_rng, manifest.get("data_state")
