"""Training loop, evaluation, checkpoints, ablation and sensitivity sweeps.

Optimization is plain SGD (w <- w - lr * grad, no momentum, no decay) over
seeded shuffles that reseed as seed+epoch, so two runs with the same
configuration produce byte-identical checkpoints and identical histories.
Checkpoints are a single file: magic, a JSON manifest (config, entry names,
shapes, byte offsets), and one little-endian float64 blob.
"""

from __future__ import annotations

import json
import os
import struct
import time
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .autodiff import Rng, Tape, Tensor, backward, no_grad
from .data import BiTemporalScene, HyperCube, SplitIndex, extract_patch_array, normalize_bands, pad_reflect, stratified_split
from .errors import ConfigError, DataError, NumericError
from .metrics import ChangeMap, MetricsReport, compute_report, confusion, render_change_map
from .model import ChmffnModel, ModelConfig, bce_loss

__all__ = [
    "TrainConfig",
    "TrainHistory",
    "sgd_step",
    "train",
    "evaluate",
    "ablate",
    "sweep",
    "save_checkpoint",
    "load_checkpoint",
    "ABLATION_VARIANTS",
    "SWEEP_DIMENSIONS",
]

CHECKPOINT_MAGIC = b"HSCDNET1"

ABLATION_VARIANTS = {
    "A_no_multiscale": {"use_msc": False},
    "B_no_dccsa": {"use_dccsa": False},
    "C_no_stcfl": {"use_stcfl": False},
    "D_no_afaf": {"use_afaf": False},
    "full": {},
}

SWEEP_DIMENSIONS = {
    "ratio": [0.05, 0.1, 0.2, 0.3],
    "patch": [5, 7, 9],
    "batch": [32, 64, 128],
}


@dataclass
class TrainConfig:
    """Optimization settings plus the nested architecture config."""

    model: ModelConfig
    lr: float = 5e-3
    epochs: int = 100
    batch: int = 32
    ratio: float = 0.3
    patch: int = 9
    seed: int = 0
    normalize: bool = True
    checkpoint_every: int = 0
    eval_batch: int = 512

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch < 2:
            raise ConfigError(f"batch must be >= 2 (batch statistics), got {self.batch}")
        if not (0.0 < self.ratio < 1.0):
            raise ConfigError(f"ratio must lie in (0,1), got {self.ratio}")
        if self.patch < 1 or self.patch % 2 == 0:
            raise ConfigError(f"patch must be odd and positive, got {self.patch}")
        if self.checkpoint_every < 0:
            raise ConfigError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")
        if self.eval_batch < 1:
            raise ConfigError(f"eval_batch must be >= 1, got {self.eval_batch}")
        if self.patch != self.model.patch:
            raise ConfigError(f"train patch {self.patch} differs from model patch {self.model.patch}")

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "model"}
        out["model"] = self.model.to_dict()
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        if "model" not in raw:
            raise ConfigError("train config requires a 'model' section")
        data = dict(raw)
        model_raw = dict(data.pop("model"))
        if "patch" in data and "patch" not in model_raw:
            model_raw["patch"] = data["patch"]
        model = ModelConfig.from_dict(model_raw)
        return cls(model=model, **data)


@dataclass
class TrainHistory:
    """Per-epoch mean loss and running train accuracy, plus wall time.

    The loss/accuracy sequences are deterministic for a fixed seed; wall time
    is measurement noise and excluded from equality.
    """

    epoch_loss: list = field(default_factory=list)
    epoch_train_oa: list = field(default_factory=list)
    wall_time_s: float = 0.0

    def deterministic_part(self) -> dict:
        return {"epoch_loss": list(self.epoch_loss), "epoch_train_oa": list(self.epoch_train_oa)}

    def to_dict(self) -> dict:
        return {
            "epoch_loss": list(self.epoch_loss),
            "epoch_train_oa": list(self.epoch_train_oa),
            "wall_time_s": self.wall_time_s,
        }


def sgd_step(params, lr: float) -> None:
    """w <- w - lr * grad for every parameter, then zero the gradients.
    A parameter without a gradient is an error: it signals a detached graph."""
    if lr <= 0:
        raise ConfigError(f"lr must be positive, got {lr}")
    pairs = list(params)
    for p in pairs:
        if p.grad is None:
            raise ValueError("sgd_step: parameter has no gradient; call backward first")
    for p in pairs:
        p.data = p.data - lr * p.grad
        p.grad = None


# ---------------------------------------------------------------------------
# batching helpers


class _PatchSource:
    """Reflection-pads both cubes once and slices (bands, P, P) patch pairs out
    of the padded arrays on demand, as float64."""

    def __init__(self, scene: BiTemporalScene, patch: int):
        self.patch = patch
        self.half = patch // 2
        self.t1 = pad_reflect(scene.t1.data.astype(np.float64), self.half)
        self.t2 = pad_reflect(scene.t2.data.astype(np.float64), self.half)
        self.gt = scene.gt

    def batch(self, coords: np.ndarray):
        p = self.patch
        n = coords.shape[0]
        b1 = np.empty((n, self.t1.shape[0], p, p))
        b2 = np.empty_like(b1)
        for i, (r, c) in enumerate(coords):
            b1[i] = self.t1[:, r : r + p, c : c + p]
            b2[i] = self.t2[:, r : r + p, c : c + p]
        labels = self.gt[coords[:, 0], coords[:, 1]].astype(np.float64)
        return b1, b2, labels


def _epoch_batches(coords: np.ndarray, batch: int, rng: Rng):
    """Shuffled batches; a trailing single sample is folded into the previous
    batch because train-mode batch statistics need at least two samples."""
    order = rng.permutation(coords.shape[0])
    shuffled = coords[order]
    chunks = [shuffled[i : i + batch] for i in range(0, shuffled.shape[0], batch)]
    if len(chunks) > 1 and chunks[-1].shape[0] == 1:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]], axis=0)
        chunks.pop()
    return chunks


def _prepare_scene(scene: BiTemporalScene, do_normalize: bool) -> BiTemporalScene:
    if not do_normalize:
        return scene
    return BiTemporalScene(normalize_bands(scene.t1), normalize_bands(scene.t2), scene.gt)


# ---------------------------------------------------------------------------
# train / evaluate


def train(
    scene: BiTemporalScene,
    cfg: TrainConfig,
    out_dir: Optional[str] = None,
    split: Optional[SplitIndex] = None,
):
    """Train a fresh model on the scene's stratified train pixels.

    Returns (model, history, split). When ``out_dir`` is given, a checkpoint is
    written there at the end (and every ``checkpoint_every`` epochs when set).
    A non-finite loss aborts immediately, naming the epoch and batch.
    """
    if scene.t1.bands != cfg.model.bands:
        raise DataError(f"scene has {scene.t1.bands} bands but model expects {cfg.model.bands}")
    prepared = _prepare_scene(scene, cfg.normalize)
    if split is None:
        split = stratified_split(prepared.gt, cfg.ratio, cfg.seed)
    if split.train.shape[0] < 2:
        raise DataError(f"need at least 2 training pixels, got {split.train.shape[0]}")
    source = _PatchSource(prepared, cfg.patch)
    model = ChmffnModel(cfg.model)
    params = model.parameters()
    history = TrainHistory()
    started = time.monotonic()
    for epoch in range(cfg.epochs):
        rng = Rng(cfg.seed + epoch)
        loss_sum = 0.0
        correct = 0
        seen = 0
        for batch_index, coords in enumerate(_epoch_batches(split.train, cfg.batch, rng)):
            b1, b2, labels = source.batch(coords)
            with Tape() as tape:
                probs = model.forward_pair(Tensor(b1), Tensor(b2))
                loss = bce_loss(probs, labels)
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericError(
                        f"non-finite loss {value} at epoch {epoch}, batch {batch_index}"
                    )
                backward(tape, loss)
            sgd_step(params, cfg.lr)
            n = labels.shape[0]
            loss_sum += value * n
            seen += n
            correct += int(np.count_nonzero((probs.data[:, 1] > 0.5).astype(np.uint8) == labels.astype(np.uint8)))
        history.epoch_loss.append(loss_sum / seen)
        history.epoch_train_oa.append(correct / seen)
        if out_dir and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0 and (epoch + 1) < cfg.epochs:
            save_checkpoint(os.path.join(out_dir, f"checkpoint_epoch{epoch + 1:04d}.ckpt"), model, cfg)
    history.wall_time_s = time.monotonic() - started
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        save_checkpoint(os.path.join(out_dir, "checkpoint.ckpt"), model, cfg)
        with open(os.path.join(out_dir, "history.json"), "w", encoding="utf-8") as fh:
            json.dump(history.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")
    return model, history, split


def predict_raster(model: ChmffnModel, scene: BiTemporalScene, normalize: bool = True, eval_batch: int = 512) -> np.ndarray:
    """Predict a 0/1 raster for every pixel of the scene (eval mode, no tape)."""
    prepared = _prepare_scene(scene, normalize)
    source = _PatchSource(prepared, model.config.patch)
    h, w = prepared.gt.shape
    coords = np.argwhere(np.ones((h, w), dtype=bool))
    pred = np.zeros(h * w, dtype=np.uint8)
    was_training = model.training
    model.eval()
    with no_grad():
        for i in range(0, coords.shape[0], eval_batch):
            chunk = coords[i : i + eval_batch]
            b1, b2, _ = source.batch(chunk)
            probs = model.forward_pair(Tensor(b1), Tensor(b2))
            pred[i : i + chunk.shape[0]] = np.argmax(probs.data, axis=1).astype(np.uint8)
    model.train(was_training)
    return pred.reshape(h, w)


def evaluate(
    model: ChmffnModel,
    scene: BiTemporalScene,
    split: SplitIndex,
    normalize: bool = True,
    eval_batch: int = 512,
) -> tuple[MetricsReport, ChangeMap]:
    """Metrics over the held-out test pixels plus a whole-image change map.

    The map colors every pixel, training ones included; reports derived from it
    should carry the map_includes_train_pixels note.
    """
    pred = predict_raster(model, scene, normalize=normalize, eval_batch=eval_batch)
    counts = confusion(pred, scene.gt, coords=split.test)
    report = compute_report(counts)
    cmap = render_change_map(pred, scene.gt)
    return report, cmap


# ---------------------------------------------------------------------------
# checkpoints


def _state_entries(model: ChmffnModel):
    for name, p in model.named_parameters():
        yield name, p.data
    for name, buf in model.named_buffers():
        yield name, buf


def save_checkpoint(path: str, model: ChmffnModel, cfg: Optional[TrainConfig] = None) -> None:
    """Single-file archive: magic, u64 manifest length, JSON manifest, raw
    little-endian float64 blob. Identical models produce identical bytes."""
    entries = []
    blobs = []
    offset = 0
    for name, arr in _state_entries(model):
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "format": 1,
        "model": model.config.to_dict(),
        "normalize": bool(cfg.normalize) if cfg is not None else True,
        "entries": entries,
    }
    payload = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path: str) -> tuple[ChmffnModel, dict]:
    """Rebuild the model a checkpoint describes; returns (model, manifest)."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError as e:
        raise DataError(f"checkpoint not found: {path}") from e
    if len(raw) < len(CHECKPOINT_MAGIC) + 8 or raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise DataError(f"not a checkpoint file: {path}")
    man_len = struct.unpack("<Q", raw[len(CHECKPOINT_MAGIC) : len(CHECKPOINT_MAGIC) + 8])[0]
    man_start = len(CHECKPOINT_MAGIC) + 8
    try:
        manifest = json.loads(raw[man_start : man_start + man_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"corrupt checkpoint manifest: {path}") from e
    blob = raw[man_start + man_len :]
    model = ChmffnModel(ModelConfig.from_dict(manifest["model"]))
    state = dict(_state_entries(model))
    listed = {e["name"] for e in manifest["entries"]}
    if listed != set(state):
        raise DataError(
            f"checkpoint entries do not match the model: missing {sorted(set(state) - listed)}, "
            f"unexpected {sorted(listed - set(state))}"
        )
    for entry in manifest["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 8 * count
        if end > len(blob):
            raise DataError(f"checkpoint blob truncated at entry {entry['name']}")
        arr = np.frombuffer(blob[start:end], dtype="<f8").reshape(shape).copy()
        if state[entry["name"]].shape != shape:
            raise DataError(
                f"shape mismatch for {entry['name']}: checkpoint {shape}, model {state[entry['name']].shape}"
            )
        state[entry["name"]][...] = arr
    return model, manifest


# ---------------------------------------------------------------------------
# ablation and sweeps


def _clone_train_config(cfg: TrainConfig, model_overrides: dict, **train_overrides) -> TrainConfig:
    model_raw = cfg.model.to_dict()
    model_raw.update(model_overrides)
    if "use_msc" in model_overrides:
        model_raw["model_dim"] = None
        model_raw["ffn_hidden"] = None
    raw = cfg.to_dict()
    raw.update(train_overrides)
    raw["model"] = model_raw
    return TrainConfig.from_dict(raw)


def ablate(scene: BiTemporalScene, cfg: TrainConfig, out_path: Optional[str] = None) -> dict:
    """Train and evaluate the four single-module ablations plus the full model
    on identical splits; returns {variant: {toggles, counts, metrics}}."""
    table = {}
    for variant, overrides in ABLATION_VARIANTS.items():
        vcfg = _clone_train_config(cfg, overrides)
        model, history, split = train(scene, vcfg)
        report, _ = evaluate(model, scene, split, normalize=vcfg.normalize, eval_batch=vcfg.eval_batch)
        row = report.to_dict()
        row["toggles"] = {
            "use_msc": vcfg.model.use_msc,
            "use_dccsa": vcfg.model.use_dccsa,
            "use_stcfl": vcfg.model.use_stcfl,
            "use_afaf": vcfg.model.use_afaf,
        }
        row["final_train_oa"] = history.epoch_train_oa[-1] if history.epoch_train_oa else None
        table[variant] = row
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(table, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return table


def sweep(scene: BiTemporalScene, dimension: str, values, cfg: TrainConfig, out_path: Optional[str] = None) -> dict:
    """Sensitivity sweep along one dimension (ratio, patch, or batch); each
    value gets a full train+evaluate cycle. Returns {value: report dict}."""
    if dimension not in SWEEP_DIMENSIONS:
        raise ConfigError(f"sweep dimension must be one of {sorted(SWEEP_DIMENSIONS)}, got {dimension!r}")
    if values is None:
        values = SWEEP_DIMENSIONS[dimension]
    table = {}
    for value in values:
        if dimension == "ratio":
            vcfg = _clone_train_config(cfg, {}, ratio=float(value))
        elif dimension == "patch":
            vcfg = _clone_train_config(cfg, {"patch": int(value)}, patch=int(value))
        else:
            vcfg = _clone_train_config(cfg, {}, batch=int(value))
        model, history, split = train(scene, vcfg)
        report, _ = evaluate(model, scene, split, normalize=vcfg.normalize, eval_batch=vcfg.eval_batch)
        row = report.to_dict()
        row["final_train_oa"] = history.epoch_train_oa[-1] if history.epoch_train_oa else None
        table[str(value)] = row
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(table, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return table
