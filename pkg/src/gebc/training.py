"""Adapter-only optimization: LR schedule, AdamW grouping, loop, checkpoints.

Only the adapter stack trains; extractor and LM parameters never enter the
optimizer. The loop is deterministic given (seed, data order): shuffling is
seeded per epoch, and no stochastic layers exist in the trainable path.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import torch
from torch import nn

from .config import RunConfig, TrainSettings
from .data import BoundaryAnnotation, CaptionSample, VideoRecord, expand_samples
from .errors import (ConfigMismatch, CorruptCheckpoint, InvalidSchedule,
                     IoFailure, NonFiniteLoss)
from .model import CaptioningModel

CHECKPOINT_MAGIC = b"GEBK"
CHECKPOINT_VERSION = 1

_DTYPE_CODES = {torch.float32: 0, torch.float64: 1, torch.int64: 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def resolve_warmup_steps(cfg: TrainSettings, total_steps: int) -> int:
    """Explicit warmup_steps wins; otherwise warmup_fraction of the run."""
    if cfg.warmup_steps is not None:
        w = cfg.warmup_steps
    else:
        w = int(round(cfg.warmup_fraction * total_steps))
    return max(0, min(w, total_steps - 1))


def lr_at(step: int, total_steps: int, cfg: TrainSettings) -> float:
    """Piecewise schedule: linear warmup then cosine (or linear) decay.

    Continuous at the warmup joint: the ramp ends exactly at lr_init and the
    decay starts there.
    """
    if total_steps <= 0:
        raise InvalidSchedule(f"total_steps must be positive, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise InvalidSchedule(
            f"step {step} outside schedule domain [0, {total_steps}]"
        )
    warmup = resolve_warmup_steps(cfg, total_steps)
    if warmup >= total_steps:
        raise InvalidSchedule(
            f"warmup_steps {warmup} must be < total_steps {total_steps}"
        )
    if step < warmup:
        frac = step / warmup
        return cfg.lr_warmup_start + (cfg.lr_init - cfg.lr_warmup_start) * frac
    if total_steps == warmup:
        return cfg.lr_init
    frac = (step - warmup) / (total_steps - warmup)
    if cfg.decay == "linear":
        return cfg.lr_init + (cfg.lr_min - cfg.lr_init) * frac
    return cfg.lr_min + 0.5 * (cfg.lr_init - cfg.lr_min) * (1.0 + math.cos(math.pi * frac))


def _layernorm_param_names(model: nn.Module) -> set[str]:
    names = set()
    for mod_name, mod in model.named_modules():
        if isinstance(mod, nn.LayerNorm):
            for p_name, _ in mod.named_parameters(recurse=False):
                names.add(f"{mod_name}.{p_name}" if mod_name else p_name)
    return names


def build_param_groups(model: CaptioningModel, cfg: TrainSettings) -> list[dict]:
    """Two AdamW groups: weight decay everywhere except layer norms and biases."""
    ln_names = _layernorm_param_names(model)
    decay, no_decay = [], []
    for name, p in model.trainable_parameters().items():
        if name in ln_names or name.endswith(".bias"):
            no_decay.append(p)
        else:
            decay.append(p)
    return [
        {"params": decay, "weight_decay": cfg.weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]


def build_optimizer(model: CaptioningModel, cfg: TrainSettings) -> torch.optim.AdamW:
    return torch.optim.AdamW(build_param_groups(model, cfg), lr=cfg.lr_init)


def _shuffle_seed(seed: int, epoch: int) -> int:
    digest = hashlib.sha256(f"shuffle:{seed}:{epoch}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def shuffled_epoch_order(num_samples: int, seed: int, epoch: int) -> list[int]:
    """Uniform permutation, deterministic in (seed, epoch) on every platform."""
    import random

    order = list(range(num_samples))
    random.Random(_shuffle_seed(seed, epoch)).shuffle(order)
    return order


@dataclass
class TrainLogRow:
    step: int
    epoch: int
    loss: float
    lr: float

    def as_line(self) -> str:
        return f"{self.step}\t{self.epoch}\t{self.loss:.6f}\t{self.lr:.8g}\n"


@dataclass
class Checkpoint:
    """Adapter weights + optimizer state; never extractor or LM tensors."""

    tensors: dict[str, torch.Tensor]
    optimizer_tensors: dict[str, torch.Tensor]
    optimizer_meta: dict
    step: int
    epoch: int
    config_hash: str


def _optimizer_to_entries(opt: torch.optim.Optimizer) -> tuple[dict[str, torch.Tensor], dict]:
    sd = opt.state_dict()
    tensors: dict[str, torch.Tensor] = {}
    scalar_types: dict[str, str] = {}
    for idx, state in sd["state"].items():
        for key, value in state.items():
            name = f"{idx}.{key}"
            if isinstance(value, torch.Tensor):
                tensors[name] = value
            elif isinstance(value, bool):
                raise ValueError(f"unsupported optimizer state {name}: bool")
            elif isinstance(value, int):
                tensors[name] = torch.tensor(float(value), dtype=torch.float64)
                scalar_types[name] = "int"
            elif isinstance(value, float):
                tensors[name] = torch.tensor(value, dtype=torch.float64)
                scalar_types[name] = "float"
            else:
                raise ValueError(f"unsupported optimizer state {name}: {type(value)}")
    groups = []
    for group in sd["param_groups"]:
        g = dict(group)
        if isinstance(g.get("betas"), tuple):
            g["betas"] = list(g["betas"])
        groups.append(g)
    meta = {"param_groups": groups, "scalar_types": scalar_types}
    return tensors, meta


def _entries_to_optimizer_state(tensors: dict[str, torch.Tensor], meta: dict) -> dict:
    scalar_types = meta.get("scalar_types", {})
    state: dict[int, dict] = {}
    for name, tensor in tensors.items():
        idx_str, _, key = name.partition(".")
        entry = state.setdefault(int(idx_str), {})
        kind = scalar_types.get(name)
        if kind == "int":
            entry[key] = int(tensor.item())
        elif kind == "float":
            entry[key] = float(tensor.item())
        else:
            entry[key] = tensor
    groups = []
    for group in meta["param_groups"]:
        g = dict(group)
        if isinstance(g.get("betas"), list):
            g["betas"] = tuple(g["betas"])
        groups.append(g)
    return {"state": state, "param_groups": groups}


def _write_tensor_block(out: list[bytes], name: str, tensor: torch.Tensor) -> None:
    t = tensor.detach().cpu().contiguous()
    if t.dtype not in _DTYPE_CODES:
        raise ValueError(f"unsupported checkpoint dtype {t.dtype} for {name!r}")
    name_b = name.encode("utf-8")
    out.append(struct.pack("<I", len(name_b)))
    out.append(name_b)
    out.append(struct.pack("<I", _DTYPE_CODES[t.dtype]))
    out.append(struct.pack("<I", t.dim()))
    out.append(struct.pack(f"<{t.dim()}Q", *t.shape) if t.dim() else b"")
    out.append(t.numpy().tobytes(order="C"))


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Versioned little-endian container, written atomically."""
    path = Path(path)
    meta = {
        "step": ckpt.step,
        "epoch": ckpt.epoch,
        "config_hash": ckpt.config_hash,
        "optimizer": ckpt.optimizer_meta,
    }
    meta_b = json.dumps(meta, sort_keys=True).encode("utf-8")
    blocks: list[bytes] = [
        CHECKPOINT_MAGIC,
        struct.pack("<I", CHECKPOINT_VERSION),
        struct.pack("<I", len(meta_b)),
        meta_b,
        struct.pack("<I", len(ckpt.tensors)),
    ]
    for name in sorted(ckpt.tensors):
        _write_tensor_block(blocks, name, ckpt.tensors[name])
    blocks.append(struct.pack("<I", len(ckpt.optimizer_tensors)))
    for name in sorted(ckpt.optimizer_tensors):
        _write_tensor_block(blocks, name, ckpt.optimizer_tensors[name])
    payload = b"".join(blocks)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as e:
        raise IoFailure(f"cannot write checkpoint {path}: {e}") from e


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise CorruptCheckpoint(
                f"checkpoint {self.path} truncated at byte {self.off} "
                f"(wanted {n} more of {len(self.data)})"
            )
        chunk = self.data[self.off:self.off + n]
        self.off += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def _read_tensor_block(r: _Reader) -> tuple[str, torch.Tensor]:
    name = r.take(r.u32()).decode("utf-8")
    code = r.u32()
    if code not in _CODE_DTYPES:
        raise CorruptCheckpoint(f"checkpoint {r.path}: unknown dtype code {code}")
    dtype = _CODE_DTYPES[code]
    rank = r.u32()
    if rank > 8:
        raise CorruptCheckpoint(f"checkpoint {r.path}: implausible rank {rank}")
    shape = struct.unpack(f"<{rank}Q", r.take(8 * rank)) if rank else ()
    numel = 1
    for d in shape:
        numel *= d
    itemsize = torch.empty((), dtype=dtype).element_size()
    raw = r.take(numel * itemsize)
    import numpy as np

    np_dtype = {0: "<f4", 1: "<f8", 2: "<i8"}[code]
    arr = np.frombuffer(raw, dtype=np_dtype).copy().reshape(shape)
    return name, torch.from_numpy(arr)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise IoFailure(f"cannot read checkpoint {path}: {e}") from e
    r = _Reader(data, path)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CorruptCheckpoint(f"checkpoint {path}: bad magic")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise CorruptCheckpoint(f"checkpoint {path}: unsupported version {version}")
    try:
        meta = json.loads(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptCheckpoint(f"checkpoint {path}: bad metadata block: {e}") from e
    tensors = {}
    for _ in range(r.u32()):
        name, t = _read_tensor_block(r)
        tensors[name] = t
    opt_tensors = {}
    for _ in range(r.u32()):
        name, t = _read_tensor_block(r)
        opt_tensors[name] = t
    if r.off != len(data):
        raise CorruptCheckpoint(
            f"checkpoint {path}: {len(data) - r.off} trailing bytes"
        )
    for key in ("step", "epoch", "config_hash", "optimizer"):
        if key not in meta:
            raise CorruptCheckpoint(f"checkpoint {path}: metadata missing {key!r}")
    return Checkpoint(
        tensors=tensors,
        optimizer_tensors=opt_tensors,
        optimizer_meta=meta["optimizer"],
        step=meta["step"],
        epoch=meta["epoch"],
        config_hash=meta["config_hash"],
    )


def snapshot_checkpoint(model: CaptioningModel, opt: torch.optim.Optimizer,
                        step: int, epoch: int, cfg: RunConfig) -> Checkpoint:
    tensors = {
        name: p.detach().clone() for name, p in model.trainable_parameters().items()
    }
    opt_tensors, opt_meta = _optimizer_to_entries(opt)
    return Checkpoint(
        tensors=tensors,
        optimizer_tensors={k: v.detach().clone() for k, v in opt_tensors.items()},
        optimizer_meta=opt_meta,
        step=step,
        epoch=epoch,
        config_hash=cfg.model_hash(),
    )


def restore_checkpoint(ckpt: Checkpoint, model: CaptioningModel,
                       opt: torch.optim.Optimizer | None, cfg: RunConfig,
                       force: bool = False) -> None:
    """Copy checkpoint tensors into the live model (and optimizer if given)."""
    if ckpt.config_hash != cfg.model_hash() and not force:
        raise ConfigMismatch(
            f"checkpoint was trained under config hash {ckpt.config_hash[:12]}, "
            f"live config hash is {cfg.model_hash()[:12]} (use force to override)"
        )
    live = model.trainable_parameters()
    missing = sorted(set(live) - set(ckpt.tensors))
    extra = sorted(set(ckpt.tensors) - set(live))
    if missing or extra:
        raise ConfigMismatch(
            f"checkpoint parameter names disagree with the live model "
            f"(missing {missing[:3]}, extra {extra[:3]})"
        )
    with torch.no_grad():
        for name, p in live.items():
            src = ckpt.tensors[name]
            if tuple(src.shape) != tuple(p.shape):
                raise ConfigMismatch(
                    f"checkpoint tensor {name!r} has shape {tuple(src.shape)}, "
                    f"live parameter is {tuple(p.shape)}"
                )
            p.copy_(src.to(p.dtype))
    if opt is not None and ckpt.optimizer_meta.get("param_groups"):
        opt.load_state_dict(
            _entries_to_optimizer_state(ckpt.optimizer_tensors, ckpt.optimizer_meta)
        )


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[TrainLogRow] = field(default_factory=list)
    checkpoint_paths: list[Path] = field(default_factory=list)


def _batched(order: Sequence[int], batch_size: int) -> Iterable[list[int]]:
    for i in range(0, len(order), batch_size):
        yield list(order[i:i + batch_size])


def plan_total_steps(num_samples: int, cfg: TrainSettings) -> int:
    steps_per_epoch = math.ceil(num_samples / cfg.batch_size)
    total = steps_per_epoch * cfg.max_epochs
    if cfg.max_steps is not None:
        total = min(total, cfg.max_steps)
    return total


def train(
    records: Sequence[VideoRecord],
    model: CaptioningModel,
    cfg: RunConfig,
    out_dir: str | Path | None = None,
    samples: Sequence[CaptionSample] | None = None,
    log_name: str = "train_log.tsv",
    resume: Checkpoint | None = None,
) -> TrainResult:
    """Run the optimization loop; returns the final checkpoint and history.

    When out_dir is given, writes one checkpoint per epoch plus the metrics
    log; otherwise trains purely in memory. Resuming restores parameters and
    optimizer state and continues after the checkpoint's epoch; per-epoch
    shuffles depend only on (seed, epoch), so a resumed run retraces the
    uninterrupted one exactly.
    """
    tcfg = cfg.train
    if samples is None:
        samples = [s for r in records for s in expand_samples(r)]
    if not samples:
        raise NonFiniteLoss("cannot train on an empty sample set")
    by_vid = {r.video_id: r for r in records}
    bounds: dict[tuple[str, str], BoundaryAnnotation] = {}
    for r in records:
        for b in r.boundaries:
            bounds[(r.video_id, b.boundary_id)] = b

    total_steps = plan_total_steps(len(samples), tcfg)
    opt = build_optimizer(model, tcfg)
    params = [p for g in opt.param_groups for p in g["params"]]
    start_epoch = 0
    if resume is not None:
        restore_checkpoint(resume, model, opt, cfg)
        start_epoch = resume.epoch + 1

    out_path = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        log_file = out_path / log_name
        fresh = not log_file.exists()
        log_fh = open(log_file, "a", encoding="utf-8")
        if fresh:
            log_fh.write("step\tepoch\tloss\tlr\n")

    result = TrainResult(checkpoint=None)  # type: ignore[arg-type]
    step = resume.step if resume is not None else 0
    if resume is not None:
        result.checkpoint = resume
    try:
        for epoch in range(start_epoch, tcfg.max_epochs):
            order = shuffled_epoch_order(len(samples), cfg.seed, epoch)
            for batch_idx in _batched(order, tcfg.batch_size):
                if step >= total_steps:
                    break
                lr = lr_at(step, total_steps, tcfg)
                for g in opt.param_groups:
                    g["lr"] = lr
                opt.zero_grad()
                losses = []
                batch_samples = [samples[i] for i in batch_idx]
                for s in batch_samples:
                    rec = by_vid[s.video_id]
                    boundary = bounds[(s.video_id, s.boundary_id)]
                    losses.append(model.sample_loss(rec, boundary, s))
                loss = torch.stack(losses).mean()
                loss_val = float(loss.detach())
                if not math.isfinite(loss_val):
                    ids = [f"{s.video_id}/{s.boundary_id}/{s.caption_type.value}"
                           for s in batch_samples]
                    raise NonFiniteLoss(
                        f"non-finite loss {loss_val} at step {step} (lr {lr:.3g}); "
                        f"batch: {ids}"
                    )
                loss.backward()
                if tcfg.grad_clip:
                    torch.nn.utils.clip_grad_norm_(params, tcfg.grad_clip)
                opt.step()
                step += 1
                row = TrainLogRow(step=step, epoch=epoch, loss=loss_val, lr=lr)
                result.history.append(row)
                if log_fh is not None:
                    log_fh.write(row.as_line())
                    log_fh.flush()
            ckpt = snapshot_checkpoint(model, opt, step, epoch, cfg)
            if out_path is not None:
                p = out_path / f"epoch_{epoch:03d}.ckpt"
                save_checkpoint(ckpt, p)
                result.checkpoint_paths.append(p)
            result.checkpoint = ckpt
            if step >= total_steps:
                break
    finally:
        if log_fh is not None:
            log_fh.close()
    return result
