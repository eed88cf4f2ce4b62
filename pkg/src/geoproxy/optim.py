"""AdamW with global gradient clipping, plateau scheduling, early stopping,
and the named-group parameter checkpoint format.

Parameters whose ``grad`` is None when ``step`` runs are skipped entirely:
no moment update, no weight decay. Combined with graph reachability in the
autodiff engine this keeps frozen or unreferenced groups bit-identical.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


class NonFiniteGradientError(RuntimeError):
    """A NaN or Inf gradient was found; the optimizer step was aborted."""

    def __init__(self, group_name: str, tensor_name: str):
        self.group_name = group_name
        super().__init__(f"non-finite gradient in group '{group_name}' (tensor '{tensor_name}')")


@dataclass
class ParameterGroup:
    name: str
    tensors: list[Tensor]
    trainable: bool = True

    def set_trainable(self, flag: bool) -> None:
        self.trainable = flag
        for t in self.tensors:
            t.requires_grad = flag

    def snapshot(self) -> list[np.ndarray]:
        return [t.data.copy() for t in self.tensors]

    def restore(self, arrays: list[np.ndarray]) -> None:
        for t, a in zip(self.tensors, arrays):
            t.data[...] = a


def check_unique_group_names(groups: list[ParameterGroup]) -> None:
    names = [g.name for g in groups]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate parameter group names: {names}")


class AdamW:
    """Decoupled weight decay Adam over named parameter groups."""

    def __init__(
        self,
        groups: list[ParameterGroup],
        lr: float = 3e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
        clip_norm: float | None = 1.0,
    ):
        check_unique_group_names(groups)
        if lr <= 0:
            raise ValueError("learning rate must be strictly positive")
        self.groups = groups
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.step_count = 0
        # per-tensor state keyed by id: (m, v, t)
        self._state: dict[int, tuple[np.ndarray, np.ndarray, int]] = {}

    def zero_grad(self) -> None:
        for g in self.groups:
            for t in g.tensors:
                t.grad = None

    def _participating(self) -> list[tuple[ParameterGroup, Tensor]]:
        out = []
        for g in self.groups:
            if not g.trainable:
                continue
            for t in g.tensors:
                if t.grad is not None:
                    out.append((g, t))
        return out

    def step(self) -> None:
        params = self._participating()
        for g, t in params:
            if not np.all(np.isfinite(t.grad)):
                raise NonFiniteGradientError(g.name, t.name)

        if self.clip_norm is not None and params:
            total_sq = sum(float(np.sum(t.grad * t.grad)) for _, t in params)
            total_norm = np.sqrt(total_sq)
            if total_norm > self.clip_norm:
                factor = self.clip_norm / total_norm
                for _, t in params:
                    t.grad *= factor

        self.step_count += 1
        for _, t in params:
            m, v, tick = self._state.get(id(t), (None, None, 0))
            if m is None:
                m = np.zeros_like(t.data)
                v = np.zeros_like(t.data)
            tick += 1
            g = t.grad
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            self._state[id(t)] = (m, v, tick)
            m_hat = m / (1.0 - self.beta1**tick)
            v_hat = v / (1.0 - self.beta2**tick)
            if self.weight_decay:
                t.data *= 1.0 - self.lr * self.weight_decay
            t.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class PlateauStopState:
    """Joint state for learning-rate plateau reduction and early stopping.

    An evaluation "improves" when the metric drops below the best seen so far
    by more than ``min_delta`` (lower is better). ``patience`` consecutive
    non-improving evaluations multiply the learning rate by ``factor`` (and
    reset the plateau counter); ``stop_patience`` consecutive non-improving
    evaluations raise the stop flag.
    """

    lr: float
    factor: float = 0.5
    patience: int = 5
    min_delta: float = 1e-4
    stop_patience: int = 15
    min_lr: float = 1e-7
    best: float = field(default=float("inf"))
    plateau_bad: int = 0
    stop_bad: int = 0


def plateau_and_early_stop(state: PlateauStopState, val_metric: float) -> tuple[float, bool]:
    """Feed one validation metric; returns (current learning rate, stop flag)."""
    if not np.isfinite(val_metric):
        raise ValueError(f"validation metric must be finite, got {val_metric}")
    if val_metric < state.best - state.min_delta:
        state.best = val_metric
        state.plateau_bad = 0
        state.stop_bad = 0
        return state.lr, False
    state.plateau_bad += 1
    state.stop_bad += 1
    if state.plateau_bad >= state.patience:
        state.lr = max(state.min_lr, state.lr * state.factor)
        state.plateau_bad = 0
    return state.lr, state.stop_bad >= state.stop_patience


# --- checkpoint format -------------------------------------------------------
#
# ASCII header, then a blank line, then raw little-endian float64 payload in
# declaration order:
#
#   geoproxy-checkpoint v1
#   seed=<int>
#   config_hash=<hex>
#   group <name> trainable=<0|1>
#   tensor <dim0> <dim1> ...
#   ...
#   end
#   <binary payload>

_MAGIC = "geoproxy-checkpoint v1"


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def save_checkpoint(path, groups: list[ParameterGroup], seed: int, cfg_hash: str) -> None:
    header = io.StringIO()
    header.write(f"{_MAGIC}\n")
    header.write(f"seed={seed}\n")
    header.write(f"config_hash={cfg_hash}\n")
    for g in groups:
        header.write(f"group {g.name} trainable={int(g.trainable)}\n")
        for t in g.tensors:
            dims = " ".join(str(d) for d in t.data.shape)
            header.write(f"tensor {dims}\n")
    header.write("end\n")
    with open(path, "wb") as fh:
        fh.write(header.getvalue().encode("ascii"))
        for g in groups:
            for t in g.tensors:
                fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, list[np.ndarray]]]:
    """Returns (header dict with seed/config_hash/trainable flags, group arrays)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    end_marker = b"end\n"
    split_at = raw.find(end_marker)
    if split_at < 0 or not raw.startswith(_MAGIC.encode("ascii")):
        raise ValueError(f"not a parameter checkpoint: {path}")
    lines = raw[:split_at].decode("ascii").splitlines()
    payload = raw[split_at + len(end_marker):]

    meta: dict = {"trainable": {}}
    shapes: list[tuple[str, tuple[int, ...]]] = []
    current_group = None
    for line in lines[1:]:
        if line.startswith("seed="):
            meta["seed"] = int(line.split("=", 1)[1])
        elif line.startswith("config_hash="):
            meta["config_hash"] = line.split("=", 1)[1]
        elif line.startswith("group "):
            _, name, flag = line.split()
            current_group = name
            meta["trainable"][name] = bool(int(flag.split("=", 1)[1]))
        elif line.startswith("tensor "):
            dims = tuple(int(x) for x in line.split()[1:])
            shapes.append((current_group, dims))

    groups: dict[str, list[np.ndarray]] = {}
    offset = 0
    for name, dims in shapes:
        count = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(dims)
        offset += count * 8
        groups.setdefault(name, []).append(arr.astype(np.float64))
    return meta, groups


def restore_groups(groups: list[ParameterGroup], arrays: dict[str, list[np.ndarray]]) -> None:
    for g in groups:
        if g.name not in arrays:
            raise KeyError(f"checkpoint has no group '{g.name}'")
        stored = arrays[g.name]
        if len(stored) != len(g.tensors):
            raise ValueError(f"group '{g.name}': {len(stored)} stored vs {len(g.tensors)} live tensors")
        for t, a in zip(g.tensors, stored):
            if t.data.shape != a.shape:
                raise ValueError(f"group '{g.name}': shape {a.shape} does not match {t.data.shape}")
            t.data[...] = a
