"""Training loop: seeded epochs, MAE on the final stage, Adam, scheduling.

The schedule: learning rate 2e-4, halved after
three consecutive validation-loss increases, early stop after ten increase
events in total, hard cap of 50 epochs. An increase means strictly greater
than the immediately preceding epoch's validation loss.

Every source of randomness derives from (state.rng_state, epoch), so an
interrupted run resumed from a checkpoint walks the identical trajectory.
"""

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .audio import frame_signal
from .errors import ConfigError, UsageError
from .model import multistage_forward
from .tensor import Tensor, adam_step, mae_loss, no_grad

__all__ = [
    "TrainState",
    "EpochLog",
    "train_epoch",
    "validate",
    "schedule_update",
    "fit",
    "format_log_row",
    "LOG_HEADER",
]

LOG_HEADER = "epoch,train_mae,val_mae,lr,action"


@dataclass
class TrainState:
    """Progress of one training run.

    rng_state is the run's master seed; epoch e draws its shuffle from the
    stream (rng_state, e). epoch counts completed epochs (0-based while
    running).
    """

    epoch: int = 0
    lr: float = 2e-4
    val_history: list = field(default_factory=list)
    consec_increase: int = 0
    total_increase_events: int = 0
    best_val: float = math.inf
    rng_state: int = 0

    def validate_invariants(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must stay positive, got {self.lr}")
        if self.consec_increase > self.total_increase_events:
            raise ConfigError("consecutive increases exceed total increase events")
        if self.val_history and self.best_val != min(self.val_history):
            raise ConfigError("best_val out of sync with val_history")

    def to_dict(self):
        return {
            "epoch": self.epoch,
            "lr": self.lr,
            "val_history": list(self.val_history),
            "consec_increase": self.consec_increase,
            "total_increase_events": self.total_increase_events,
            "best_val": None if math.isinf(self.best_val) else self.best_val,
            "rng_state": self.rng_state,
        }

    @classmethod
    def from_dict(cls, d):
        state = cls(
            epoch=int(d["epoch"]),
            lr=float(d["lr"]),
            val_history=[float(v) for v in d["val_history"]],
            consec_increase=int(d["consec_increase"]),
            total_increase_events=int(d["total_increase_events"]),
            best_val=math.inf if d["best_val"] is None else float(d["best_val"]),
            rng_state=int(d["rng_state"]),
        )
        state.validate_invariants()
        return state


class EpochLog(NamedTuple):
    epoch: int
    train_mae: float
    val_mae: float
    lr: float
    action: str


def format_log_row(row):
    return f"{row.epoch},{row.train_mae:.10g},{row.val_mae:.10g},{row.lr:.10g},{row.action}"


def _stacked_frames(pairs, config):
    """Frame every utterance in the batch and stack along the batch axis."""
    noisy = np.concatenate(
        [frame_signal(p.noisy, config.frame_len, config.hop).frames for p in pairs]
    )
    clean = np.concatenate(
        [frame_signal(p.clean, config.frame_len, config.hop).frames for p in pairs]
    )
    return Tensor(noisy), Tensor(clean)


def _clip_gradients(params, max_norm):
    total = 0.0
    grads = []
    for p in params.values():
        if p.tensor.grad is not None:
            grads.append(p.tensor.grad)
            total += float(np.sum(p.tensor.grad**2))
    norm = math.sqrt(total)
    if norm > max_norm > 0:
        factor = max_norm / norm
        for g in grads:
            g *= factor


def train_epoch(params, state, train_pairs, *, batch_size=2, clip_grad=None):
    """One pass over the pairs in seeded shuffled minibatches; returns mean MAE.

    Each minibatch frames its utterances, runs the configured number of
    stages, takes MAE against the clean frames on the final output only,
    and applies one Adam step at the state's current learning rate.
    """
    pairs = list(train_pairs)
    if not pairs:
        raise UsageError("train_epoch needs a non-empty dataset")
    if batch_size < 1:
        raise UsageError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.default_rng((state.rng_state, state.epoch))
    order = rng.permutation(len(pairs))
    losses = []
    for lo in range(0, len(order), batch_size):
        batch = [pairs[i] for i in order[lo : lo + batch_size]]
        noisy, clean = _stacked_frames(batch, params.config)
        final, _ = multistage_forward(params, noisy)
        loss = mae_loss(final, clean)
        loss.backward()
        if clip_grad is not None:
            _clip_gradients(params, clip_grad)
        adam_step(params.values(), lr=state.lr)
        losses.append(loss.item())
    return float(np.mean(losses))


def validate(params, val_pairs):
    """Mean of per-utterance MAEs, computed without touching any parameter."""
    pairs = list(val_pairs)
    if not pairs:
        raise UsageError("validate needs a non-empty dataset")
    losses = []
    with no_grad():
        for pair in pairs:
            noisy, clean = _stacked_frames([pair], params.config)
            final, _ = multistage_forward(params, noisy)
            losses.append(mae_loss(final, clean).item())
    return float(np.mean(losses))


def schedule_update(state, new_val_loss, *, max_epochs=50, halve_after=3, stop_after=10):
    """Record an epoch's validation loss; returns continue | halve_lr | stop.

    An increase event is new_val_loss strictly above the previous epoch's.
    halve_after consecutive events halve the learning rate and reset the
    streak; stop_after cumulative events, or reaching max_epochs, stop the
    run (stop wins over halve when both fire).
    """
    previous = state.val_history[-1] if state.val_history else None
    if previous is not None and new_val_loss > previous:
        state.consec_increase += 1
        state.total_increase_events += 1
    else:
        state.consec_increase = 0
    state.val_history.append(float(new_val_loss))
    state.best_val = min(state.best_val, float(new_val_loss))
    action = "continue"
    if state.consec_increase >= halve_after:
        state.lr *= 0.5
        state.consec_increase = 0
        action = "halve_lr"
    if state.total_increase_events >= stop_after:
        action = "stop"
    state.epoch += 1
    if state.epoch >= max_epochs:
        action = "stop"
    return action


def fit(
    params,
    state,
    train_pairs,
    val_pairs,
    *,
    max_epochs=50,
    batch_size=2,
    halve_after=3,
    stop_after=10,
    clip_grad=None,
    checkpoint_path=None,
    log_fn=None,
):
    """Run epochs until the schedule stops; returns (state, epoch log rows).

    With checkpoint_path set, the full run state is persisted after every
    epoch, so the run can be killed and resumed without changing a single
    bit of the trajectory.
    """
    train_pairs = list(train_pairs)
    val_pairs = list(val_pairs)
    rows = []
    while state.epoch < max_epochs:
        train_mae = train_epoch(
            params, state, train_pairs, batch_size=batch_size, clip_grad=clip_grad
        )
        val_mae = validate(params, val_pairs)
        lr_used = state.lr
        action = schedule_update(
            state, val_mae, max_epochs=max_epochs,
            halve_after=halve_after, stop_after=stop_after,
        )
        row = EpochLog(state.epoch, train_mae, val_mae, lr_used, action)
        rows.append(row)
        if log_fn is not None:
            log_fn(row)
        if checkpoint_path is not None:
            from .checkpoint import checkpoint_save

            checkpoint_save(params, state, checkpoint_path)
        if action == "stop":
            break
    return state, rows
