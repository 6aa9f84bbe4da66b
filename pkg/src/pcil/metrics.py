"""Metrics schema shared by the trainer and the experiment harness."""

from __future__ import annotations

from dataclasses import dataclass, fields


@dataclass
class MetricsRow:
    """One evaluation snapshot during a run.

    ``learned_reward_spearman`` is the rank correlation between the learned
    reward and the ground-truth reward over that evaluation's transitions,
    the quantitative stand-in for eyeballing a representation scatter plot.
    """

    step: int
    eval_return_mean: float
    eval_return_std: float
    learned_reward_spearman: float
    encoder_or_disc_loss: float
    critic_loss: float
    actor_loss: float
    al_gap: float

    @classmethod
    def header(cls) -> str:
        return ",".join(f.name for f in fields(cls))

    def to_csv(self) -> str:
        values = [getattr(self, f.name) for f in fields(self)]
        return ",".join(
            str(int(v)) if f.name == "step" else repr(float(v))
            for f, v in zip(fields(self), values)
        )


COMPLETED_SENTINEL = "# completed"
