"""Round-based asynchronous FL loop with bounded staleness, plus the sync baseline.

Each round ``j``:

1. draw ``J = round(fraction * C)`` clients without replacement;
2. every selected client draws a staleness ``tau_c <= min(tau_max, j)``,
   starts from the snapshot ``x^(j - tau_c)`` and runs local SGD with the
   learning rate fixed at the end of the previous round;
3. the spread of this round's execution delays sets the next learning rate;
4. the server aggregates the returned parameters (sorted by client id) and
   pushes the result into the snapshot history.
"""

from __future__ import annotations

import dataclasses
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from . import _rng
from .core import GlobalModelHistory, ParamVector, RoundRecord, average_params
from .data import Dataset, PartitionPlan, dirichlet_partition, gen_classification_data, gen_regression_data
from .delay import (
    DelayModel,
    LrSchedule,
    delay_adjusted_lr,
    round_delay_spread,
    sample_delay,
    sample_staleness,
)
from .local import DivergenceError, local_sgd
from .models import ModelKind, batch_loss


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass
class ExperimentConfig:
    """All knobs of one simulation.  Defaults reproduce the regression table."""

    C: int = 10
    rounds: int = 400
    I: int = 50
    gamma0: float = 0.001
    alpha: float = 0.01
    batch: int = 32
    d: int = 10
    n: int = 2000
    fraction: float = 0.5
    tau_max: int = 2
    zeta: float = 0.5
    model: Literal["regression", "svm"] = "regression"
    l2_mu: float = 0.0
    delay_mode: Literal["simulated", "wallclock"] = "simulated"
    base_mean: float = 1.0
    jitter: float = 0.2
    seed: int = 0
    mode: Literal["afl", "sync"] = "afl"
    data_seed: Optional[int] = None
    noise_std: float = 0.2
    min_per_client: Optional[int] = None
    local_unit: Literal["epochs", "steps"] = "epochs"
    aggregation: Literal["mean", "delta_sum"] = "mean"
    lr_schedule: Literal["delay", "constant"] = "delay"
    record_iterates: bool = False

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        for name in ("C", "rounds", "I", "batch", "d", "n"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if not 0 < self.fraction <= 1:
            raise ConfigError("fraction", "must lie in (0, 1]")
        if not 1 <= self.J <= self.C:
            raise ConfigError("fraction", f"round(fraction * C) = {self.J} is outside [1, C]")
        if self.tau_max < 0:
            raise ConfigError("tau_max", "must be >= 0")
        if not self.zeta > 0:
            raise ConfigError("zeta", "must be > 0")
        if not self.gamma0 > 0:
            raise ConfigError("gamma0", "must be > 0")
        if not 0 <= self.alpha <= 1:
            raise ConfigError("alpha", "must lie in [0, 1]")
        if self.l2_mu < 0:
            raise ConfigError("l2_mu", "must be >= 0")
        if self.base_mean < 0 or self.jitter < 0:
            raise ConfigError("base_mean", "delays must be >= 0")
        choices = {
            "model": ("regression", "svm"),
            "delay_mode": ("simulated", "wallclock"),
            "mode": ("afl", "sync"),
            "local_unit": ("epochs", "steps"),
            "aggregation": ("mean", "delta_sum"),
            "lr_schedule": ("delay", "constant"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(name, f"must be one of {', '.join(allowed)}")

    @property
    def J(self) -> int:
        # half-up rounding: fraction 0.25 of 10 clients -> 3
        return int(math.floor(self.fraction * self.C + 0.5))

    @property
    def model_kind(self) -> ModelKind:
        return ModelKind(self.model, self.l2_mu)

    @property
    def delay_model(self) -> DelayModel:
        return DelayModel(self.delay_mode, self.base_mean, self.jitter, self.tau_max)

    @property
    def schedule(self) -> LrSchedule:
        return LrSchedule(self.gamma0, self.alpha)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def regression_table_config(**overrides) -> ExperimentConfig:
    return ExperimentConfig(**overrides)


def svm_table_config(**overrides) -> ExperimentConfig:
    base = dict(model="svm", rounds=1000, I=100, gamma0=0.0005)
    base.update(overrides)
    return ExperimentConfig(**base)


@dataclass
class ClientUpdate:
    client: int
    staleness: int
    start: ParamVector
    final: ParamVector
    delay: float
    steps: int
    iterates: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass
class TrainingTrace:
    config: ExperimentConfig
    records: list[RoundRecord]
    updates: list[list[ClientUpdate]]
    globals: np.ndarray  # (rounds + 1, d + 1); row j is x^(j)

    @property
    def final(self) -> ParamVector:
        return ParamVector.from_array(self.globals[-1])

    @property
    def server_losses(self) -> np.ndarray:
        return np.array([r.server_loss for r in self.records])

    def identical_to(self, other: "TrainingTrace") -> bool:
        """Bit-level equality of records, client updates and global iterates."""
        if self.records != other.records or not np.array_equal(self.globals, other.globals):
            return False
        for mine, theirs in zip(self.updates, other.updates):
            for a, b in zip(mine, theirs):
                if (a.client, a.staleness, a.delay, a.steps) != (b.client, b.staleness, b.delay, b.steps):
                    return False
                if a.start != b.start or a.final != b.final:
                    return False
        return True


def select_clients(C: int, J: int, rng: np.random.Generator) -> tuple[int, ...]:
    """Uniform ``J``-subset of ``range(C)``, returned sorted."""
    if not 1 <= J <= C:
        raise ValueError(f"cannot select {J} of {C} clients")
    return tuple(sorted(int(c) for c in rng.choice(C, size=J, replace=False)))


def build_dataset(config: ExperimentConfig) -> Dataset:
    seed = config.seed if config.data_seed is None else config.data_seed
    if config.model == "regression":
        return gen_regression_data(config.n, config.d, seed, noise_std=config.noise_std)
    return gen_classification_data(config.n, config.d, seed)


def build_partition(config: ExperimentConfig, data: Dataset) -> PartitionPlan:
    seed = config.seed if config.data_seed is None else config.data_seed
    min_per_client = config.batch if config.min_per_client is None else config.min_per_client
    return dirichlet_partition(data, config.C, config.zeta, seed, min_per_client=min_per_client)


@dataclass
class FederationState:
    config: ExperimentConfig
    data: Dataset
    plan: PartitionPlan
    shards: dict[int, Dataset]
    delay: DelayModel
    history: GlobalModelHistory
    gamma: float
    records: list[RoundRecord] = field(default_factory=list)
    updates: list[list[ClientUpdate]] = field(default_factory=list)
    globals: list[np.ndarray] = field(default_factory=list)

    @property
    def round(self) -> int:
        return len(self.records)


def init_state(
    config: ExperimentConfig,
    data: Optional[Dataset] = None,
    plan: Optional[PartitionPlan] = None,
    initial: Optional[ParamVector] = None,
) -> FederationState:
    config.validate()
    data = build_dataset(config) if data is None else data
    if data.d != config.d:
        raise ConfigError("d", f"dataset has {data.d} features, config says {config.d}")
    plan = build_partition(config, data) if plan is None else plan
    if plan.n_clients != config.C:
        raise ConfigError("C", f"partition has {plan.n_clients} clients, config says {config.C}")
    start = ParamVector.zeros(config.d) if initial is None else initial
    return FederationState(
        config=config,
        data=data,
        plan=plan,
        shards={c: plan.shard(data, c) for c in range(config.C)},
        delay=config.delay_model.with_client_scales(config.C, config.seed),
        history=GlobalModelHistory(config.tau_max, start),
        gamma=config.gamma0,
        globals=[start.to_array()],
    )


def _client_update(state: FederationState, client: int, j: int, gamma: float, sync: bool) -> ClientUpdate:
    cfg = state.config
    if sync:
        tau_c = 0
    else:
        tau_c = sample_staleness(state.delay, _rng.stream(cfg.seed, _rng.STALENESS, j, client), j)
    start = state.history.lookup(tau_c)
    began = time.perf_counter()
    try:
        report = local_sgd(
            start,
            state.shards[client],
            cfg.model_kind,
            cfg.I,
            cfg.batch,
            gamma,
            _rng.stream(cfg.seed, _rng.LOCAL, j, client),
            unit=cfg.local_unit,
            record_iterates=cfg.record_iterates,
        )
    except DivergenceError as err:
        raise DivergenceError(
            f"round {j}, client {client}: {err}", step=err.step, round=j, client=client
        ) from err
    elapsed = time.perf_counter() - began
    if state.delay.mode == "simulated":
        delay = sample_delay(state.delay, client, j, _rng.stream(cfg.seed, _rng.DELAY, j, client))
    else:
        delay = elapsed
    return ClientUpdate(client, tau_c, start, report.final_params, delay, report.steps_taken, report.iterates)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("AFL_SIM_THREADS", "1")))
    except ValueError:
        return 1


def afl_round(state: FederationState, sync: Optional[bool] = None) -> FederationState:
    """Advance ``state`` by one round (in place) and return it."""
    cfg = state.config
    sync = cfg.mode == "sync" if sync is None else sync
    j = state.round
    gamma = state.gamma
    selected = select_clients(cfg.C, cfg.J, _rng.stream(cfg.seed, _rng.SELECT, j))

    threads = min(_threads(), len(selected))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            updates = list(pool.map(lambda c: _client_update(state, c, j, gamma, sync), selected))
    else:
        updates = [_client_update(state, c, j, gamma, sync) for c in selected]

    delays = {u.client: u.delay for u in updates}
    tau_t = round_delay_spread(delays)
    if cfg.lr_schedule == "constant":
        state.gamma = cfg.gamma0
    else:
        # without staleness there is nothing for the delay term to damp
        damp = not sync and cfg.tau_max > 0
        state.gamma = delay_adjusted_lr(state.config.schedule, j + 1, tau_t if damp else 0.0)

    if cfg.aggregation == "mean":
        new = average_params([u.final for u in updates])
    else:
        theta = state.history.lookup(0).to_array()
        for u in updates:
            theta = theta + (u.final.to_array() - u.start.to_array())
        new = ParamVector.from_array(theta)
    state.history.push(new)
    new_theta = new.to_array()
    state.globals.append(new_theta)
    state.updates.append(updates)
    state.records.append(
        RoundRecord(
            round=j,
            server_loss=batch_loss(cfg.model_kind, new_theta, state.data.features, state.data.targets),
            selected=selected,
            delays=delays,
            tau_t=tau_t,
            gamma_t=gamma,
            staleness={u.client: u.staleness for u in updates},
        )
    )
    return state


def _run(config: ExperimentConfig, sync: bool, data, plan, initial) -> TrainingTrace:
    state = init_state(config, data, plan, initial)
    for _ in range(config.rounds):
        afl_round(state, sync=sync)
    return TrainingTrace(config, state.records, state.updates, np.array(state.globals))


def run_afl(
    config: ExperimentConfig,
    data: Optional[Dataset] = None,
    plan: Optional[PartitionPlan] = None,
    initial: Optional[ParamVector] = None,
) -> TrainingTrace:
    """Run ``config.rounds`` asynchronous rounds (or sync ones if ``config.mode == "sync"``)."""
    return _run(config, config.mode == "sync", data, plan, initial)


def run_sync_fl(
    config: ExperimentConfig,
    data: Optional[Dataset] = None,
    plan: Optional[PartitionPlan] = None,
    initial: Optional[ParamVector] = None,
) -> TrainingTrace:
    """Same pipeline with every staleness forced to 0 and ``tau_t`` ignored by the schedule."""
    return _run(config.replace(mode="sync"), True, data, plan, initial)


def run(config: ExperimentConfig, **kwargs) -> TrainingTrace:
    return run_sync_fl(config, **kwargs) if config.mode == "sync" else run_afl(config, **kwargs)
