"""Server loss, delay accounting, wall-clock / energy proxies and metric export."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import ParamVector, RoundRecord
from .data import Dataset
from .models import ModelKind, batch_loss

GPU_WATTS = 125.0
CPU_WATTS = 45.0

CSV_HEADER = ("round", "server_loss", "tau_t", "gamma_t", "max_delay", "cum_wall_clock", "energy_proxy")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def server_loss(p: ParamVector, data: Dataset, kind: ModelKind) -> float:
    """Mean per-sample loss of ``p`` over the whole dataset."""
    if data.n == 0:
        raise ValueError("empty dataset")
    if data.d != p.dim:
        raise ValueError(f"dataset has d={data.d}, parameters have d={p.dim}")
    return batch_loss(kind, p.to_array(), data.features, data.targets)


def default_powers(C: int) -> dict[int, float]:
    """Even client ids get a GPU-class rating, odd ids a CPU-class one."""
    return {c: GPU_WATTS if c % 2 == 0 else CPU_WATTS for c in range(C)}


def _records(trace) -> Sequence[RoundRecord]:
    return trace.records if hasattr(trace, "records") else trace


def cumulative_wall_clock(trace) -> np.ndarray:
    """Prefix sums of the per-round delay spread ``max_c delay - min_c delay``."""
    records = _records(trace)
    if not records:
        raise ValueError("empty trace")
    return np.cumsum([r.tau_t for r in records])


def energy_proxy(trace, powers: Mapping[int, float]) -> np.ndarray:
    """Prefix sums of ``sum_c P_c * delay_c`` over each round's participants."""
    totals = []
    for r in _records(trace):
        missing = [c for c in r.delays if c not in powers]
        if missing:
            raise ValueError(f"round {r.round}: no power rating for clients {missing}")
        totals.append(sum(powers[c] * r.delays[c] for c in sorted(r.delays)))
    return np.cumsum(totals) if totals else np.zeros(0)


@dataclass
class MetricsLog:
    server_losses: np.ndarray
    max_delays: np.ndarray
    tau_t: np.ndarray
    gamma_t: np.ndarray
    cum_wall_clock: np.ndarray
    energy_proxy: np.ndarray
    powers: dict[int, float] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.server_losses)

    @classmethod
    def from_trace(cls, trace, powers: Optional[Mapping[int, float]] = None) -> "MetricsLog":
        records = _records(trace)
        if powers is None:
            C = trace.config.C if hasattr(trace, "config") else 1 + max(c for r in records for c in r.delays)
            powers = default_powers(C)
        return cls(
            server_losses=np.array([r.server_loss for r in records]),
            max_delays=np.array([r.max_delay for r in records]),
            tau_t=np.array([r.tau_t for r in records]),
            gamma_t=np.array([r.gamma_t for r in records]),
            cum_wall_clock=cumulative_wall_clock(records),
            energy_proxy=energy_proxy(records, powers),
            powers=dict(powers),
        )

    def columns(self) -> dict[str, np.ndarray]:
        return {
            "round": np.arange(len(self)),
            "server_loss": self.server_losses,
            "tau_t": self.tau_t,
            "gamma_t": self.gamma_t,
            "max_delay": self.max_delays,
            "cum_wall_clock": self.cum_wall_clock,
            "energy_proxy": self.energy_proxy,
        }


def export_metrics(log: MetricsLog, directory, fmt: str = "csv", name: str = "metrics") -> Path:
    """Write ``<directory>/<name>.csv`` or ``.json``; overwrites, creates the directory."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown metrics format {fmt!r}")
    directory = Path(directory)
    path = directory / f"{name}.{fmt}"
    cols = log.columns()
    try:
        directory.mkdir(parents=True, exist_ok=True)
        if fmt == "csv":
            with path.open("w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(CSV_HEADER)
                for k in range(len(log)):
                    writer.writerow([str(k)] + [_fmt(cols[h][k]) for h in CSV_HEADER[1:]])
        else:
            payload = {
                "columns": {h: [float(v) for v in cols[h][:]] for h in CSV_HEADER[1:]},
                "powers": {str(c): float(p) for c, p in sorted(log.powers.items())},
            }
            path.write_text(json.dumps(payload, indent=1) + "\n")
    except OSError as err:
        raise OSError(f"could not write metrics to {path}: {err}") from err
    return path


def load_metrics(path) -> MetricsLog:
    path = Path(path)
    if path.suffix == ".json":
        payload = json.loads(path.read_text())
        cols = {h: np.array(v, dtype=np.float64) for h, v in payload["columns"].items()}
        powers = {int(c): float(p) for c, p in payload.get("powers", {}).items()}
    else:
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
            if header != CSV_HEADER:
                raise ValueError(f"{path}: unexpected header {header}")
            rows = np.array([[float(v) for v in row] for row in reader]).reshape(-1, len(CSV_HEADER))
        cols = {h: rows[:, k] for k, h in enumerate(CSV_HEADER)}
        powers = {}
    return MetricsLog(
        server_losses=cols["server_loss"],
        max_delays=cols["max_delay"],
        tau_t=cols["tau_t"],
        gamma_t=cols["gamma_t"],
        cum_wall_clock=cols["cum_wall_clock"],
        energy_proxy=cols["energy_proxy"],
        powers=powers,
    )


PLOTS = {
    "server_loss": "server_losses",
    "max_delay": "max_delays",
    "cum_wall_clock": "cum_wall_clock",
    "energy_proxy": "energy_proxy",
}


def write_plot_data(log: MetricsLog, directory) -> list[Path]:
    """One two-column ``x,y`` CSV per figure (round on x)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for stem, attr in PLOTS.items():
        path = directory / f"{stem}.csv"
        write_xy(path, np.arange(len(log)), getattr(log, attr))
        paths.append(path)
    return paths


def write_xy(path, x, y) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("x", "y"))
        for a, b in zip(x, y):
            writer.writerow((_fmt(a), _fmt(b)))


def render_svg(log: MetricsLog, directory) -> list[Path]:
    """Optional line plots; needs matplotlib."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for stem, attr in PLOTS.items():
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(np.arange(len(log)), getattr(log, attr))
        ax.set_xlabel("round")
        ax.set_ylabel(stem.replace("_", " "))
        if stem == "server_loss":
            ax.set_yscale("log")
        fig.tight_layout()
        path = directory / f"{stem}.svg"
        fig.savefig(path)
        plt.close(fig)
        paths.append(path)
    return paths
