"""Numerical checks of the variance identities and convergence bounds behind AFL.

Small instances are checked by exact enumeration (subsets, tuples,
permutations); larger ones by Monte Carlo with a reported standard error.
The recursion / drift / theorem checks run the simulator on ridge-regularised
least squares, where every constant (``L``, ``mu``, ``x*``, ``nu*``, ``delta``)
can be computed in closed form from the client shards.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .core import ParamVector
from .data import Dataset, PartitionPlan, gen_regression_data
from .orchestrator import ExperimentConfig, TrainingTrace, run_afl

RngLike = Union[int, np.random.Generator, None]


def _generator(rng: RngLike) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


@dataclass
class VerificationReport:
    """Outcome of one check.

    ``kind="equality"`` passes when ``|empirical - analytic| <= tolerance``;
    ``kind="bound"`` when ``empirical <= analytic * (1 + tolerance)``;
    ``kind="rate"`` when ``empirical >= analytic`` (fraction of rounds that hold).
    ``bound`` carries a secondary upper bound that must also hold, if any.
    """

    name: str
    analytic: float
    empirical: float
    tolerance: float
    trials: int
    passed: bool
    kind: str = "equality"
    bound: Optional[float] = None
    notes: str = ""
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["pass"] = out.pop("passed")
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, default=_jsonable)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _equality(name, analytic, empirical, tolerance, trials, bound=None, notes="", details=None):
    ok = abs(empirical - analytic) <= tolerance
    if bound is not None:
        ok = ok and empirical <= bound
    return VerificationReport(name, float(analytic), float(empirical), float(tolerance), int(trials),
                              bool(ok), "equality", None if bound is None else float(bound), notes,
                              details or {})


# ---------------------------------------------------------------- martingale


def verify_martingale_identity(
    m: int,
    noise_scale: float,
    trials: int,
    rng: RngLike = None,
    dim: int = 2,
    rel_tol: float = 0.01,
) -> VerificationReport:
    """Second moment of a sum of martingale differences equals the sum of second moments.

    The differences are ``Y_k = delta * g(S_{k-1}) * eps_k`` with ``eps_k`` a
    random sign vector of unit norm and ``g(s) = (1 + tanh |s|) / 2``, so each
    step depends on the past yet has conditional mean zero and conditional
    second moment at most ``delta^2``.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if trials < 1000:
        raise ValueError("trials must be >= 1000")
    if noise_scale < 0:
        raise ValueError("noise_scale must be >= 0")
    gen = _generator(rng)
    S = np.zeros((trials, dim))
    per_step = np.empty(m)
    for k in range(m):
        g = 0.5 + 0.5 * np.tanh(np.linalg.norm(S, axis=1))
        eps = gen.choice((-1.0, 1.0), size=(trials, dim)) / math.sqrt(dim)
        Y = noise_scale * g[:, None] * eps
        per_step[k] = float(np.einsum("ij,ij->", Y, Y)) / trials
        S += Y
    lhs = float(np.einsum("ij,ij->", S, S)) / trials
    rhs = float(per_step.sum())
    return _equality(
        "martingale_identity",
        analytic=rhs,
        empirical=lhs,
        tolerance=rel_tol * rhs,
        trials=trials,
        bound=m * noise_scale ** 2,
        notes=f"m={m}, delta={noise_scale}, dim={dim}; analytic side is the summed per-step second moment",
        details={"relative_gap": abs(lhs - rhs) / rhs if rhs else 0.0},
    )


# ---------------------------------------------------------- sampling variance


def _as_population(population) -> np.ndarray:
    pop = np.asarray(population, dtype=np.float64)
    if pop.ndim == 1:
        pop = pop[:, None]
    if pop.ndim != 2 or len(pop) == 0:
        raise ValueError("population must be a non-empty list of scalars or vectors")
    return pop


def population_variance(population) -> float:
    """``nu^2 = (1/m) sum ||x_i - mean||^2``."""
    pop = _as_population(population)
    dev = pop - pop.mean(axis=0)
    return float(np.einsum("ij,ij->", dev, dev)) / len(pop)


def sampling_variance_formula(nu2: float, m: int, s: int, mode: str) -> float:
    if mode == "with":
        return nu2 / s
    if mode == "without":
        if m < 2:
            raise ValueError("sampling without replacement needs m >= 2")
        return (m - s) * nu2 / (s * (m - 1))
    raise ValueError(f"unknown sampling mode {mode!r}")


EXACT_LIMIT = 8
TUPLE_LIMIT = 2_000_000


def verify_sampling_variance(
    population,
    s: int,
    mode: str = "without",
    trials: Optional[int] = None,
    rng: RngLike = None,
    tolerance: Optional[float] = None,
) -> VerificationReport:
    """Compare ``E||mean of s draws - population mean||^2`` with its closed form.

    Enumerates every subset (or ordered tuple) when ``m <= 8`` and no trial
    count is forced; otherwise samples ``trials`` draws and uses a 3-sigma
    tolerance unless one is given.
    """
    pop = _as_population(population)
    m = len(pop)
    if mode not in ("with", "without"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    if s < 1:
        raise ValueError("s must be >= 1")
    if mode == "without" and s > m:
        raise ValueError(f"cannot draw {s} of {m} items without replacement")
    nu2 = population_variance(pop)
    analytic = sampling_variance_formula(nu2, m, s, mode)
    centre = pop.mean(axis=0)

    exact = trials is None and m <= EXACT_LIMIT and (mode == "without" or m ** s <= TUPLE_LIMIT)
    if exact:
        if mode == "without":
            idx = np.array(list(itertools.combinations(range(m), s)))
        else:
            idx = np.array(list(itertools.product(range(m), repeat=s)))
        dev = pop[idx].mean(axis=1) - centre
        sq = np.einsum("ij,ij->i", dev, dev)
        empirical = float(sq.mean())
        count = len(idx)
        tol = 1e-12 if tolerance is None else tolerance
        se = 0.0
    else:
        count = 100_000 if trials is None else trials
        gen = _generator(rng)
        sq = np.empty(count)
        chunk = max(1, min(count, 2_000_000 // max(m, 1)))
        for lo in range(0, count, chunk):
            k = min(chunk, count - lo)
            if mode == "without":
                idx = np.argpartition(gen.random((k, m)), s - 1, axis=1)[:, :s]
            else:
                idx = gen.integers(0, m, size=(k, s))
            dev = pop[idx].mean(axis=1) - centre
            sq[lo:lo + k] = np.einsum("ij,ij->i", dev, dev)
        empirical = float(sq.mean())
        se = float(sq.std(ddof=1) / math.sqrt(count)) if count > 1 else 0.0
        tol = 3.0 * se if tolerance is None else tolerance
    return _equality(
        f"sampling_variance_{mode}",
        analytic,
        empirical,
        tol,
        count,
        notes=f"m={m}, s={s}, {'exact enumeration' if exact else 'Monte Carlo'}",
        details={"nu2": nu2, "standard_error": se, "exact": exact},
    )


# -------------------------------------------------- sequential participation


def sequential_closed_form(J: int, I: int, C: int, nu2=1):
    """Closed form of the sequential-participation sum; exact for Fraction input."""
    if C < 2:
        raise ValueError("C must be >= 2")
    if not 1 <= J <= C or I < 1:
        raise ValueError("need 1 <= J <= C and I >= 1")
    J_, I_, C_ = Fraction(J), Fraction(I), Fraction(C)
    value = (
        J_ * I_ ** 2 * (J_ * I_ - 1) / 2
        - J_ * I_ * (I_ ** 2 - 1) / 6
        - (J_ - 1) * J_ * I_ ** 2 / (2 * (C_ - 1)) * ((2 * J_ - 1) * I_ / 3 - 1)
    )
    if isinstance(nu2, (int, Fraction)):
        return value * nu2
    return float(value) * nu2


def sequential_expanded_form(J: int, I: int, C: int, nu2=1):
    """The same quantity before the sums over clients and steps are collapsed."""
    if C < 2:
        raise ValueError("C must be >= 2")
    cs = range(1, J + 1)
    steps = range(I)
    s1 = sum(Fraction(c - 1) for c in cs)
    s2 = sum(Fraction((c - 1) ** 2) for c in cs)
    si = sum(Fraction(i) for i in steps)
    si2 = sum(Fraction(i * i) for i in steps)
    value = (
        Fraction(C * I ** 3, C - 1) * s1
        - Fraction(I ** 3, C - 1) * s2
        + J * si2
        - Fraction(2 * I, C - 1) * s1 * si
    )
    if isinstance(nu2, (int, Fraction)):
        return value * nu2
    return float(value) * nu2


def sequential_bound(J: int, I: int, nu2: float) -> float:
    return 0.5 * J * J * I ** 3 * nu2


def _sequential_sum(dev: np.ndarray, orders: np.ndarray, I: int) -> np.ndarray:
    """Per-order value of ``sum_c sum_i ||I * S_{c-1} + i * (x_{psi_c} - mean)||^2``.

    ``dev`` is ``(..., C, d)``, ``orders`` is ``(P, J)``; returns ``(..., P)``.
    """
    D = dev[..., orders, :]  # (..., P, J, d)
    prev = np.cumsum(D, axis=-2) - D  # sum over earlier participants
    total = np.zeros(D.shape[:-2])
    for i in range(I):
        v = I * prev + i * D
        total += np.einsum("...jd,...jd->...", v, v)
    return total


def sequential_participation_lhs(population, J: int, I: int, trials: Optional[int] = None,
                                 rng: RngLike = None) -> tuple[float, float, int]:
    """Expectation over random orders; returns ``(value, standard_error, count)``."""
    pop = _as_population(population)
    C = len(pop)
    if not 1 <= J <= C:
        raise ValueError(f"J={J} must lie in [1, C={C}]")
    dev = pop - pop.mean(axis=0)
    if trials is None and C <= 7:
        orders = np.array(list(itertools.permutations(range(C), J)))
        vals = _sequential_sum(dev, orders, I)
        return float(vals.mean()), 0.0, len(orders)
    count = 10_000 if trials is None else trials
    gen = _generator(rng)
    orders = np.argsort(gen.random((count, C)), axis=1)[:, :J]
    vals = _sequential_sum(dev, orders, I)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(count)), count


def verify_sequential_participation_bound(
    C: int,
    J: int,
    I: int,
    population,
    trials: Optional[int] = None,
    rng: RngLike = None,
    tolerance: float = 1e-10,
) -> VerificationReport:
    """LHS by enumeration (``C <= 7``) or sampling, against the closed form and the
    ``J^2 I^3 nu^2 / 2`` bound."""
    pop = _as_population(population)
    if len(pop) != C:
        raise ValueError(f"population has {len(pop)} members, C={C}")
    if C < 2:
        raise ValueError("C must be >= 2")
    if I < 1:
        raise ValueError("I must be >= 1")
    nu2 = population_variance(pop)
    lhs, se, count = sequential_participation_lhs(pop, J, I, trials, rng)
    closed = sequential_closed_form(J, I, C, nu2)
    bound = sequential_bound(J, I, nu2)
    tol = tolerance if se == 0.0 else 3.0 * se
    return _equality(
        "sequential_participation",
        closed,
        lhs,
        tol,
        count,
        bound=bound * (1 + 1e-12) + 1e-300,
        notes=f"C={C}, J={J}, I={I}",
        details={"nu2": nu2, "standard_error": se, "half_J2_I3_nu2": bound},
    )


def verify_sequential_identity(max_value: int = 5) -> VerificationReport:
    """Expanded and collapsed forms agree in exact arithmetic on a grid of (J, I, C)."""
    worst = Fraction(0)
    checked = 0
    for J, I, C in itertools.product(range(1, max_value + 1), repeat=3):
        if C < 2 or J > C:
            continue
        gap = abs(sequential_expanded_form(J, I, C) - sequential_closed_form(J, I, C))
        worst = max(worst, gap)
        checked += 1
    return _equality("sequential_identity", 0.0, float(worst), 0.0, checked,
                     notes=f"(J, I, C) in 1..{max_value}, J <= C, C >= 2; rational arithmetic")


# ---------------------------------------------------------- problem constants


@dataclass(frozen=True)
class ProblemConstants:
    mu: float
    L: float
    delta: float
    nu_star: float
    x_star: ParamVector

    def __post_init__(self) -> None:
        if not 0 < self.mu <= self.L * (1 + 1e-12):
            raise ValueError(f"need 0 < mu <= L, got mu={self.mu}, L={self.L}")


class FederatedObjective:
    """``F = (1/C) sum_c F_c`` with ridge-regularised least-squares client losses.

    Each ``F_c(theta) = theta' A_c theta / 2 - b_c' theta + const`` over the
    augmented features ``[x, 1]``; the ridge term skips the bias.
    """

    def __init__(self, shards: Sequence[Dataset], l2_mu: float):
        if not shards:
            raise ValueError("no client shards")
        if any(s.kind != "regression" for s in shards):
            raise ValueError("closed-form constants need regression shards")
        self.l2_mu = float(l2_mu)
        self.shards = list(shards)
        d = shards[0].d
        self.dim = d + 1
        ridge = np.diag(np.r_[np.full(d, self.l2_mu), 0.0])
        self._aug, self.A, self.b, self.c0 = [], [], [], []
        for s in self.shards:
            Xa = np.hstack([s.features, np.ones((s.n, 1))])
            self._aug.append(Xa)
            self.A.append(Xa.T @ Xa / s.n + ridge)
            self.b.append(Xa.T @ s.targets / s.n)
            self.c0.append(0.5 * float(s.targets @ s.targets) / s.n)
        self.A_mean = np.mean(self.A, axis=0)
        self.b_mean = np.mean(self.b, axis=0)
        self.c_mean = float(np.mean(self.c0))
        self.x_star = np.linalg.solve(self.A_mean, self.b_mean)
        self.f_star = self.value(self.x_star)

    @classmethod
    def from_partition(cls, data: Dataset, plan: PartitionPlan, l2_mu: float) -> "FederatedObjective":
        return cls([plan.shard(data, c) for c in range(plan.n_clients)], l2_mu)

    def value(self, theta: np.ndarray) -> np.ndarray:
        """``F`` at one point ``(d+1,)`` or many ``(p, d+1)``."""
        theta = np.asarray(theta, dtype=np.float64)
        quad = 0.5 * np.einsum("...i,ij,...j->...", theta, self.A_mean, theta)
        return quad - theta @ self.b_mean + self.c_mean

    def gap(self, theta: np.ndarray) -> np.ndarray:
        """``D_F(theta, x*) = F(theta) - F(x*)`` (the gradient vanishes at ``x*``)."""
        dev = np.asarray(theta, dtype=np.float64) - self.x_star
        return 0.5 * np.einsum("...i,ij,...j->...", dev, self.A_mean, dev)

    def client_grad(self, c: int, theta: np.ndarray) -> np.ndarray:
        return self.A[c] @ theta - self.b[c]

    def smoothness(self) -> float:
        return max(float(np.linalg.eigvalsh(A)[-1]) for A in self.A)

    def strong_convexity(self) -> float:
        return min(float(np.linalg.eigvalsh(A)[0]) for A in self.A)

    def nu_star_sq(self) -> float:
        return float(np.mean([np.sum(self.client_grad(c, self.x_star) ** 2) for c in range(len(self.A))]))

    def minibatch_variance(self, points: np.ndarray, batch: int) -> float:
        """Largest variance of a size-``batch`` without-replacement gradient estimate,
        over every client and every row of ``points``."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        worst = 0.0
        for Xa, s in zip(self._aug, self.shards):
            n = s.n
            b = min(batch, n)
            if b >= n:
                continue
            R = Xa @ pts.T - s.targets[:, None]  # (n, p) residuals
            row_sq = np.einsum("ij,ij->i", Xa, Xa)
            mean_sq = (R * R).T @ row_sq / n
            g = Xa.T @ R / n  # (d+1, p)
            sigma2 = mean_sq - np.einsum("ij,ij->j", g, g)
            factor = (n - b) / (b * (n - 1))
            worst = max(worst, factor * float(sigma2.max()))
        return worst


def visited_points(traces: Iterable[TrainingTrace]) -> np.ndarray:
    rows = []
    for tr in traces:
        rows.append(tr.globals)
        for ups in tr.updates:
            for u in ups:
                if u.iterates is not None:
                    rows.append(u.iterates)
    return np.vstack(rows)


def estimate_constants(objective: FederatedObjective, batch: int,
                       points: Optional[np.ndarray] = None) -> ProblemConstants:
    delta2 = 0.0 if points is None else objective.minibatch_variance(points, batch)
    return ProblemConstants(
        mu=objective.strong_convexity(),
        L=objective.smoothness(),
        delta=math.sqrt(max(delta2, 0.0)),
        nu_star=math.sqrt(objective.nu_star_sq()),
        x_star=ParamVector.from_array(objective.x_star),
    )


# ----------------------------------------------------------------- drift


def _as_traces(traces) -> list[TrainingTrace]:
    if isinstance(traces, TrainingTrace):
        return [traces]
    out = list(traces)
    if not out:
        raise ValueError("no traces given")
    return out


def _client_drift(trace: TrainingTrace, reference: str, include_final: bool) -> np.ndarray:
    out = np.zeros(len(trace.records))
    for j, ups in enumerate(trace.updates):
        for u in ups:
            if u.iterates is None:
                raise ValueError("trace was recorded without local iterates (set record_iterates=True)")
            ref = trace.globals[j] if reference == "global" else u.start.to_array()
            rows = u.iterates if include_final else u.iterates[:-1]
            dev = rows - ref
            out[j] += float(np.einsum("ij,ij->", dev, dev))
    return out


def measure_client_drift(traces, reference: str = "global", include_final: bool = False) -> np.ndarray:
    """Per-round ``sum_c sum_i ||x_{c,i} - x_ref||^2`` averaged over the given traces.

    ``i`` runs over the local iterates before each step (``0 .. I-1``);
    ``include_final`` adds the returned point as well.  ``reference`` is the
    round's global model (``"global"``) or the snapshot the client actually
    started from (``"snapshot"``).
    """
    if reference not in ("global", "snapshot"):
        raise ValueError(f"unknown drift reference {reference!r}")
    traces = _as_traces(traces)
    return np.mean([_client_drift(tr, reference, include_final) for tr in traces], axis=0)


def _check_step(k: ProblemConstants, lam: float, J: int, I: int) -> None:
    if lam < 0:
        raise ValueError("step size must be >= 0")
    if lam > (1 + 1e-12) / (6 * k.L * J * I):
        raise ValueError("step size exceeds 1/(6LJI)")


def drift_bound_rhs(k: ProblemConstants, lam: float, J: int, I: int, gap) -> np.ndarray:
    lam2 = lam * lam
    return (
        2.25 * J * J * I * I * lam2 * k.delta ** 2
        + 2.25 * J * J * I ** 3 * lam2 * k.nu_star ** 2
        + 3.0 * k.L * J ** 3 * I ** 3 * lam2 * np.asarray(gap)
    )


def check_drift_bound(traces, k: ProblemConstants, lam: float, J: int, I: int,
                      objective: Optional[FederatedObjective] = None) -> VerificationReport:
    """Seed-averaged drift against its bound at every round."""
    _check_step(k, lam, J, I)
    traces = _as_traces(traces)
    objective = objective or _objective_from_trace(traces[0])
    drift = measure_client_drift(traces)
    rounds = len(drift)
    gaps = np.mean([objective.gap(tr.globals[:rounds]) for tr in traces], axis=0)
    rhs = drift_bound_rhs(k, lam, J, I, gaps)
    slack = 1e-12 * np.maximum(1.0, rhs)
    holds = drift <= rhs + slack
    ratio = np.divide(drift, rhs, out=np.zeros_like(drift), where=rhs > 0)
    return VerificationReport(
        "drift_bound",
        analytic=1.0,
        empirical=float(ratio.max()),
        tolerance=0.0,
        trials=len(traces),
        passed=bool(holds.all()),
        kind="bound",
        notes=f"worst per-round drift/bound ratio over {rounds} rounds; J={J}, I={I}, lambda={lam:.6g}",
        details={"rounds_held": int(holds.sum()), "rounds": rounds, "drift": drift, "rhs": rhs},
    )


def noise_coefficient(C: int, J: int) -> float:
    """``(C - J) / (J (C - 1))``; zero under full participation."""
    if J == C:
        return 0.0
    return (C - J) / (J * (C - 1))


def check_recursion(traces, k: ProblemConstants, lam: float, J: int, I: int, C: int,
                    objective: Optional[FederatedObjective] = None, sigmas: float = 3.0,
                    required_rate: float = 0.95) -> VerificationReport:
    """One-round distance recursion, seed by seed, with a ``sigmas``-SE allowance.

    For every round the per-seed residual ``lhs - rhs`` is formed (the right
    side is linear in per-seed quantities, so its seed average is the bound on
    the averaged left side).  A round holds when the mean residual is at most
    ``sigmas`` standard errors above zero.
    """
    _check_step(k, lam, J, I)
    traces = _as_traces(traces)
    objective = objective or _objective_from_trace(traces[0])
    x_star = objective.x_star
    rounds = len(traces[0].records)
    coef = noise_coefficient(C, J)
    residuals = []
    for tr in traces:
        dist = np.sum((tr.globals - x_star) ** 2, axis=1)
        gap = objective.gap(tr.globals[:rounds])
        drift = _client_drift(tr, "snapshot", include_final=False)
        rhs = (
            (1 - mu_term(k, J, I, lam)) * dist[:rounds]
            + 4 * J * I * lam ** 2 * k.delta ** 2
            + 4 * J * J * I * I * lam ** 2 * coef * k.nu_star ** 2
            - (2.0 / 3.0) * J * I * lam * gap
            + (8.0 / 3.0) * k.L * lam * drift
        )
        residuals.append(dist[1:rounds + 1] - rhs)
    R = np.array(residuals)
    mean = R.mean(axis=0)
    se = R.std(axis=0, ddof=1) / math.sqrt(len(traces)) if len(traces) > 1 else np.zeros(rounds)
    scale = np.max(np.abs(R), axis=0)
    holds = mean <= sigmas * se + 1e-12 * np.maximum(1.0, scale)
    rate = float(holds.mean())
    return VerificationReport(
        "recursion",
        analytic=required_rate,
        empirical=rate,
        tolerance=sigmas,
        trials=len(traces),
        passed=rate >= required_rate,
        kind="rate",
        notes=(
            f"fraction of {rounds} rounds where the recursion holds within {sigmas:g} standard errors; "
            "the participation noise coefficient uses (C-J)/(J(C-1)), "
            "an alternative derivation gives (J-I)/(J(J-1)) instead"
        ),
        details={"mean_residual": mean, "standard_error": se, "noise_coefficient": coef},
    )


def mu_term(k: ProblemConstants, J: int, I: int, lam: float) -> float:
    return k.mu * J * I * lam / 2


def _objective_from_trace(trace: TrainingTrace) -> FederatedObjective:
    from .orchestrator import build_dataset, build_partition

    data = build_dataset(trace.config)
    plan = build_partition(trace.config, data)
    return FederatedObjective.from_partition(data, plan, trace.config.l2_mu)


# ---------------------------------------------------------------- theorem


def residual_floor(k: ProblemConstants, lam_tilde: float, C: int, I: int) -> float:
    d2, n2 = k.delta ** 2, k.nu_star ** 2
    return (
        12 * lam_tilde * d2 / (C * I)
        + 18 * k.L * lam_tilde ** 2 * d2 / (C * I)
        + 18 * k.L * lam_tilde ** 2 * n2 / C
    )


def theorem_bound_curve(k: ProblemConstants, lam_tilde: float, C: int, J: int, I: int,
                        rounds: Union[int, np.ndarray], x0) -> np.ndarray:
    """Bound on the weighted-average suboptimality after ``0 .. rounds`` rounds.

    ``rounds`` may also be an explicit array of round counts.
    """
    if lam_tilde <= 0:
        raise ValueError("effective step size must be > 0")
    if lam_tilde > (1 + 1e-12) / (6 * k.L):
        raise ValueError("effective step size exceeds 1/(6L)")
    x0 = x0.to_array() if isinstance(x0, ParamVector) else np.asarray(x0, dtype=np.float64)
    r0 = float(np.sum((x0 - k.x_star.to_array()) ** 2))
    js = np.arange(rounds + 1) if np.isscalar(rounds) else np.asarray(rounds, dtype=np.float64)
    return 4.5 * k.mu * r0 * np.exp(-k.mu * lam_tilde * js / 2) + residual_floor(k, lam_tilde, C, I)


def weighted_average_iterates(globals_: np.ndarray, mu: float, lam_tilde: float) -> np.ndarray:
    """Row ``t`` is the average of ``x^(0..t)`` with weights ``(1 - mu*lam_tilde/2)^-(j+1)``.

    Computed as a running mean so the growing weights never overflow.
    """
    r = 1.0 - mu * lam_tilde / 2
    out = np.empty_like(globals_)
    rho = 0.0
    avg = np.zeros(globals_.shape[1])
    for t, x in enumerate(globals_):
        rho = r * rho + 1.0
        avg = avg + (x - avg) / rho
        out[t] = avg
    return out


def weighted_suboptimality(traces, objective: FederatedObjective, mu: float, lam_tilde: float) -> np.ndarray:
    traces = _as_traces(traces)
    return np.mean(
        [objective.gap(weighted_average_iterates(tr.globals, mu, lam_tilde)) for tr in traces], axis=0
    )


def check_theorem(traces, k: ProblemConstants, objective: FederatedObjective, lam_tilde: float,
                  C: int, J: int, I: int) -> VerificationReport:
    traces = _as_traces(traces)
    rounds = len(traces[0].records)
    bound = theorem_bound_curve(k, lam_tilde, C, J, I, rounds, traces[0].globals[0])
    emp = weighted_suboptimality(traces, objective, k.mu, lam_tilde)
    holds = emp <= bound * (1 + 1e-12)
    ratio = emp / bound
    return VerificationReport(
        "theorem_domination",
        analytic=1.0,
        empirical=float(ratio.max()),
        tolerance=1e-12,
        trials=len(traces),
        passed=bool(holds.all()),
        kind="bound",
        notes=f"worst ratio of weighted-average suboptimality to the bound over {rounds + 1} round counts",
        details={"empirical": emp, "bound": bound},
    )


def check_residual_floor(k: ProblemConstants, lam_tilde: float, C: int, J: int, I: int,
                         x0, far: float = 1e9) -> VerificationReport:
    """Evaluate the bound curve at a very large round count against the floor formula."""
    direct = float(theorem_bound_curve(k, lam_tilde, C, J, I, np.array([far]), x0)[0])
    floor = residual_floor(k, lam_tilde, C, I)
    return _equality("theorem_residual_floor", floor, direct, 1e-12, 1,
                     notes=f"bound curve evaluated at round {far:g}")


# ---------------------------------------------------- reference experiments


def ridge_config(seed: int, rounds: int = 100, C: int = 4, I: int = 3, l2_mu: float = 0.1,
                 **overrides) -> ExperimentConfig:
    """Full participation, constant step, summed client deltas, literal local steps."""
    base = dict(
        C=C, rounds=rounds, I=I, fraction=1.0, tau_max=0, l2_mu=l2_mu, seed=seed, data_seed=0,
        local_unit="steps", aggregation="delta_sum", lr_schedule="constant", alpha=0.0,
        record_iterates=True,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


@dataclass
class RidgeExperiment:
    traces: list[TrainingTrace]
    objective: FederatedObjective
    constants: ProblemConstants
    lam: float
    config: ExperimentConfig


def ridge_experiment(seeds: Sequence[int] = tuple(range(20)), rounds: int = 100, C: int = 4, I: int = 3,
                     l2_mu: float = 0.1, **overrides) -> RidgeExperiment:
    """Run one ridge-regression federation per seed at ``lambda = 1/(6 L J I)``.

    The data and the partition are shared across seeds (``data_seed=0``); the
    seeds vary only the mini-batches.
    """
    from .orchestrator import build_dataset, build_partition

    probe = ridge_config(seeds[0], rounds, C, I, l2_mu, **overrides)
    data = build_dataset(probe)
    plan = build_partition(probe, data)
    objective = FederatedObjective.from_partition(data, plan, l2_mu)
    L = objective.smoothness()
    lam = 1.0 / (6 * L * probe.J * I)
    traces = [
        run_afl(ridge_config(s, rounds, C, I, l2_mu, gamma0=lam, **overrides), data=data, plan=plan)
        for s in seeds
    ]
    constants = estimate_constants(objective, probe.batch, visited_points(traces))
    return RidgeExperiment(traces, objective, constants, lam, probe.replace(gamma0=lam))


@dataclass
class TheoremExperiment:
    traces: list[TrainingTrace]
    objective: FederatedObjective
    constants: ProblemConstants
    lam_tilde: float
    config: ExperimentConfig


def theorem_experiment(rounds: int = 200, C: int = 4, I: int = 3, n_per_client: int = 200,
                       l2_mu: float = 0.1, d: int = 2, seed: int = 0) -> TheoremExperiment:
    """Identical clients, full batches, full participation at ``lam_tilde = 1/(6L)``.

    Every client holds the same data, so ``nu* = 0``; full batches make
    ``delta = 0``.  The local step is ``lam_tilde / (C I)``.
    """
    base = gen_regression_data(n_per_client, d, seed)
    tiled = Dataset(
        np.tile(base.features, (C, 1)), np.tile(base.targets, C), "regression",
        true_weights=base.true_weights, true_bias=base.true_bias,
    )
    plan = PartitionPlan({c: np.arange(c * n_per_client, (c + 1) * n_per_client) for c in range(C)}, math.inf)
    objective = FederatedObjective.from_partition(tiled, plan, l2_mu)
    L = objective.smoothness()
    lam_tilde = 1.0 / (6 * L)
    config = ExperimentConfig(
        C=C, rounds=rounds, I=I, d=d, n=C * n_per_client, batch=n_per_client, fraction=1.0, tau_max=0,
        l2_mu=l2_mu, seed=seed, local_unit="steps", aggregation="delta_sum", lr_schedule="constant",
        alpha=0.0, gamma0=lam_tilde / (C * I),
    )
    trace = run_afl(config, data=tiled, plan=plan)
    constants = estimate_constants(objective, config.batch, trace.globals)
    return TheoremExperiment([trace], objective, constants, lam_tilde, config)


# ---------------------------------------------------------------- suites

SUITES = ("martingale", "sampling", "sequential", "drift", "recursion", "theorem")


def run_suite(name: str, seed: int = 0) -> list[VerificationReport]:
    """Run one named suite (or ``"all"``) at its default sizes."""
    if name == "all":
        reports = []
        cache: dict = {}
        for suite in SUITES:
            reports.extend(_SUITE_FUNCS[suite](seed, cache))
        return reports
    if name not in _SUITE_FUNCS:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES + ('all',))}")
    return _SUITE_FUNCS[name](seed, {})


def _suite_martingale(seed, cache):
    gen = np.random.default_rng(seed)
    return [
        verify_martingale_identity(10, 1.0, 1_000_000, gen),
        verify_martingale_identity(1, 1.0, 10_000, gen),
        verify_martingale_identity(5, 0.0, 1_000, gen),
    ]


def _suite_sampling(seed, cache):
    gen = np.random.default_rng(seed)
    reports = []
    populations = [np.arange(1.0, 6.0), gen.normal(size=5), gen.normal(size=(5, 2))]
    for pop in populations:
        for s in range(1, 6):
            reports.append(verify_sampling_variance(pop, s, "without"))
            reports.append(verify_sampling_variance(pop, s, "with"))
    big = gen.normal(size=(100, 2))
    reports.append(verify_sampling_variance(big, 30, "without", trials=100_000, rng=gen))
    reports.append(verify_sampling_variance(big, 30, "with", trials=100_000, rng=gen))
    return reports


def _suite_sequential(seed, cache):
    gen = np.random.default_rng(seed)
    reports = [verify_sequential_identity()]
    for C in range(2, 7):
        for J in range(1, C + 1):
            for I in range(1, 5):
                pops = gen.normal(size=(50, C, 2))
                worst = None
                for pop in pops:
                    rep = verify_sequential_participation_bound(C, J, I, pop)
                    if worst is None or not rep.passed or abs(rep.empirical - rep.analytic) > abs(
                        worst.empirical - worst.analytic
                    ):
                        worst = rep
                    if not rep.passed:
                        break
                reports.append(worst)
    return reports


def _ridge(seed, cache):
    if "ridge" not in cache:
        cache["ridge"] = ridge_experiment(seeds=tuple(range(seed, seed + 20)))
    return cache["ridge"]


def _suite_drift(seed, cache):
    ex = _ridge(seed, cache)
    return [check_drift_bound(ex.traces, ex.constants, ex.lam, ex.config.J, ex.config.I, ex.objective)]


def _suite_recursion(seed, cache):
    ex = _ridge(seed, cache)
    return [check_recursion(ex.traces, ex.constants, ex.lam, ex.config.J, ex.config.I, ex.config.C,
                            ex.objective)]


def _suite_theorem(seed, cache):
    ex = theorem_experiment(seed=seed)
    cfg = ex.config
    return [
        check_theorem(ex.traces, ex.constants, ex.objective, ex.lam_tilde, cfg.C, cfg.J, cfg.I),
        check_residual_floor(ex.constants, ex.lam_tilde, cfg.C, cfg.J, cfg.I, ex.traces[0].globals[0]),
    ]


_SUITE_FUNCS = {
    "martingale": _suite_martingale,
    "sampling": _suite_sampling,
    "sequential": _suite_sequential,
    "drift": _suite_drift,
    "recursion": _suite_recursion,
    "theorem": _suite_theorem,
}
