"""Experiment harness: fairness estimation, enumeration oracles, sweeps, CV.

All Monte-Carlo quantities are keyed by (master seed, index path) so that
runs are reproducible and replications can execute in any order or thread
count without changing the result.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .graph import ExamResultGraph, Roster, TaskAssignmentGraph, generate_assignment
from .grading import GradeVector, grade, simple_average
from .model import MeritVector, benchmark, edge_probabilities, logistic
from .rng import substream

GradingRule = Callable[[ExamResultGraph], GradeVector]

RULES: dict[str, GradingRule] = {"ours": grade, "avg": simple_average}

MONTE_CARLO = "monte_carlo"
EXACT_ENUMERATION = "exact_enumeration"

# published difficulty range used when no empirical sample is supplied
DEFAULT_DIFFICULTY_RANGE = (-3.090, 2.099)


class InstanceTooLargeError(ValueError):
    """Exact enumeration was requested for an instance beyond the cap."""


@dataclass(frozen=True)
class BiasReport:
    """Per-student deviation of expected grade from the benchmark, on one graph."""

    per_student_deviation: np.ndarray  # E_w[alg_i] - opt_i
    per_student_bias: np.ndarray  # squared deviation
    per_student_se: np.ndarray  # standard error of the deviation estimate
    max_bias: float
    avg_bias: float
    replications: int
    failed_replications: int
    estimator: str
    rule_name: str


@dataclass(frozen=True)
class ErrorDecomposition:
    """Squared-error split into systematic and noise parts, averaged over
    graphs and students."""

    bias: float
    variance: float
    error: float
    estimator: str


@dataclass(frozen=True)
class RulePointStats:
    max_bias: float
    max_bias_se: float
    avg_bias: float
    avg_bias_se: float
    failed_replications: int = 0


@dataclass(frozen=True)
class SweepPoint:
    value: int
    per_rule: dict[str, RulePointStats]
    graphs: int
    replications: int


@dataclass(frozen=True)
class SweepResult:
    axis: str
    points: tuple[SweepPoint, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "points", tuple(sorted(self.points, key=lambda p: p.value))
        )


@dataclass(frozen=True)
class CvResult:
    d1: int
    d2: int
    mse_per_rule: dict[str, float]
    repetitions: int
    threshold_table: dict[int, int | None] | None = None


def _map_indexed(fn, count: int, threads: int):
    """Run fn(0..count-1), preserving index order regardless of threads."""
    if threads <= 1:
        return [fn(k) for k in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(count)))


def estimate_ex_post_bias(
    rule: GradingRule,
    g: TaskAssignmentGraph,
    u: MeritVector,
    replications: int,
    seed: int,
    threads: int = 1,
    benchmark_grades: np.ndarray | None = None,
) -> BiasReport:
    """Monte-Carlo estimate of each student's expected-grade deviation."""
    if replications < 1:
        raise ValueError("replications must be >= 1")
    opt = benchmark(u, g.roster).values if benchmark_grades is None else benchmark_grades
    probs = edge_probabilities(g, u)

    def one(k: int):
        rng = substream(seed, k)
        w = (rng.random(g.n_edges) < probs).astype(np.uint8)
        try:
            return rule(ExamResultGraph(g, w)).values
        except Exception:
            return None

    samples = _map_indexed(one, replications, threads)
    ok = [s for s in samples if s is not None]
    failed = replications - len(ok)
    if not ok:
        raise RuntimeError("every replication failed; nothing to aggregate")
    mat = np.stack(ok)
    mean = mat.mean(axis=0)
    deviation = mean - opt
    se = mat.std(axis=0, ddof=1) / np.sqrt(len(ok)) if len(ok) > 1 else np.zeros_like(mean)
    bias = deviation**2
    return BiasReport(
        per_student_deviation=deviation,
        per_student_bias=bias,
        per_student_se=se,
        max_bias=float(bias.max()),
        avg_bias=float(bias.mean()),
        replications=len(ok),
        failed_replications=failed,
        estimator=MONTE_CARLO,
        rule_name=_rule_name(rule),
    )


def _rule_name(rule: GradingRule) -> str:
    for name, fn in RULES.items():
        if fn is rule:
            return name
    return getattr(rule, "__name__", "rule")


MAX_ENUMERATION_EDGES = 22


def enumerate_outcomes(g: TaskAssignmentGraph, u: MeritVector):
    """Yield (probability, result graph) over all 2^|E| outcome vectors."""
    e = g.n_edges
    if e > MAX_ENUMERATION_EDGES:
        raise InstanceTooLargeError(f"{e} edges exceeds the 2^{MAX_ENUMERATION_EDGES} cap")
    probs = edge_probabilities(g, u)
    for mask in range(1 << e):
        w = np.array([(mask >> b) & 1 for b in range(e)], dtype=np.uint8)
        p = float(np.prod(np.where(w == 1, probs, 1.0 - probs)))
        yield p, ExamResultGraph(g, w)


def exact_expected_grade(
    rule: GradingRule, g: TaskAssignmentGraph, u: MeritVector
) -> dict[str, float]:
    """E_w[grade_i], exactly, by enumerating every outcome vector."""
    total = np.zeros(g.roster.n_students)
    for p, result in enumerate_outcomes(g, u):
        total += p * rule(result).values
    return {sid: float(v) for sid, v in zip(g.roster.students, total)}


def _exact_moments(rule: GradingRule, g: TaskAssignmentGraph, u: MeritVector):
    """Exact per-student (E[alg], E[alg^2], E[(alg-opt)^2])."""
    opt = benchmark(u, g.roster).values
    m1 = np.zeros_like(opt)
    m2 = np.zeros_like(opt)
    err = np.zeros_like(opt)
    for p, result in enumerate_outcomes(g, u):
        vals = rule(result).values
        m1 += p * vals
        m2 += p * vals**2
        err += p * (vals - opt) ** 2
    return m1, m2, err


MAX_FAIRNESS_OUTCOMES = 2_000_000


def verify_ex_ante_fairness(
    roster: Roster, m: int, d: int, u: MeritVector, tol: float = 1e-12
) -> bool:
    """Exact check that averaging's expected grade over the random-assignment
    family equals the benchmark for every student."""
    n, q = roster.n_students, roster.n_questions
    n_graphs = _ncr(q, m) * _ncr(m, d) ** n
    if n_graphs * (1 << (n * d)) > MAX_FAIRNESS_OUTCOMES:
        raise InstanceTooLargeError(
            f"{n_graphs} graphs x 2^{n * d} outcomes exceeds the enumeration cap"
        )
    opt = benchmark(u, roster).values
    total = np.zeros(n)
    for bank in itertools.combinations(range(q), m):
        for rows in itertools.product(itertools.combinations(bank, d), repeat=n):
            edges = tuple((i, j) for i, qs in enumerate(rows) for j in qs)
            g = TaskAssignmentGraph(roster, edges)
            for p, result in enumerate_outcomes(g, u):
                total += p * simple_average(result).values
    total /= n_graphs
    return bool(np.abs(total - opt).max() <= tol)


def _ncr(a: int, b: int) -> int:
    import math

    return math.comb(a, b)


def decompose_error(
    rule: GradingRule,
    graphs: Sequence[TaskAssignmentGraph],
    u: MeritVector,
    replications: int,
    seed: int,
    estimator: str = MONTE_CARLO,
    threads: int = 1,
) -> ErrorDecomposition:
    """Average squared error against the benchmark, split into the squared
    expected deviation and the answer-noise variance.

    Plug-in estimates are used, so bias + variance == error holds exactly for
    both estimators.
    """
    if estimator not in (MONTE_CARLO, EXACT_ENUMERATION):
        raise ValueError(f"unknown estimator {estimator!r}")
    if estimator == MONTE_CARLO and replications < 2:
        raise ValueError("need at least 2 replications")
    biases, variances, errors = [], [], []
    for gi, g in enumerate(graphs):
        opt = benchmark(u, g.roster).values
        if estimator == EXACT_ENUMERATION:
            m1, m2, err = _exact_moments(rule, g, u)
            bias = (m1 - opt) ** 2
            var = m2 - m1**2
        else:
            probs = edge_probabilities(g, u)

            def one(k: int, g=g, probs=probs):
                rng = substream(seed, gi, k)
                w = (rng.random(g.n_edges) < probs).astype(np.uint8)
                try:
                    return rule(ExamResultGraph(g, w)).values
                except Exception:
                    return None

            samples = [s for s in _map_indexed(one, replications, threads) if s is not None]
            if not samples:
                continue
            mat = np.stack(samples)
            mean = mat.mean(axis=0)
            bias = (mean - opt) ** 2
            var = ((mat - mean) ** 2).mean(axis=0)
            err = ((mat - opt) ** 2).mean(axis=0)
        biases.append(bias.mean())
        variances.append(var.mean())
        errors.append(err.mean())
    return ErrorDecomposition(
        bias=float(np.mean(biases)),
        variance=float(np.mean(variances)),
        error=float(np.mean(errors)),
        estimator=estimator,
    )


def sweep_degree(
    roster: Roster,
    u: MeritVector,
    m: int,
    d_values: Sequence[int],
    graphs_per_d: int,
    replications: int,
    seed: int,
    rules: Mapping[str, GradingRule] | None = None,
    threads: int = 1,
) -> SweepResult:
    """Expected max/avg squared deviation per rule, across degree constraints."""
    rules = dict(RULES) if rules is None else dict(rules)
    opt = benchmark(u, roster).values
    points = []
    for di, d in enumerate(d_values):
        per_rule_max = {name: [] for name in rules}
        per_rule_avg = {name: [] for name in rules}
        failures = {name: 0 for name in rules}
        for gi in range(graphs_per_d):
            g = generate_assignment(roster, m, d, substream(seed, di, gi, 0))
            for name, rule in rules.items():
                report = estimate_ex_post_bias(
                    rule, g, u, replications, _scalar_seed(seed, di, gi, 1),
                    threads=threads, benchmark_grades=opt,
                )
                per_rule_max[name].append(report.max_bias)
                per_rule_avg[name].append(report.avg_bias)
                failures[name] += report.failed_replications
        stats = {
            name: RulePointStats(
                max_bias=float(np.mean(per_rule_max[name])),
                max_bias_se=_se(per_rule_max[name]),
                avg_bias=float(np.mean(per_rule_avg[name])),
                avg_bias_se=_se(per_rule_avg[name]),
                failed_replications=failures[name],
            )
            for name in rules
        }
        points.append(SweepPoint(int(d), stats, graphs_per_d, replications))
    return SweepResult("d", tuple(points))


def _se(xs) -> float:
    xs = np.asarray(xs, dtype=float)
    if xs.size < 2:
        return 0.0
    return float(xs.std(ddof=1) / np.sqrt(xs.size))


def _scalar_seed(seed: int, *key: int) -> int:
    """Stable derived integer seed for APIs that take a master seed."""
    return int(np.random.SeedSequence(int(seed), spawn_key=tuple(key)).generate_state(1)[0])


def uniform_difficulty_sampler(
    low: float = DEFAULT_DIFFICULTY_RANGE[0], high: float = DEFAULT_DIFFICULTY_RANGE[1]
):
    def sampler(rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(low, high, size)

    return sampler


def ecdf_difficulty_sampler(observed: Sequence[float]):
    """Inverse-CDF sampler from the piecewise-linear interpolation of an
    empirical difficulty sample."""
    xs = np.sort(np.asarray(observed, dtype=float))
    if xs.size < 2:
        raise ValueError("need at least two observed difficulties")
    levels = np.linspace(0.0, 1.0, xs.size)

    def sampler(rng: np.random.Generator, size: int) -> np.ndarray:
        return np.interp(rng.random(size), levels, xs)

    return sampler


def sweep_question_sample_size(
    student_merits: Sequence[float],
    difficulty_sampler: Callable[[np.random.Generator, int], np.ndarray],
    m_values: Sequence[int],
    d: int,
    graphs_per_m: int,
    replications: int,
    seed: int,
    rules: Mapping[str, GradingRule] | None = None,
    threads: int = 1,
) -> SweepResult:
    """Infinite-bank exam design sweep: for each active-question count m,
    draw fresh difficulties per graph and measure both rules' deviation from
    the realized m-question benchmark."""
    rules = dict(RULES) if rules is None else dict(rules)
    if d > min(m_values):
        raise ValueError("degree constraint exceeds smallest question sample size")
    n = len(student_merits)
    points = []
    for mi, m in enumerate(m_values):
        per_rule_max = {name: [] for name in rules}
        per_rule_avg = {name: [] for name in rules}
        failures = {name: 0 for name in rules}
        for gi in range(graphs_per_m):
            rng = substream(seed, mi, gi, 0)
            difficulties = difficulty_sampler(rng, m)
            roster = Roster.index_based(n, m)
            u = MeritVector.for_roster(roster, student_merits, difficulties)
            g = generate_assignment(roster, m, d, rng)
            opt = benchmark(u, roster).values
            for name, rule in rules.items():
                report = estimate_ex_post_bias(
                    rule, g, u, replications, _scalar_seed(seed, mi, gi, 1),
                    threads=threads, benchmark_grades=opt,
                )
                per_rule_max[name].append(report.max_bias)
                per_rule_avg[name].append(report.avg_bias)
                failures[name] += report.failed_replications
        stats = {
            name: RulePointStats(
                max_bias=float(np.mean(per_rule_max[name])),
                max_bias_se=_se(per_rule_max[name]),
                avg_bias=float(np.mean(per_rule_avg[name])),
                avg_bias_se=_se(per_rule_avg[name]),
                failed_replications=failures[name],
            )
            for name in rules
        }
        points.append(SweepPoint(int(m), stats, graphs_per_m, replications))
    return SweepResult("m", tuple(points))


def cross_validate(
    answers: np.ndarray,
    d1: int,
    d2: int,
    repetitions: int,
    rules: Mapping[str, GradingRule] | None = None,
    seed: int = 0,
    threads: int = 1,
) -> CvResult:
    """Hold-out evaluation on a complete answer matrix.

    Each repetition samples d1 students and gives each of them d2 of the
    full bank's questions as training data; rules are scored against each
    sampled student's full-row accuracy.
    """
    rules = dict(RULES) if rules is None else dict(rules)
    answers = np.asarray(answers)
    if answers.ndim != 2:
        raise ValueError("answers must be a 2-D matrix")
    n, q = answers.shape
    if not (1 <= d1 <= n and 1 <= d2 <= q):
        raise ValueError(f"need 1 <= d1 <= {n} and 1 <= d2 <= {q}")
    if not np.isin(answers, (0, 1)).all():
        raise ValueError("answers must be a complete 0/1 matrix")
    row_means = answers.mean(axis=1)

    def one(r: int):
        rng = substream(seed, r)
        students = np.sort(rng.permutation(n)[:d1])
        roster = Roster.index_based(d1, q)
        edges, outcomes = [], []
        for local, i in enumerate(students):
            qs = rng.permutation(q)[:d2]
            for j in np.sort(qs):
                edges.append((local, int(j)))
                outcomes.append(int(answers[i, j]))
        g = TaskAssignmentGraph(roster, tuple(edges))
        result = ExamResultGraph(g, np.array(outcomes, dtype=np.uint8))
        target = row_means[students]
        return {
            name: float(((rule(result).values - target) ** 2).mean())
            for name, rule in rules.items()
        }

    reps = _map_indexed(one, repetitions, threads)
    mse = {name: float(np.mean([r[name] for r in reps])) for name in rules}
    return CvResult(d1=d1, d2=d2, mse_per_rule=mse, repetitions=repetitions)


def cv_threshold_table(
    answers: np.ndarray,
    d1_values: Sequence[int],
    d2_values: Sequence[int],
    repetitions: int,
    rules: Mapping[str, GradingRule] | None = None,
    seed: int = 0,
    baseline: str = "avg",
    candidate: str = "ours",
    threads: int = 1,
) -> dict[int, int | None]:
    """Smallest d2 at which the candidate rule's MSE beats the baseline's,
    per student sample size; None when it never does."""
    table: dict[int, int | None] = {}
    for di, d1 in enumerate(d1_values):
        table[d1] = None
        for d2 in sorted(d2_values):
            res = cross_validate(
                answers, d1, d2, repetitions, rules,
                seed=_scalar_seed(seed, di, d2), threads=threads,
            )
            if res.mse_per_rule[candidate] < res.mse_per_rule[baseline]:
                table[d1] = d2
                break
    return table


def simulated_cross_validate(
    prior,
    n: int,
    d2_values: Sequence[int],
    repetitions: int,
    seed: int,
    n_questions: int = 22,
    rules: Mapping[str, GradingRule] | None = None,
    threads: int = 1,
) -> list[CvResult]:
    """Synthetic counterpart of `cross_validate`: merits are drawn from the
    priors, a complete exam is generated, and rules are scored against the
    realized full-row accuracy."""
    rules = dict(RULES) if rules is None else dict(rules)
    roster = Roster.index_based(n, n_questions)
    complete = TaskAssignmentGraph(
        roster, tuple((i, j) for i in range(n) for j in range(n_questions))
    )

    def one(r: int):
        rng = substream(seed, r)
        abilities = rng.normal(prior.student_mean, prior.student_std, n)
        difficulties = rng.normal(prior.question_mean, prior.question_std, n_questions)
        u = MeritVector.for_roster(roster, abilities, difficulties)
        probs = edge_probabilities(complete, u)
        w = (rng.random(complete.n_edges) < probs).astype(np.uint8)
        full = np.zeros((n, n_questions), dtype=np.uint8)
        s_idx, q_idx = complete.edge_arrays
        full[s_idx, q_idx] = w
        target = full.mean(axis=1)
        out = {}
        for d2 in d2_values:
            edges, outcomes = [], []
            for i in range(n):
                qs = np.sort(rng.permutation(n_questions)[:d2])
                edges.extend((i, int(j)) for j in qs)
                outcomes.extend(int(full[i, j]) for j in qs)
            g = TaskAssignmentGraph(roster, tuple(edges))
            result = ExamResultGraph(g, np.array(outcomes, dtype=np.uint8))
            out[d2] = {
                name: float(((rule(result).values - target) ** 2).mean())
                for name, rule in rules.items()
            }
        return out

    reps = _map_indexed(one, repetitions, threads)
    results = []
    for d2 in d2_values:
        mse = {
            name: float(np.mean([r[d2][name] for r in reps])) for name in rules
        }
        results.append(CvResult(d1=n, d2=int(d2), mse_per_rule=mse, repetitions=repetitions))
    return results
