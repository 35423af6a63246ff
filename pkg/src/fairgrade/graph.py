"""Bipartite exam graphs and their structural analysis.

Students and questions share one vertex numbering: students take indices
0..n-1, questions n..n+q-1. The assignment graph is undirected; the result
graph orients each assigned edge student->question for a correct answer and
question->student for an incorrect one. Bank questions that were never
assigned stay in both graphs as isolated vertices, so grade aggregation can
run over the full bank.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Mapping

import numpy as np

from .rng import as_generator


class ParameterOutOfRangeError(ValueError):
    """Assignment parameters violate 1 <= d <= m <= |Q|."""


@dataclass(frozen=True)
class Roster:
    """Ordered, disjoint identifier sets for students and the question bank."""

    students: tuple[str, ...]
    questions: tuple[str, ...]

    def __post_init__(self):
        if not self.students or not self.questions:
            raise ValueError("roster needs at least one student and one question")
        if len(set(self.students)) != len(self.students):
            raise ValueError("duplicate student identifiers")
        if len(set(self.questions)) != len(self.questions):
            raise ValueError("duplicate question identifiers")
        if set(self.students) & set(self.questions):
            raise ValueError("student and question identifiers must be disjoint")

    @classmethod
    def index_based(cls, n_students: int, n_questions: int) -> "Roster":
        return cls(
            tuple(f"s{i}" for i in range(n_students)),
            tuple(f"q{j}" for j in range(n_questions)),
        )

    @property
    def n_students(self) -> int:
        return len(self.students)

    @property
    def n_questions(self) -> int:
        return len(self.questions)

    @property
    def n_vertices(self) -> int:
        return len(self.students) + len(self.questions)

    def student_vertex(self, i: int) -> int:
        return i

    def question_vertex(self, j: int) -> int:
        return self.n_students + j

    def vertex_label(self, v: int) -> str:
        n = self.n_students
        return self.students[v] if v < n else self.questions[v - n]

    def is_student_vertex(self, v: int) -> bool:
        return v < self.n_students


@dataclass(frozen=True)
class TaskAssignmentGraph:
    """Undirected bipartite graph of which questions each student was asked.

    Edges are (student index, question index) pairs, deduplicated and sorted
    so that equal graphs compare equal. Zero-degree students are representable
    (sparse data files may contain them); graders reject them at use time.
    """

    roster: Roster
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        seen = set(self.edges)
        if len(seen) != len(self.edges):
            raise ValueError("duplicate assignment edges")
        for i, j in self.edges:
            if not (0 <= i < self.roster.n_students and 0 <= j < self.roster.n_questions):
                raise ValueError(f"edge ({i}, {j}) outside roster index range")
        object.__setattr__(self, "edges", tuple(sorted(seen)))

    @cached_property
    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Parallel (student index, question index) arrays in edge order."""
        if not self.edges:
            return np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp)
        arr = np.asarray(self.edges, dtype=np.intp)
        return arr[:, 0], arr[:, 1]

    @cached_property
    def student_degrees(self) -> np.ndarray:
        s_idx, _ = self.edge_arrays
        return np.bincount(s_idx, minlength=self.roster.n_students)

    @cached_property
    def question_degrees(self) -> np.ndarray:
        _, q_idx = self.edge_arrays
        return np.bincount(q_idx, minlength=self.roster.n_questions)

    @cached_property
    def edge_set(self) -> frozenset[tuple[int, int]]:
        return frozenset(self.edges)

    @property
    def n_edges(self) -> int:
        return len(self.edges)


def generate_assignment(roster: Roster, m: int, d: int, seed) -> TaskAssignmentGraph:
    """Randomized assignment: sample m bank questions uniformly without
    replacement, then give each student d of those m, independently.

    Deterministic given the seed.
    """
    if not (1 <= d <= m <= roster.n_questions):
        raise ParameterOutOfRangeError(
            f"need 1 <= d <= m <= |Q|, got d={d}, m={m}, |Q|={roster.n_questions}"
        )
    rng = as_generator(seed)
    eligible = _sample_without_replacement(rng, roster.n_questions, m)
    edges = []
    for i in range(roster.n_students):
        picks = _sample_without_replacement(rng, m, d)
        edges.extend((i, int(eligible[k])) for k in picks)
    return TaskAssignmentGraph(roster, tuple(edges))


def _sample_without_replacement(rng: np.random.Generator, pool: int, k: int) -> np.ndarray:
    # partial Fisher-Yates: exactly uniform, k swaps
    idx = np.arange(pool)
    for t in range(k):
        r = t + int(rng.integers(pool - t))
        idx[t], idx[r] = idx[r], idx[t]
    return idx[:k]


@dataclass(frozen=True, eq=False)
class ExamResultGraph:
    """Directed bipartite graph of observed correctness.

    `w` holds the correctness bit of each assigned pair, aligned with
    `assignment.edges`. w=1 orients the edge student->question, w=0
    question->student.
    """

    assignment: TaskAssignmentGraph
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.uint8)
        if w.shape != (self.assignment.n_edges,):
            raise ValueError("one outcome bit per assigned edge required")
        if w.size and not np.isin(w, (0, 1)).all():
            raise ValueError("outcomes must be 0 or 1")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @classmethod
    def from_outcomes(
        cls, assignment: TaskAssignmentGraph, outcomes: Mapping[tuple[int, int], int]
    ) -> "ExamResultGraph":
        if set(outcomes) != assignment.edge_set:
            raise ValueError("outcome keys must equal the assignment edge set")
        w = np.fromiter((outcomes[e] for e in assignment.edges), dtype=np.uint8,
                        count=assignment.n_edges)
        return cls(assignment, w)

    @property
    def roster(self) -> Roster:
        return self.assignment.roster

    @property
    def outcomes(self) -> dict[tuple[int, int], int]:
        return {e: int(b) for e, b in zip(self.assignment.edges, self.w)}

    @cached_property
    def student_out_degrees(self) -> np.ndarray:
        """Correct answers per student (outgoing edges in the digraph)."""
        s_idx, _ = self.assignment.edge_arrays
        return np.bincount(s_idx, weights=self.w, minlength=self.roster.n_students).astype(np.intp)

    def directed_adjacency(self) -> list[list[int]]:
        """Successor lists over all roster vertices, isolated ones included."""
        roster = self.roster
        adj: list[list[int]] = [[] for _ in range(roster.n_vertices)]
        s_idx, q_idx = self.assignment.edge_arrays
        for i, j, bit in zip(s_idx, q_idx, self.w):
            u, v = int(i), roster.question_vertex(int(j))
            if bit:
                adj[u].append(v)
            else:
                adj[v].append(u)
        return adj

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ExamResultGraph)
            and self.assignment == other.assignment
            and np.array_equal(self.w, other.w)
        )


class PairCase(Enum):
    """Provenance of one prediction cell."""

    EXISTING_EDGE = 1
    SAME_COMPONENT = 2
    STUDENT_ABOVE = 3  # only the student's SCC reaches the question's
    QUESTION_ABOVE = 4  # only the question's SCC reaches the student's
    INCOMPARABLE = 5


@dataclass(frozen=True)
class ComponentStructure:
    """SCC partition plus materialized condensation reachability.

    `reach` stores, per SCC id, a bitset (python int) of every SCC id it can
    reach, itself included; queries are O(1).
    """

    component_of: tuple[int, ...]
    components: tuple[frozenset[int], ...]
    reach: tuple[int, ...] = field(repr=False)

    @property
    def n_components(self) -> int:
        return len(self.components)

    def reaches(self, a: int, b: int) -> bool:
        """Whether SCC `a` reaches SCC `b` in the condensation DAG."""
        return bool((self.reach[a] >> b) & 1)


def strongly_connected_components(g: ExamResultGraph) -> ComponentStructure:
    """Tarjan SCCs of the result digraph plus condensation reachability."""
    adj = g.directed_adjacency()
    comp_of, comps = _tarjan(adj)
    # Tarjan finishes SCCs in reverse topological order: every successor SCC
    # of c already has a smaller id, so one ascending pass closes reachability.
    n_comp = len(comps)
    reach = [1 << c for c in range(n_comp)]
    for u in range(len(adj)):
        cu = comp_of[u]
        for v in adj[u]:
            cv = comp_of[v]
            if cv != cu:
                reach[cu] |= 1 << cv
    # ascending id order visits successors first, so one pass closes the sets
    for c in range(n_comp):
        bits = reach[c] & ~(1 << c)
        while bits:
            low = bits & -bits
            reach[c] |= reach[low.bit_length() - 1]
            bits ^= low
    return ComponentStructure(
        tuple(comp_of),
        tuple(frozenset(c) for c in comps),
        tuple(reach),
    )


def _tarjan(adj: list[list[int]]) -> tuple[list[int], list[list[int]]]:
    n = len(adj)
    UNSEEN = -1
    index = [UNSEEN] * n
    lowlink = [0] * n
    on_stack = [False] * n
    comp_of = [UNSEEN] * n
    stack: list[int] = []
    comps: list[list[int]] = []
    counter = 0

    for root in range(n):
        if index[root] != UNSEEN:
            continue
        # iterative DFS: (vertex, next successor position)
        work = [(root, 0)]
        while work:
            v, pi = work[-1]
            if pi == 0:
                index[v] = lowlink[v] = counter
                counter += 1
                stack.append(v)
                on_stack[v] = True
            advanced = False
            for k in range(pi, len(adj[v])):
                u = adj[v][k]
                if index[u] == UNSEEN:
                    work[-1] = (v, k + 1)
                    work.append((u, 0))
                    advanced = True
                    break
                if on_stack[u]:
                    lowlink[v] = min(lowlink[v], index[u])
            if advanced:
                continue
            work.pop()
            if lowlink[v] == index[v]:
                comp = []
                while True:
                    u = stack.pop()
                    on_stack[u] = False
                    comp_of[u] = len(comps)
                    comp.append(u)
                    if u == v:
                        break
                comps.append(comp)
            if work:
                parent = work[-1][0]
                lowlink[parent] = min(lowlink[parent], lowlink[v])
    return comp_of, comps


def is_strongly_connected(g: ExamResultGraph) -> bool:
    """Whether the whole result digraph (full bank included) is one SCC."""
    return strongly_connected_components(g).n_components == 1


def classify_pair(
    c: ComponentStructure, g: ExamResultGraph, i: int, j: int
) -> PairCase:
    """Which of the five prediction cases covers student i and question j."""
    roster = g.roster
    if not (0 <= i < roster.n_students and 0 <= j < roster.n_questions):
        raise IndexError(f"pair ({i}, {j}) outside roster index range")
    if (i, j) in g.assignment.edge_set:
        return PairCase.EXISTING_EDGE
    ci = c.component_of[roster.student_vertex(i)]
    cj = c.component_of[roster.question_vertex(j)]
    if ci == cj:
        return PairCase.SAME_COMPONENT
    forward = c.reaches(ci, cj)
    backward = c.reaches(cj, ci)
    if forward and not backward:
        return PairCase.STUDENT_ABOVE
    if backward and not forward:
        return PairCase.QUESTION_ABOVE
    return PairCase.INCOMPARABLE
