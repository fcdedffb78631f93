"""Spatial grammar: transition tensor learned by association-modulated EM.

Each binary rule application ``i -> j k`` over a split whose left span covers
the terminal set P and right span covers Q is scored as
``a(i, j, k) * M(P, Q)``, where ``M`` is the mean pairwise association of the
time step between the two covers. The modulation is data, not a parameter, so
the usual inside-outside re-estimation still increases the (modulated)
likelihood at every iteration.

Nonterminals and terminal codes are 1-based in the public API, matching the
vocabulary codes of a scenario.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import chart
from .errors import ArtifactVersionError, DegenerateInstanceError, UnparseableError
from .scenario import DEFAULT_LAMBDA, Scenario, build_association_matrix, enumerate_combinations
from .trees import ParseTree

__all__ = [
    "SpatialGrammar",
    "Parse",
    "init_grammar",
    "modulated_rule_prob",
    "set_association",
    "split_log_modulation",
    "inside_outside_step",
    "training_instances",
    "train_spatial",
    "most_probable_parse",
    "deterministic_mode",
]

FORMAT_VERSION = "spatial-grammar/1"
DEFAULT_N = 8
DEFAULT_L_MAX = 8
DETERMINISTIC_ENV = "SEMANTIC_MEMORY_DETERMINISTIC"


def deterministic_mode() -> bool:
    """Deterministic mode is on unless the environment variable says ``0``/``false``/``off``."""
    return os.environ.get(DETERMINISTIC_ENV, "1").strip().lower() not in ("0", "false", "off", "no")


@dataclass
class SpatialGrammar:
    rules: np.ndarray  # (N, N, N), rules[i-1, j-1, k-1] = a(i, j, k)
    emissions: np.ndarray  # (N, V), emissions[i-1, t-1] = e(i, t)
    seed: int = 0
    start: int = 1

    @property
    def n(self) -> int:
        return self.rules.shape[0]

    @property
    def v(self) -> int:
        return self.emissions.shape[1]

    def row_mass(self) -> np.ndarray:
        return self.rules.reshape(self.n, -1).sum(axis=1) + self.emissions.sum(axis=1)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "n": self.n,
            "v": self.v,
            "seed": self.seed,
            "start": self.start,
            "binary_rules": self.rules.ravel().tolist(),
            "emissions": self.emissions.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SpatialGrammar":
        if doc.get("format_version") != FORMAT_VERSION:
            raise ArtifactVersionError(
                f"spatial grammar format {doc.get('format_version')!r}, expected {FORMAT_VERSION!r}"
            )
        n, v = int(doc["n"]), int(doc["v"])
        rules = np.asarray(doc["binary_rules"], dtype=float).reshape(n, n, n)
        emissions = np.asarray(doc["emissions"], dtype=float).reshape(n, v)
        return cls(rules, emissions, int(doc["seed"]), int(doc.get("start", 1)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "SpatialGrammar":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class Parse:
    tree: ParseTree
    score: float
    runner_up: float = -np.inf
    terminals: tuple[int, ...] = field(default=())

    @property
    def margin(self) -> float:
        return self.score - self.runner_up


def init_grammar(n: int, v: int, seed: int) -> SpatialGrammar:
    """Near-uniform random grammar with ``n`` nonterminals over ``v`` terminals.

    Each of the ``n*n + v`` outcomes of a nonterminal starts at the uniform
    value times ``1 + u``, ``|u| <= 0.1``, and rows are then normalized.
    """
    if n < 1 or v < 1:
        raise ValueError(f"need at least one nonterminal and one terminal, got n={n}, v={v}")
    rng = np.random.default_rng(seed)
    width = n * n + v
    raw = 1.0 + 0.1 * rng.uniform(-1.0, 1.0, size=(n, width))
    raw /= raw.sum(axis=1, keepdims=True)
    return SpatialGrammar(raw[:, : n * n].reshape(n, n, n).copy(), raw[:, n * n :].copy(), seed)


def set_association(P: Iterable[int], Q: Iterable[int], assoc: np.ndarray) -> float:
    """Mean pairwise association between the code sets P and Q."""
    P, Q = list(P), list(Q)
    if not P or not Q:
        raise ValueError("cover sets must be nonempty")
    return float(np.mean([assoc[p - 1, q - 1] for p in P for q in Q]))


def modulated_rule_prob(g: SpatialGrammar, i: int, j: int, k: int, P, Q, assoc: np.ndarray) -> float:
    P, Q = frozenset(P), frozenset(Q)
    if not P or not Q:
        raise ValueError("cover sets must be nonempty")
    if P & Q:
        raise ValueError(f"cover sets overlap: {sorted(P & Q)}")
    return float(g.rules[i - 1, j - 1, k - 1]) * set_association(P, Q, assoc)


def split_log_modulation(seq: Sequence[int], assoc: np.ndarray) -> np.ndarray:
    """``log M`` for every split ``s < m < t`` of the code sequence ``seq``.

    Covers are taken positionally, so a repeated code counts once per position.
    """
    n = len(seq)
    idx = np.asarray(seq, dtype=int) - 1
    sub = assoc[np.ix_(idx, idx)]
    out = np.full((n + 1, n + 1, n + 1), -np.inf)
    with np.errstate(divide="ignore"):
        for s in range(n):
            for t in range(s + 2, n + 1):
                for m in range(s + 1, t):
                    out[s, m, t] = np.log(sub[s:m, m:t].mean())
    return out


def _instance(item):
    if len(item) == 2:
        seq, assoc = item
        return seq, assoc, 1.0
    return item[0], item[1], float(item[2])


def inside_outside_step(g: SpatialGrammar, batch, l_max: int = DEFAULT_L_MAX, names=None, workers: int = 1):
    """One EM iteration over ``batch``.

    ``batch`` holds ``(codes, assoc)`` or ``(codes, assoc, weight)`` items.
    Returns ``(updated_grammar, log_likelihood)``, the log-likelihood being the
    weighted sum of modulated log inside scores under ``g`` (before the update).
    """
    items = [_instance(b) for b in batch]
    for n, (seq, _, _) in enumerate(items):
        if not 1 <= len(seq) <= l_max:
            raise ValueError(f"sequence {n} has length {len(seq)}, allowed 1..{l_max}")

    def one(item):
        seq, assoc, w = item
        log_mod = split_log_modulation(seq, assoc)
        terms = [c - 1 for c in seq]
        return chart.expected_counts(g.rules, g.emissions, terms, g.start - 1, log_mod, w)

    if workers > 1 and not deterministic_mode():
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, items))
    else:
        results = [one(it) for it in items]

    rule_counts = np.zeros_like(g.rules)
    emit_counts = np.zeros_like(g.emissions)
    loglik = 0.0
    for n, ((seq, _, w), (rc, ec, log_z)) in enumerate(zip(items, results)):
        if log_z == -np.inf:
            name = names[n] if names is not None else f"#{n}"
            raise DegenerateInstanceError(f"time step {name} (codes {list(seq)}) has zero probability")
        rule_counts += rc
        emit_counts += ec
        loglik += w * log_z
    return _m_step(g, rule_counts, emit_counts), loglik


def _m_step(g: SpatialGrammar, rule_counts: np.ndarray, emit_counts: np.ndarray) -> SpatialGrammar:
    rules, emissions = chart.reestimate(g.rules, g.emissions, rule_counts, emit_counts)
    return SpatialGrammar(rules, emissions, g.seed, g.start)


def training_instances(scenarios: Iterable[Scenario], lam: float = DEFAULT_LAMBDA, split: str = "train"):
    """``(codes, assoc, name)`` for every combination-expanded training time step."""
    out = []
    for sc in scenarios:
        for ep in sc.episodes_in(split):
            for step in ep.steps:
                for c, reduced in enumerate(enumerate_combinations(step, sc.lane_groups, sc.kinds)):
                    assoc = build_association_matrix(reduced, sc.vocab_size, lam)
                    out.append((reduced.terminals, assoc, f"{sc.id}/{ep.id}/{step.index}#{c}"))
    return out


def _dedupe(instances):
    groups: dict[tuple, list] = {}
    for seq, assoc, name in instances:
        key = (tuple(seq), assoc.tobytes())
        if key in groups:
            groups[key][2] += 1.0
        else:
            groups[key] = [tuple(seq), assoc, 1.0, name]
    batch = [(s, a, w) for s, a, w, _ in groups.values()]
    names = [nm for *_, nm in groups.values()]
    return batch, names


def train_spatial(
    scenarios,
    n: int = DEFAULT_N,
    seed: int = 42,
    max_iters: int = 200,
    tol: float = 1e-6,
    lam: float = DEFAULT_LAMBDA,
    l_max: int = DEFAULT_L_MAX,
    history: list | None = None,
    workers: int = 1,
) -> SpatialGrammar:
    """Fit a spatial grammar to all training time steps of ``scenarios``.

    Stops when the relative log-likelihood gain drops below ``tol`` or after
    ``max_iters`` iterations. Identical time steps are pooled with a weight,
    which leaves the fixed point unchanged.
    """
    instances = training_instances(scenarios, lam)
    if not instances:
        raise ValueError("no training time steps")
    v = max(sc.vocab_size for sc in scenarios)
    batch, names = _dedupe(instances)
    g = init_grammar(n, v, seed)
    prev = None
    for _ in range(max_iters):
        g_next, ll = inside_outside_step(g, batch, l_max, names, workers)
        if history is not None:
            history.append(ll)
        g = g_next
        if prev is not None and ll - prev <= tol * abs(prev):
            break
        prev = ll
    return g


def most_probable_parse(g: SpatialGrammar, seq: Sequence[int], assoc: np.ndarray) -> Parse:
    """Highest-scoring modulated parse of the code sequence ``seq``."""
    if len(seq) == 0:
        raise ValueError("cannot parse an empty time step")
    log_mod = split_log_modulation(seq, assoc) if len(seq) > 1 else None
    codes = list(range(1, g.v + 1))
    res = chart.viterbi(g.rules, g.emissions, [c - 1 for c in seq], codes, g.start - 1, log_mod)
    if res is None:
        raise UnparseableError(f"no parse with nonzero probability for codes {list(seq)}")
    return Parse(res.tree, res.score, res.runner_up, tuple(seq))
