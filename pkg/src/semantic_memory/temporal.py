"""Temporal memory: a PCFG over event strings and an episodic store.

Both predict how an unfinished episode continues. The PCFG scores every
bounded completion of the prefix with the inside algorithm; the episodic
store looks up the stored episodes that share the longest prefix with it.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import chart
from .errors import ArtifactVersionError, BudgetExceededError
from .spatial import init_grammar

__all__ = [
    "TemporalPCFG",
    "EpisodicStore",
    "Completion",
    "Prediction",
    "learn_temporal_pcfg",
    "temporal_em_step",
    "sequence_probability",
    "batch_probability",
    "length_mass",
    "store_episode",
    "predict_episodic",
    "predict_pcfg",
    "DEFAULT_BUDGET",
]

PCFG_FORMAT = "temporal-pcfg/1"
STORE_FORMAT = "episodic-store/1"
DEFAULT_K = 6
DEFAULT_BUDGET = 10**6


def _labels_of(seq) -> tuple[str, ...]:
    return tuple(getattr(seq, "labels", seq))


@dataclass
class TemporalPCFG:
    labels: tuple[str, ...]
    rules: np.ndarray  # (K, K, K)
    emissions: np.ndarray  # (K, len(labels))
    seed: int = 0
    start: int = 1
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.labels = tuple(self.labels)
        self.index = {lab: n for n, lab in enumerate(self.labels)}

    @property
    def k(self) -> int:
        return self.rules.shape[0]

    def encode(self, seq: Sequence[str]) -> list[int]:
        unknown = [lab for lab in seq if lab not in self.index]
        if unknown:
            raise ValueError(f"labels not in the temporal alphabet: {unknown}")
        return [self.index[lab] for lab in seq]

    def row_mass(self) -> np.ndarray:
        return self.rules.reshape(self.k, -1).sum(axis=1) + self.emissions.sum(axis=1)

    def to_dict(self) -> dict:
        return {
            "format_version": PCFG_FORMAT,
            "k": self.k,
            "labels": list(self.labels),
            "seed": self.seed,
            "start": self.start,
            "binary_rules": self.rules.ravel().tolist(),
            "emissions": self.emissions.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TemporalPCFG":
        if doc.get("format_version") != PCFG_FORMAT:
            raise ArtifactVersionError(f"temporal PCFG format {doc.get('format_version')!r}, expected {PCFG_FORMAT!r}")
        k = int(doc["k"])
        labels = tuple(doc["labels"])
        rules = np.asarray(doc["binary_rules"], dtype=float).reshape(k, k, k)
        emissions = np.asarray(doc["emissions"], dtype=float).reshape(k, len(labels))
        return cls(labels, rules, emissions, int(doc["seed"]), int(doc.get("start", 1)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "TemporalPCFG":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- learning -----------------------------------------------------------------


def temporal_em_step(pcfg: TemporalPCFG, batch) -> tuple[TemporalPCFG, float]:
    """One inside-outside iteration over ``(label_sequence, weight)`` pairs."""
    rule_counts = np.zeros_like(pcfg.rules)
    emit_counts = np.zeros_like(pcfg.emissions)
    loglik = 0.0
    for seq, w in batch:
        rc, ec, log_z = chart.expected_counts(pcfg.rules, pcfg.emissions, pcfg.encode(seq), pcfg.start - 1, None, w)
        if log_z == -np.inf:
            raise ValueError(f"event string {list(seq)} has zero probability")
        rule_counts += rc
        emit_counts += ec
        loglik += w * log_z
    rules, emissions = chart.reestimate(pcfg.rules, pcfg.emissions, rule_counts, emit_counts)
    return TemporalPCFG(pcfg.labels, rules, emissions, pcfg.seed, pcfg.start), loglik


def learn_temporal_pcfg(
    corpus,
    k: int = DEFAULT_K,
    seed: int = 42,
    max_iters: int = 200,
    tol: float = 1e-6,
    alphabet: Sequence[str] | None = None,
    history: list | None = None,
    restarts: int = 1,
) -> TemporalPCFG:
    """Fit a PCFG to event strings by inside-outside EM.

    ``corpus`` holds ``EventSequence`` objects or plain label sequences.
    The alphabet defaults to the labels in order of first appearance.
    With ``restarts > 1``, EM is run from seeds ``seed, seed + 1, ...`` and
    the run with the highest final log-likelihood is kept (earliest on ties).
    """
    seqs = [_labels_of(s) for s in corpus]
    if not seqs:
        raise ValueError("empty corpus")
    if any(len(s) == 0 for s in seqs):
        raise ValueError("corpus contains an empty event string")
    if restarts < 1 or max_iters < 1:
        raise ValueError("restarts and max_iters must be at least 1")
    if alphabet is None:
        alphabet = list(dict.fromkeys(lab for s in seqs for lab in s))
    counts: dict[tuple[str, ...], int] = {}
    for s in seqs:
        counts[s] = counts.get(s, 0) + 1
    batch = list(counts.items())

    best = None
    for r in range(restarts):
        trace: list[float] = []
        pcfg = _run_em(batch, alphabet, k, seed + r, max_iters, tol, trace)
        if best is None or trace[-1] > best[1][-1]:
            best = (pcfg, trace)
    if history is not None:
        history.extend(best[1])
    return best[0]


def _run_em(batch, alphabet, k, seed, max_iters, tol, trace) -> TemporalPCFG:
    g = init_grammar(k, len(alphabet), seed)
    pcfg = TemporalPCFG(tuple(alphabet), g.rules, g.emissions, seed)
    pcfg.encode([lab for s, _ in batch for lab in s])
    prev = None
    for _ in range(max_iters):
        nxt, ll = temporal_em_step(pcfg, batch)
        trace.append(ll)
        pcfg = nxt
        if prev is not None and ll - prev <= tol * abs(prev):
            break
        prev = ll
    return pcfg


# -- scoring ------------------------------------------------------------------


def sequence_probability(pcfg: TemporalPCFG, seq: Sequence[str]) -> float:
    """Probability that the grammar generates exactly ``seq``."""
    if len(seq) == 0:
        raise ValueError("empty event string")
    beta = chart.inside_chart(pcfg.rules, pcfg.emissions, pcfg.encode(seq))
    return float(np.exp(beta[0, len(seq), pcfg.start - 1]))


def _batch_inside(rules: np.ndarray, emit_cols: list[np.ndarray], start: int) -> np.ndarray:
    """Inside probabilities for a batch; ``emit_cols[s]`` is ``(B, K)`` for position ``s``."""
    n = len(emit_cols)
    beta: dict[tuple[int, int], np.ndarray] = {}
    for s in range(n):
        beta[s, s + 1] = emit_cols[s]
    for width in range(2, n + 1):
        for s in range(n - width + 1):
            t = s + width
            acc = 0.0
            for m in range(s + 1, t):
                acc = acc + np.einsum("ijk,bj,bk->bi", rules, beta[s, m], beta[m, t])
            beta[s, t] = acc
    return beta[0, n][:, start]


def batch_probability(pcfg: TemporalPCFG, seqs: np.ndarray) -> np.ndarray:
    """Probabilities of equal-length strings given as a ``(B, n)`` index array."""
    seqs = np.asarray(seqs, dtype=int)
    cols = [pcfg.emissions[:, seqs[:, s]].T for s in range(seqs.shape[1])]
    return _batch_inside(pcfg.rules, cols, pcfg.start - 1)


def length_mass(pcfg: TemporalPCFG, n: int) -> float:
    """Total probability of all strings of length ``n``.

    Summing emissions over the alphabet turns the sum over ``|A|**n`` strings
    into a single inside pass.
    """
    col = pcfg.emissions.sum(axis=1)[None, :]
    return float(_batch_inside(pcfg.rules, [col] * n, pcfg.start - 1)[0])


# -- predictions --------------------------------------------------------------


@dataclass(frozen=True)
class Completion:
    labels: tuple[str, ...]
    score: float


@dataclass
class Prediction:
    prefix: tuple[str, ...]
    source: str
    completions: list[Completion] = field(default_factory=list)
    note: str | None = None

    def __len__(self):
        return len(self.completions)

    def to_dict(self) -> dict:
        doc = {
            "prefix": list(self.prefix),
            "source": self.source,
            "completions": [{"labels": list(c.labels), "score": c.score} for c in self.completions],
        }
        if self.note:
            doc["note"] = self.note
        return doc


def _ranked(scored, top_k) -> list[Completion]:
    scored = sorted(scored, key=lambda c: (-c.score, c.labels))
    return scored if top_k is None else scored[:top_k]


def predict_pcfg(
    pcfg: TemporalPCFG,
    prefix: Sequence[str],
    max_len: int = 6,
    top_k: int | None = 3,
    budget: int = DEFAULT_BUDGET,
) -> Prediction:
    """Rank every completion of ``prefix`` up to ``max_len`` events in total.

    Scores are string probabilities renormalized over all enumerated strings
    that start with ``prefix``; the empty completion is the prefix itself.
    """
    prefix = tuple(prefix)
    idx = pcfg.encode(prefix)
    if max_len < len(prefix):
        raise ValueError(f"max_len {max_len} is shorter than the prefix ({len(prefix)} events)")
    alpha = len(pcfg.labels)
    lengths = range(max(1, len(prefix)), max_len + 1)
    total = sum(alpha ** (n - len(prefix)) for n in lengths)
    if total > budget:
        raise BudgetExceededError(
            f"{total} strings to enumerate exceeds the budget of {budget}; use a smaller max_len"
        )
    scored = []
    for n in lengths:
        rest = n - len(prefix)
        tails = np.array(list(itertools.product(range(alpha), repeat=rest)), dtype=int).reshape(alpha**rest, rest)
        full = np.hstack([np.tile(np.asarray(idx, dtype=int), (len(tails), 1)), tails])
        probs = batch_probability(pcfg, full)
        for tail, p in zip(tails, probs):
            scored.append((tuple(pcfg.labels[t] for t in tail), float(p)))
    z = sum(p for _, p in scored)
    if z <= 0.0:
        return Prediction(prefix, "pcfg", [], note="prefix has zero probability")
    return Prediction(prefix, "pcfg", _ranked([Completion(c, p / z) for c, p in scored], top_k))


class EpisodicStore:
    """Unique event strings with occurrence counts, in first-seen order."""

    def __init__(self, items: Iterable[tuple[Sequence[str], int]] = ()):
        self.counts: dict[tuple[str, ...], int] = {}
        for seq, count in items:
            if count < 1:
                raise ValueError("counts must be positive")
            _check_compressed(seq)
            self.counts[tuple(seq)] = self.counts.get(tuple(seq), 0) + int(count)

    def __len__(self):
        return len(self.counts)

    def __getitem__(self, seq) -> int:
        return self.counts.get(tuple(seq), 0)

    def to_dict(self) -> dict:
        return {
            "format_version": STORE_FORMAT,
            "episodes": [{"sequence": list(s), "count": c} for s, c in self.counts.items()],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EpisodicStore":
        if doc.get("format_version") != STORE_FORMAT:
            raise ArtifactVersionError(f"episodic store format {doc.get('format_version')!r}, expected {STORE_FORMAT!r}")
        return cls((e["sequence"], e["count"]) for e in doc["episodes"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "EpisodicStore":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _check_compressed(seq) -> None:
    for a, b in zip(seq, seq[1:]):
        if a == b:
            raise ValueError(f"event string {list(seq)} repeats {a!r}; run-length compress it first")


def store_episode(store: EpisodicStore, seq) -> EpisodicStore:
    labels = _labels_of(seq)
    _check_compressed(labels)
    store.counts[labels] = store.counts.get(labels, 0) + 1
    return store


def _common_prefix(a, b) -> int:
    n = 0
    for x, y in zip(a, b):
        if x != y:
            break
        n += 1
    return n


def predict_episodic(store: EpisodicStore, prefix: Sequence[str], top_k: int | None = 3) -> Prediction:
    """Continue ``prefix`` with the stored episodes that match it longest.

    Only the episodes sharing the longest common prefix are candidates; each
    proposes its remainder after that prefix, scored by its share of their
    total count.
    """
    prefix = tuple(prefix)
    if not store.counts:
        return Prediction(prefix, "episodic", [])
    matched = [(_common_prefix(prefix, s), s, c) for s, c in store.counts.items()]
    best = max(m for m, _, _ in matched)
    tier = [(s, c) for m, s, c in matched if m == best]
    total = sum(c for _, c in tier)
    comps = [Completion(s[best:], c / total) for s, c in tier]
    note = None if best == len(prefix) else f"closest match shares {best} of {len(prefix)} prefix events"
    return Prediction(prefix, "episodic", _ranked(comps, top_k), note)
