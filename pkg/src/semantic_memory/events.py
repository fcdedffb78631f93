"""Event catalog and episode segmentation.

Two time steps belong to the same event exactly when their most probable
parse trees have the same canonical form. An episode becomes a string of event
labels by labeling every step and collapsing runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import ArtifactVersionError, UnparseableError
from .scenario import DEFAULT_LAMBDA, Episode, TimeStep, build_association_matrix, enumerate_combinations
from .spatial import Parse, SpatialGrammar, most_probable_parse
from .trees import ParseTree, canonical_form, leaves, parse_canonical

__all__ = [
    "SEEN_IN_TRAINING",
    "GENERATED_AT_TEST",
    "NEAR_TIE",
    "EventCatalog",
    "EventSequence",
    "StepLabel",
    "label_step",
    "rle_compress",
    "parse_time_step",
    "label_time_step",
    "segment_episode",
]

FORMAT_VERSION = "event-catalog/1"
SEEN_IN_TRAINING = "seen-in-training"
GENERATED_AT_TEST = "generated-at-test"
PROVENANCES = (SEEN_IN_TRAINING, GENERATED_AT_TEST)

#: Parses whose best and runner-up log scores differ by less than this are flagged.
NEAR_TIE = 1e-9


@dataclass(frozen=True)
class CatalogEntry:
    label: str
    provenance: str


class EventCatalog:
    """Insertion-ordered, append-only map from canonical tree to event label."""

    def __init__(self):
        self._by_form: dict[str, CatalogEntry] = {}
        self._by_label: dict[str, str] = {}

    def __len__(self):
        return len(self._by_form)

    def __contains__(self, form: str):
        return form in self._by_form

    def __iter__(self):
        return iter(self._by_form.items())

    @property
    def labels(self) -> list[str]:
        return [e.label for e in self._by_form.values()]

    def label_of(self, form: str) -> str | None:
        entry = self._by_form.get(form)
        return None if entry is None else entry.label

    def form_of(self, label: str) -> str:
        return self._by_label[label]

    def tree_of(self, label: str) -> ParseTree:
        return parse_canonical(self._by_label[label])

    def provenance(self, label: str) -> str:
        return self._by_form[self._by_label[label]].provenance

    def count(self, provenance: str | None = None) -> int:
        if provenance is None:
            return len(self)
        return sum(1 for e in self._by_form.values() if e.provenance == provenance)

    def labels_with_leaves(self, codes) -> list[str]:
        """Labels whose tree dominates exactly the given terminal codes."""
        want = sorted(codes)
        return [lab for lab, form in self._by_label.items() if sorted(leaves(parse_canonical(form))) == want]

    def add(self, form: str, provenance: str = SEEN_IN_TRAINING) -> str:
        if provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {provenance!r}")
        if form in self._by_form:
            return self._by_form[form].label
        label = f"E{len(self._by_form) + 1}"
        self._by_form[form] = CatalogEntry(label, provenance)
        self._by_label[label] = form
        return label

    def copy(self) -> "EventCatalog":
        other = EventCatalog()
        other._by_form = dict(self._by_form)
        other._by_label = dict(self._by_label)
        return other

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "events": {f: {"label": e.label, "provenance": e.provenance} for f, e in self._by_form.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EventCatalog":
        if doc.get("format_version") != FORMAT_VERSION:
            raise ArtifactVersionError(f"event catalog format {doc.get('format_version')!r}, expected {FORMAT_VERSION!r}")
        cat = cls()
        for form, entry in doc["events"].items():
            label = cat.add(form, entry["provenance"])
            if label != entry["label"]:
                raise ValueError(f"catalog labels out of insertion order at {entry['label']!r}")
        return cat

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "EventCatalog":
        return cls.from_dict(json.loads(Path(path).read_text()))


def label_step(catalog: EventCatalog, tree: ParseTree, allow_new: bool = False, provenance: str = GENERATED_AT_TEST):
    """Event label of ``tree``; ``None`` if it is unknown and ``allow_new`` is false."""
    form = canonical_form(tree)
    label = catalog.label_of(form)
    if label is None and allow_new:
        label = catalog.add(form, provenance)
    return label


@dataclass
class EventSequence:
    episode_id: str
    labels: list[str]
    durations: list[int]
    step_labels: list[str] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"episode": self.episode_id, "labels": self.labels, "durations": self.durations}


def rle_compress(labels: Sequence[str], episode_id: str = "") -> EventSequence:
    out: list[str] = []
    durations: list[int] = []
    for lab in labels:
        if out and out[-1] == lab:
            durations[-1] += 1
        else:
            out.append(lab)
            durations.append(1)
    return EventSequence(episode_id, out, durations, list(labels))


@dataclass
class StepLabel:
    index: int
    label: str | None
    form: str
    parse: Parse
    new: bool
    near_tie: bool


def parse_time_step(step: TimeStep, grammar: SpatialGrammar, lane_groups=(), kinds=None, vocab_size=None, lam=DEFAULT_LAMBDA) -> Parse:
    """Best parse over the lane-group combinations of ``step``.

    The highest-scoring combination wins; earlier combinations win ties.
    """
    vocab_size = grammar.v if vocab_size is None else vocab_size
    best = None
    for reduced in enumerate_combinations(step, lane_groups, kinds):
        assoc = build_association_matrix(reduced, vocab_size, lam)
        parse = most_probable_parse(grammar, reduced.terminals, assoc)
        if best is None or parse.score > best.score:
            best = parse
    return best


def label_time_step(step, grammar, catalog, allow_new=False, provenance=GENERATED_AT_TEST, **kw) -> StepLabel:
    parse = parse_time_step(step, grammar, **kw)
    form = canonical_form(parse.tree)
    known = form in catalog
    label = label_step(catalog, parse.tree, allow_new, provenance)
    return StepLabel(step.index, label, form, parse, new=not known and label is not None, near_tie=parse.margin < NEAR_TIE)


def segment_episode(
    episode: Episode,
    grammar: SpatialGrammar,
    catalog: EventCatalog,
    allow_new: bool = False,
    provenance: str = GENERATED_AT_TEST,
    lane_groups=(),
    kinds=None,
    vocab_size=None,
    lam: float = DEFAULT_LAMBDA,
) -> EventSequence:
    """Label every step of ``episode`` and run-length compress the labels.

    With ``allow_new`` false, a step whose tree is not in the catalog raises
    ``KeyError``; otherwise it is registered with ``provenance``.
    """
    labels = []
    for step in episode.steps:
        try:
            res = label_time_step(
                step, grammar, catalog, allow_new, provenance,
                lane_groups=lane_groups, kinds=kinds, vocab_size=vocab_size, lam=lam,
            )
        except UnparseableError as exc:
            raise UnparseableError(f"episode {episode.id!r} step {step.index}: {exc}") from exc
        if res.label is None:
            raise KeyError(f"episode {episode.id!r} step {step.index}: tree {res.form} is not in the catalog")
        labels.append(res.label)
    return rle_compress(labels, episode.id)
