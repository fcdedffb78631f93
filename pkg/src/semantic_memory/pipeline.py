"""Training phases, the online testing loop, and evaluation.

Artifacts are plain JSON files in one directory:

=============================  ==========================================
``spatial_grammar.json``       transition tensor and emissions
``event_catalog.json``         canonical tree -> event label
``temporal_pcfg.json``         PCFG over event labels
``episodic_store.json``        unique event strings with counts
``event_corpus.jsonl``         one segmented training episode per line
``step_reports.jsonl``         one :class:`StepReport` per processed step
``*_manifest.json``            config, input digests, final log-likelihood
=============================  ==========================================
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    ArtifactVersionError,
    BudgetExceededError,
    MissingArtifactError,
    UnparseableError,
    ValidationError,
)
from .events import (
    GENERATED_AT_TEST,
    SEEN_IN_TRAINING,
    EventCatalog,
    EventSequence,
    label_time_step,
    rle_compress,
    segment_episode,
)
from .scenario import Episode, Scenario, load_scenario
from .spatial import SpatialGrammar, deterministic_mode, train_spatial
from .temporal import (
    EpisodicStore,
    Prediction,
    TemporalPCFG,
    learn_temporal_pcfg,
    predict_episodic,
    predict_pcfg,
    store_episode,
)

__all__ = [
    "RunConfig",
    "StepReport",
    "SpatialPhase",
    "TemporalPhase",
    "train_spatial_phase",
    "train_temporal_phase",
    "predict_episode",
    "evaluate",
    "cmd_train_spatial",
    "cmd_train_temporal",
    "cmd_predict",
    "cmd_eval",
]

MANIFEST_FORMAT = "manifest/1"
REPORT_FORMAT = "step-report/1"
EVAL_FORMAT = "eval-report/1"

SPATIAL_FILE = "spatial_grammar.json"
CATALOG_FILE = "event_catalog.json"
PCFG_FILE = "temporal_pcfg.json"
STORE_FILE = "episodic_store.json"
CORPUS_FILE = "event_corpus.jsonl"
REPORTS_FILE = "step_reports.jsonl"
PREDICT_CATALOG_FILE = "event_catalog_after_predict.json"
EVAL_FILE = "eval_report.json"


@dataclass
class RunConfig:
    """Hyperparameters shared by all subcommands.

    ``max_len`` is the prediction horizon in events (prefix included), not
    in time steps.
    """

    n: int = 8
    k: int = 6
    spatial_seed: int = 42
    temporal_seed: int = 42
    temporal_restarts: int = 8
    lam: float = 20.0
    l_max: int = 8
    max_iters: int = 200
    tol: float = 1e-6
    enumeration_budget: int = 10**6
    max_len: int = 6
    top_k: int = 3
    allow_new_events: bool = True
    deterministic: bool = field(default_factory=deterministic_mode)
    workers: int = 1

    _RANGES = {
        "n": (1, 64),
        "k": (1, 64),
        "temporal_restarts": (1, 1000),
        "l_max": (1, 32),
        "max_iters": (1, 100000),
        "enumeration_budget": (1, 10**9),
        "max_len": (1, 64),
        "top_k": (1, 10**6),
        "workers": (1, 256),
    }

    def __post_init__(self):
        for name, (lo, hi) in self._RANGES.items():
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or not lo <= value <= hi:
                raise ValidationError(f"config {name}={value!r} must be an integer in [{lo}, {hi}]")
        for name in ("spatial_seed", "temporal_seed"):
            if isinstance(getattr(self, name), bool) or not isinstance(getattr(self, name), int):
                raise ValidationError(f"config {name} must be an integer")
        if not (isinstance(self.lam, (int, float)) and math.isfinite(self.lam) and self.lam > 0):
            raise ValidationError(f"config lambda={self.lam!r} must be positive")
        if not (isinstance(self.tol, (int, float)) and 0 <= self.tol < 1):
            raise ValidationError(f"config tol={self.tol!r} must be in [0, 1)")
        self.lam = float(self.lam)
        self.tol = float(self.tol)
        self.allow_new_events = bool(self.allow_new_events)
        self.deterministic = bool(self.deterministic)

    def to_dict(self) -> dict:
        doc = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        doc["lambda"] = doc.pop("lam")
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        if "lambda" in doc:
            doc["lam"] = doc.pop("lambda")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ValidationError(f"unknown config fields: {unknown}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(doc)

    def with_seed(self, seed: int | None) -> "RunConfig":
        if seed is None:
            return self
        return dataclasses.replace(self, spatial_seed=seed, temporal_seed=seed)

    def label_kwargs(self, scenario: Scenario) -> dict:
        return dict(lane_groups=scenario.lane_groups, kinds=scenario.kinds, vocab_size=scenario.vocab_size, lam=self.lam)


@dataclass
class StepReport:
    episode: str
    index: int
    label: str | None
    new_event: bool
    near_tie: bool
    prefix: list[str]
    episodic: Prediction | None
    pcfg: Prediction | None
    tree: str | None = None
    margin: float | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "format_version": REPORT_FORMAT,
            "episode": self.episode,
            "index": self.index,
            "label": self.label,
            "new_event": self.new_event,
            "near_tie": self.near_tie,
            "tree": self.tree,
            "margin": None if self.margin is None or math.isinf(self.margin) else self.margin,
            "prefix": self.prefix,
            "episodic": None if self.episodic is None else self.episodic.to_dict(),
            "pcfg": None if self.pcfg is None else self.pcfg.to_dict(),
            "error": self.error,
        }


# -- phases ---------------------------------------------------------------------


@dataclass
class SpatialPhase:
    grammar: SpatialGrammar
    catalog: EventCatalog
    history: list[float]
    corpus: list[EventSequence]


@dataclass
class TemporalPhase:
    pcfg: TemporalPCFG
    store: EpisodicStore
    history: list[float]
    corpus: list[EventSequence]


def _train_episodes(scenarios: Sequence[Scenario]) -> list[tuple[Scenario, Episode]]:
    return [(sc, ep) for sc in scenarios for ep in sc.episodes_in("train")]


def segment_training(scenarios, grammar, catalog, config) -> list[EventSequence]:
    """Segment all training episodes, registering unseen trees as training events."""
    return [
        segment_episode(ep, grammar, catalog, True, SEEN_IN_TRAINING, **config.label_kwargs(sc))
        for sc, ep in _train_episodes(scenarios)
    ]


def train_spatial_phase(scenarios: Sequence[Scenario], config: RunConfig) -> SpatialPhase:
    if not _train_episodes(scenarios):
        raise ValidationError("no training episodes")
    history: list[float] = []
    grammar = train_spatial(
        scenarios,
        n=config.n,
        seed=config.spatial_seed,
        max_iters=config.max_iters,
        tol=config.tol,
        lam=config.lam,
        l_max=config.l_max,
        history=history,
        workers=1 if config.deterministic else config.workers,
    )
    catalog = EventCatalog()
    corpus = segment_training(scenarios, grammar, catalog, config)
    return SpatialPhase(grammar, catalog, history, corpus)


def train_temporal_phase(scenarios, grammar, catalog, config) -> TemporalPhase:
    corpus = segment_training(scenarios, grammar, catalog, config)
    if not corpus:
        raise ValidationError("no training episodes")
    history: list[float] = []
    pcfg = learn_temporal_pcfg(
        corpus,
        k=config.k,
        seed=config.temporal_seed,
        max_iters=config.max_iters,
        tol=config.tol,
        alphabet=catalog.labels,
        history=history,
        restarts=config.temporal_restarts,
    )
    store = EpisodicStore()
    for seq in corpus:
        store_episode(store, seq)
    return TemporalPhase(pcfg, store, history, corpus)


def _pcfg_prediction(pcfg: TemporalPCFG, prefix, config: RunConfig) -> Prediction:
    prefix = tuple(prefix)
    unknown = [lab for lab in prefix if lab not in pcfg.index]
    if unknown:
        return Prediction(prefix, "pcfg", [], note=f"events outside the temporal alphabet: {unknown}")
    if len(prefix) > config.max_len:
        return Prediction(prefix, "pcfg", [], note=f"prefix longer than max_len={config.max_len}")
    try:
        return predict_pcfg(pcfg, prefix, config.max_len, config.top_k, config.enumeration_budget)
    except BudgetExceededError as exc:
        return Prediction(prefix, "pcfg", [], note=str(exc))


def predict_episode(
    episode: Episode,
    scenario: Scenario,
    grammar: SpatialGrammar,
    catalog: EventCatalog,
    pcfg: TemporalPCFG,
    store: EpisodicStore,
    config: RunConfig,
) -> Iterator[StepReport]:
    """Online testing loop: one report per time step, in order.

    ``catalog`` grows in place when new events are allowed.
    """
    labels: list[str] = []
    kw = config.label_kwargs(scenario)
    for step in episode.steps:
        try:
            res = label_time_step(step, grammar, catalog, config.allow_new_events, GENERATED_AT_TEST, **kw)
        except UnparseableError as exc:
            prefix = rle_compress(labels).labels
            yield StepReport(episode.id, step.index, None, False, False, prefix, None, None, error=str(exc))
            continue
        error = None
        if res.label is None:
            error = f"tree {res.form} matches no known event"
        else:
            labels.append(res.label)
        prefix = rle_compress(labels).labels
        yield StepReport(
            episode.id,
            step.index,
            res.label,
            res.new,
            res.near_tie,
            prefix,
            predict_episodic(store, prefix, config.top_k),
            _pcfg_prediction(pcfg, prefix, config),
            tree=res.form,
            margin=res.parse.margin,
            error=error,
        )


# -- evaluation -----------------------------------------------------------------


def stop_event_violations(scenario, catalog, pcfg, store, corpus, config) -> list[dict]:
    """Top completions of training prefixes whose completed episode lacks the stop event.

    A completion passes when the prefix followed by the completion contains
    an event whose tree covers exactly ``scenario.stop_event_codes``.
    """
    stop = set(catalog.labels_with_leaves(scenario.stop_event_codes))
    out = []
    for seq in corpus:
        for cut in range(len(seq.labels)):
            prefix = seq.labels[:cut]
            for pred in (predict_episodic(store, prefix, config.top_k), _pcfg_prediction(pcfg, prefix, config)):
                if not pred.completions:
                    out.append({"episode": seq.episode_id, "prefix": prefix, "source": pred.source, "completion": None})
                for comp in pred.completions:
                    if not stop & set(prefix + list(comp.labels)):
                        out.append(
                            {"episode": seq.episode_id, "prefix": prefix, "source": pred.source, "completion": list(comp.labels)}
                        )
    return out


def evaluate(scenario: Scenario, config: RunConfig, artifacts: dict | None = None) -> dict:
    """Train (or reuse ``artifacts``) on one scenario, run its test episodes, check properties."""
    if artifacts is None:
        sp = train_spatial_phase([scenario], config)
        tp = train_temporal_phase([scenario], sp.grammar, sp.catalog, config)
        grammar, catalog, pcfg, store = sp.grammar, sp.catalog, tp.pcfg, tp.store
        corpus = tp.corpus
    else:
        grammar, catalog = artifacts["grammar"], artifacts["catalog"].copy()
        pcfg, store = artifacts["pcfg"], artifacts["store"]
        corpus = segment_training([scenario], grammar, catalog, config)
    training_classes = len(catalog)

    checks: dict[str, dict] = {}
    trace = []
    test_reports = []
    config_labels: dict[tuple, set] = {}
    for ep in scenario.episodes_in("test"):
        reports = list(predict_episode(ep, scenario, grammar, catalog, pcfg, store, config))
        test_reports.extend(reports)
        trace.append({"episode": ep.id, "split": "test", "steps": [[r.index, r.label] for r in reports]})
        for step, r in zip(ep.steps, reports):
            config_labels.setdefault(step.configuration(), set()).add(r.label)

    replay_ok = True
    for seq, (sc, ep) in zip(corpus, _train_episodes([scenario])):
        trace.append({"episode": ep.id, "split": "train", "steps": [[s.index, lab] for s, lab in zip(ep.steps, seq.step_labels)]})
        for step, lab in zip(ep.steps, seq.step_labels):
            config_labels.setdefault(step.configuration(), set()).add(lab)
        final = predict_episodic(store, seq.labels, config.top_k)
        if not final.completions or final.completions[0].labels != ():
            replay_ok = False

    checks["rle_conservation"] = {
        "passed": all(sum(s.durations) == len(ep.steps) for s, (_, ep) in zip(corpus, _train_episodes([scenario])))
    }
    incoherent = [list(map(list, k)) for k, v in config_labels.items() if len(v) > 1]
    checks["configuration_coherence"] = {"passed": not incoherent, "violations": incoherent}
    forms = [f for f, _ in catalog]
    checks["catalog_injective"] = {"passed": len(set(forms)) == len(forms) == len(set(catalog.labels))}
    checks["grammar_normalized"] = {
        "passed": bool(np.all(np.abs(grammar.row_mass() - 1) <= 1e-12) and np.all(np.abs(pcfg.row_mass() - 1) <= 1e-12))
    }
    checks["replay_converges"] = {"passed": replay_ok}
    if scenario.stop_event_codes is not None:
        bad = stop_event_violations(scenario, catalog, pcfg, store, corpus, config)
        checks["stop_event"] = {"passed": not bad, "violations": bad}

    return {
        "scenario": scenario.id,
        "counts": {
            "training_event_classes": training_classes,
            "event_classes": len(catalog),
            "generated_at_test": catalog.count(GENERATED_AT_TEST),
            "new_event_reports": sum(r.new_event for r in test_reports),
            "near_tie_reports": sum(r.near_tie for r in test_reports),
            "store_keys": len(store),
        },
        "events": [
            {"label": e.label, "tree": f, "provenance": e.provenance} for f, e in catalog
        ],
        "checks": checks,
        "trace": trace,
    }


# -- files and subcommands ------------------------------------------------------------


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1) + "\n")


def _manifest(command, config, inputs, **extra) -> dict:
    doc = {
        "format_version": MANIFEST_FORMAT,
        "command": command,
        "config": config.to_dict(),
        "inputs": [{"name": Path(p).name, "sha256": _digest(p)} for p in inputs],
    }
    doc.update(extra)
    return doc


def _load_required(directory: Path, name: str, loader):
    path = directory / name
    if not path.exists():
        raise MissingArtifactError(f"missing artifact {path}; run the earlier training phase first")
    return loader(path)


def cmd_train_spatial(paths, config: RunConfig, out) -> SpatialPhase:
    out = Path(out)
    scenarios = [load_scenario(p) for p in paths]
    phase = train_spatial_phase(scenarios, config)
    out.mkdir(parents=True, exist_ok=True)
    phase.grammar.save(out / SPATIAL_FILE)
    phase.catalog.save(out / CATALOG_FILE)
    _write_json(
        out / "train_spatial_manifest.json",
        _manifest(
            "train-spatial", config, paths,
            iterations=len(phase.history),
            final_log_likelihood=phase.history[-1] if phase.history else None,
            event_classes=len(phase.catalog),
        ),
    )
    return phase


def cmd_train_temporal(paths, config: RunConfig, out, spatial_dir=None) -> TemporalPhase:
    out = Path(out)
    spatial_dir = Path(spatial_dir) if spatial_dir is not None else out
    grammar = _load_required(spatial_dir, SPATIAL_FILE, SpatialGrammar.load)
    catalog = _load_required(spatial_dir, CATALOG_FILE, EventCatalog.load)
    scenarios = [load_scenario(p) for p in paths]
    phase = train_temporal_phase(scenarios, grammar, catalog, config)
    out.mkdir(parents=True, exist_ok=True)
    phase.pcfg.save(out / PCFG_FILE)
    phase.store.save(out / STORE_FILE)
    catalog.save(out / CATALOG_FILE)
    if spatial_dir != out:
        grammar.save(out / SPATIAL_FILE)
    (out / CORPUS_FILE).write_text("".join(json.dumps(s.to_dict()) + "\n" for s in phase.corpus))
    _write_json(
        out / "train_temporal_manifest.json",
        _manifest(
            "train-temporal", config, paths,
            iterations=len(phase.history),
            final_log_likelihood=phase.history[-1],
            pcfg_seed=phase.pcfg.seed,
            store_keys=len(phase.store),
        ),
    )
    return phase


def load_artifacts(directory) -> dict:
    """Load all four artifacts, failing before any processing on a mismatch."""
    directory = Path(directory)
    arts = {
        "grammar": _load_required(directory, SPATIAL_FILE, SpatialGrammar.load),
        "catalog": _load_required(directory, CATALOG_FILE, EventCatalog.load),
        "pcfg": _load_required(directory, PCFG_FILE, TemporalPCFG.load),
        "store": _load_required(directory, STORE_FILE, EpisodicStore.load),
    }
    missing = [lab for lab in arts["pcfg"].labels if lab not in arts["catalog"].labels]
    if missing:
        raise ArtifactVersionError(f"temporal PCFG labels {missing} are not in the event catalog")
    return arts


def cmd_predict(path, config: RunConfig, out, artifacts_dir=None, split="test", stream=None) -> list[StepReport]:
    out = Path(out)
    arts = load_artifacts(artifacts_dir if artifacts_dir is not None else out)
    scenario = load_scenario(path)
    if arts["grammar"].v < scenario.vocab_size:
        raise ValidationError(f"scenario vocabulary ({scenario.vocab_size}) exceeds the grammar's terminals ({arts['grammar'].v})")
    episodes = scenario.episodes_in(split)
    if not episodes and split == "test":
        episodes = list(scenario.episodes)
    catalog = arts["catalog"].copy()
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    with open(out / REPORTS_FILE, "w") as fh:
        for ep in episodes:
            for rep in predict_episode(ep, scenario, arts["grammar"], catalog, arts["pcfg"], arts["store"], config):
                line = json.dumps(rep.to_dict())
                fh.write(line + "\n")
                if stream is not None:
                    stream.write(line + "\n")
                    stream.flush()
                reports.append(rep)
    catalog.save(out / PREDICT_CATALOG_FILE)
    _write_json(
        out / "predict_manifest.json",
        _manifest("predict", config, [path], split=split, reports=len(reports), event_classes=len(catalog)),
    )
    return reports


def cmd_eval(paths, config: RunConfig, out, artifacts_dir=None) -> dict:
    """Evaluate each fixture; reuse ``<artifacts_dir>/<scenario id>/`` when it exists."""
    out = Path(out)
    results = []
    for p in paths:
        scenario = load_scenario(p)
        arts = None
        if artifacts_dir is not None and (Path(artifacts_dir) / scenario.id).is_dir():
            arts = load_artifacts(Path(artifacts_dir) / scenario.id)
        results.append(evaluate(scenario, config, arts))
    report = {
        "format_version": EVAL_FORMAT,
        "config": config.to_dict(),
        "inputs": [{"name": Path(p).name, "sha256": _digest(p)} for p in paths],
        "scenarios": results,
        "passed": all(c["passed"] for r in results for c in r["checks"].values()),
    }
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / EVAL_FILE, report)
    return report
