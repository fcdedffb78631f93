"""Episodes, time steps and the scenario fixture format.

A scenario file is JSON::

    {
      "id": "left-turn-2way",
      "vocabulary": [{"code": 1, "kind": "self-state", "description": "..."}, ...],
      "lane_groups": [{"name": "incoming", "codes": [6]}, ...],
      "stop_event_codes": [2, 9],            # optional
      "episodes": [
        {"id": "ep1", "dt": 0.1, "split": "train",   # split optional, default "train"
         "steps": [{"index": 0, "observations": [{"code": 1, "dy": 0, "dx": 0}, ...]}]}
      ]
    }

``dy`` is the longitudinal and ``dx`` the lateral distance to the self-car in
meters. A raw time step may list several agents under the same moving-agent
code (a queue of incoming cars, say); :func:`enumerate_combinations` reduces
it to steps with one representative per lane group.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ScenarioParseError, ValidationError

__all__ = [
    "KINDS",
    "ContextElement",
    "Observation",
    "TimeStep",
    "Episode",
    "LaneGroup",
    "Scenario",
    "load_scenario",
    "parse_scenario",
    "scenario_to_dict",
    "build_association_matrix",
    "enumerate_combinations",
    "fixture_path",
]

KINDS = ("self-state", "moving-agent", "static-sign")
SPLITS = ("train", "test")
DEFAULT_DT = 0.1
DEFAULT_LAMBDA = 20.0


@dataclass(frozen=True)
class ContextElement:
    code: int
    kind: str
    description: str = ""


@dataclass(frozen=True)
class Observation:
    code: int
    dy: float = 0.0
    dx: float = 0.0


@dataclass(frozen=True)
class TimeStep:
    index: int
    observations: tuple[Observation, ...]
    dt: float = DEFAULT_DT

    @property
    def codes(self) -> tuple[int, ...]:
        return tuple(o.code for o in self.observations)

    @property
    def terminals(self) -> tuple[int, ...]:
        """Active codes in canonical (ascending) order."""
        return tuple(sorted(self.codes))

    def configuration(self) -> tuple[tuple[int, float, float], ...]:
        return tuple(sorted((o.code, o.dy, o.dx) for o in self.observations))


@dataclass(frozen=True)
class Episode:
    id: str
    steps: tuple[TimeStep, ...]
    scenario_id: str = ""
    dt: float = DEFAULT_DT
    split: str = "train"


@dataclass(frozen=True)
class LaneGroup:
    name: str
    codes: tuple[int, ...]


@dataclass(frozen=True)
class Scenario:
    id: str
    vocabulary: tuple[ContextElement, ...]
    lane_groups: tuple[LaneGroup, ...]
    episodes: tuple[Episode, ...]
    stop_event_codes: tuple[int, ...] | None = None
    kinds: dict[int, str] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kinds", {e.code: e.kind for e in self.vocabulary})

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary)

    def episodes_in(self, split: str) -> list[Episode]:
        if split == "all":
            return list(self.episodes)
        return [e for e in self.episodes if e.split == split]


def fixture_path(name: str) -> Path:
    """Path of a fixture shipped with the package, e.g. ``"scenario1.json"``."""
    return Path(__file__).parent / "data" / name


# -- loading ------------------------------------------------------------------


def _req(obj, key, where, kind=None):
    if not isinstance(obj, dict):
        raise ScenarioParseError(f"{where}: expected an object, got {type(obj).__name__}")
    if key not in obj:
        raise ScenarioParseError(f"{where}: missing field {key!r}")
    value = obj[key]
    if kind is not None and not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ScenarioParseError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, got {value!r}")
    return value


def _num(value, where) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ScenarioParseError(f"{where}: expected a finite number, got {value!r}")
    return float(value)


def load_scenario(path) -> Scenario:
    """Read and validate a scenario file.

    Raises :class:`ScenarioParseError` for malformed JSON or fields and
    :class:`ValidationError` for broken invariants; both name the location.
    """
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    try:
        return parse_scenario(doc)
    except (ScenarioParseError, ValidationError) as exc:
        raise type(exc)(f"{path}: {exc}") from exc


def parse_scenario(doc: dict) -> Scenario:
    sid = _req(doc, "id", "scenario", str)
    vocab_raw = _req(doc, "vocabulary", "scenario", list)
    vocabulary = []
    for n, item in enumerate(vocab_raw):
        where = f"vocabulary[{n}]"
        code = _req(item, "code", where, int)
        kind = _req(item, "kind", where, str)
        if kind not in KINDS:
            raise ScenarioParseError(f"{where}.kind: {kind!r} is not one of {KINDS}")
        vocabulary.append(ContextElement(code, kind, str(item.get("description", ""))))
    codes = [e.code for e in vocabulary]
    if sorted(codes) != list(range(1, len(codes) + 1)):
        raise ValidationError(f"scenario {sid!r}: vocabulary codes must be unique and contiguous from 1, got {codes}")
    kinds = {e.code: e.kind for e in vocabulary}

    groups = []
    for n, item in enumerate(_req(doc, "lane_groups", "scenario", list)):
        where = f"lane_groups[{n}]"
        name = _req(item, "name", where, str)
        gcodes = _req(item, "codes", where, list)
        groups.append(LaneGroup(name, tuple(int(c) for c in gcodes)))
    grouped = [c for g in groups for c in g.codes]
    moving = sorted(c for c, k in kinds.items() if k == "moving-agent")
    if len(grouped) != len(set(grouped)):
        raise ValidationError(f"scenario {sid!r}: lane groups overlap")
    if sorted(grouped) != moving:
        raise ValidationError(
            f"scenario {sid!r}: lane groups must cover exactly the moving-agent codes {moving}, got {sorted(grouped)}"
        )

    stop = doc.get("stop_event_codes")
    if stop is not None:
        if not isinstance(stop, list) or any(c not in kinds for c in stop):
            raise ValidationError(f"scenario {sid!r}: stop_event_codes must list vocabulary codes")
        stop = tuple(sorted(int(c) for c in stop))

    episodes = []
    for n, ep in enumerate(_req(doc, "episodes", "scenario", list)):
        where = f"episodes[{n}]"
        eid = _req(ep, "id", where, str)
        dt = _num(ep.get("dt", DEFAULT_DT), f"{where}.dt")
        if dt <= 0:
            raise ValidationError(f"episode {eid!r}: dt must be positive")
        split = ep.get("split", "train")
        if split not in SPLITS:
            raise ScenarioParseError(f"{where}.split: {split!r} is not one of {SPLITS}")
        steps = []
        for m, st in enumerate(_req(ep, "steps", where, list)):
            swhere = f"{where}.steps[{m}]"
            index = _req(st, "index", swhere, int)
            obs = []
            for q, o in enumerate(_req(st, "observations", swhere, list)):
                owhere = f"{swhere}.observations[{q}]"
                obs.append(
                    Observation(
                        _req(o, "code", owhere, int),
                        _num(o.get("dy", 0.0), f"{owhere}.dy"),
                        _num(o.get("dx", 0.0), f"{owhere}.dx"),
                    )
                )
            steps.append(TimeStep(index, tuple(obs), dt))
        episode = Episode(eid, tuple(steps), sid, dt, split)
        _validate_episode(episode, kinds)
        episodes.append(episode)
    if not episodes:
        raise ValidationError(f"scenario {sid!r}: no episodes")
    return Scenario(sid, tuple(vocabulary), tuple(groups), tuple(episodes), stop)


def _validate_episode(episode: Episode, kinds: dict[int, str]) -> None:
    if not episode.steps:
        raise ValidationError(f"episode {episode.id!r}: has no time steps")
    last = -1
    for step in episode.steps:
        where = f"episode {episode.id!r} step {step.index}"
        if step.index < 0 or step.index <= last:
            raise ValidationError(f"{where}: step indices must be non-negative and strictly increasing")
        last = step.index
        seen = set()
        for o in step.observations:
            if o.code not in kinds:
                raise ValidationError(f"{where}: unknown code {o.code}")
            kind = kinds[o.code]
            if kind != "moving-agent":
                if o.code in seen:
                    raise ValidationError(f"{where}: duplicate code {o.code}")
                if o.dy != 0 or o.dx != 0:
                    raise ValidationError(f"{where}: {kind} code {o.code} must have zero distances")
            seen.add(o.code)
        if not any(kinds[o.code] == "self-state" for o in step.observations):
            raise ValidationError(f"{where}: no self-state observation")


def scenario_to_dict(scenario: Scenario) -> dict:
    doc = {
        "id": scenario.id,
        "vocabulary": [{"code": e.code, "kind": e.kind, "description": e.description} for e in scenario.vocabulary],
        "lane_groups": [{"name": g.name, "codes": list(g.codes)} for g in scenario.lane_groups],
    }
    if scenario.stop_event_codes is not None:
        doc["stop_event_codes"] = list(scenario.stop_event_codes)
    doc["episodes"] = [
        {
            "id": ep.id,
            "dt": ep.dt,
            "split": ep.split,
            "steps": [
                {"index": s.index, "observations": [{"code": o.code, "dy": o.dy, "dx": o.dx} for o in s.observations]}
                for s in ep.steps
            ],
        }
        for ep in scenario.episodes
    ]
    return doc


# -- association matrices -----------------------------------------------------


def build_association_matrix(step: TimeStep, vocab_size: int, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """Symmetric ``V x V`` association matrix of one (reduced) time step.

    Entry ``[p-1, q-1]`` is ``exp(-(|dy_p - dy_q| + |dx_p - dx_q|) / lam)``
    for active codes ``p != q``, 1 on the active diagonal, 0 elsewhere.
    """
    if not lam > 0:
        raise ValueError(f"decay length must be positive, got {lam}")
    codes = step.codes
    if len(codes) != len(set(codes)):
        raise ValueError(f"time step {step.index} has repeated codes; reduce it with enumerate_combinations first")
    mat = np.zeros((vocab_size, vocab_size))
    for a in step.observations:
        if not 1 <= a.code <= vocab_size:
            raise ValueError(f"code {a.code} outside vocabulary of size {vocab_size}")
        for b in step.observations:
            if a.code == b.code:
                mat[a.code - 1, b.code - 1] = 1.0
            else:
                dist = abs(a.dy - b.dy) + abs(a.dx - b.dx)
                mat[a.code - 1, b.code - 1] = math.exp(-dist / lam)
    mat.flags.writeable = False
    return mat


# -- multiple objects ----------------------------------------------------------


def enumerate_combinations(step: TimeStep, lane_groups, kinds: dict[int, str] | None = None) -> list[TimeStep]:
    """Reduce ``step`` to one moving agent per lane group, over all choices.

    Self-state and static-sign observations are kept in every reduced step.
    Choices iterate in lane-group order, then in the order the agents are
    listed within a group. A step without moving agents is returned as is.
    """
    group_of = {c: n for n, g in enumerate(lane_groups) for c in g.codes}
    fixed = []
    members: list[list[Observation]] = [[] for _ in lane_groups]
    for o in step.observations:
        n = group_of.get(o.code)
        if n is None or (kinds is not None and kinds.get(o.code) != "moving-agent"):
            fixed.append(o)
        else:
            members[n].append(o)
    chosen_groups = [m for m in members if m]
    if not chosen_groups:
        return [step]
    out = []
    for pick in itertools.product(*chosen_groups):
        obs = tuple(fixed) + tuple(pick)
        obs = tuple(sorted(obs, key=lambda o: o.code))
        out.append(TimeStep(step.index, obs, step.dt))
    return out
