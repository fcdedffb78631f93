"""Regenerate the shipped scenario fixtures.

    python tools/make_fixtures.py

Distances are on a whole-meter grid; ``dy`` is longitudinal, ``dx`` lateral.
"""

import json
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "semantic_memory" / "data"

BASE_VOCAB = [
    {"code": 1, "kind": "self-state", "description": "self-car drives forward"},
    {"code": 2, "kind": "self-state", "description": "self-car stops to yield"},
    {"code": 3, "kind": "self-state", "description": "self-car turns left"},
    {"code": 4, "kind": "self-state", "description": "self-car turns right"},
    {"code": 5, "kind": "moving-agent", "description": "car on right moving in the same direction"},
    {"code": 6, "kind": "moving-agent", "description": "car on left moving in opposite direction (incoming)"},
]
CROSS_VOCAB = [
    {"code": 7, "kind": "moving-agent", "description": "car crossing from the left"},
    {"code": 8, "kind": "moving-agent", "description": "car crossing from the right"},
    {"code": 9, "kind": "static-sign", "description": "stop sign"},
]


def obs(code, dy=0, dx=0):
    return {"code": code, "dy": dy, "dx": dx}


def forward(incoming, right):
    return [obs(1), obs(5, dy=right), obs(6, dy=incoming)]


def yielding(incoming, right):
    return [obs(2), obs(5, dy=right), obs(6, dy=incoming)]


def turning(incoming):
    return [obs(2), obs(3), obs(6, dy=incoming)]


def episode(eid, start, groups, split="train"):
    steps = []
    index = start
    for group in groups:
        for observations in group:
            steps.append({"index": index, "observations": observations})
            index += 1
    return {"id": eid, "dt": 0.1, "split": split, "steps": steps}


def scenario1():
    ep1 = episode(
        "s1-ep1",
        18,
        [
            [forward(60 - 4 * k, 6 + k) for k in range(5)],
            [yielding(30 - 4 * k, 10 + 2 * k) for k in range(5)],
            [turning(-5 - 5 * k) for k in range(5)],
        ],
    )
    ep2 = episode(
        "s1-ep2",
        0,
        [
            [forward(70 - 5 * k, 4 + k) for k in range(4)],
            [yielding(36 - 5 * k, 8 + k) for k in range(6)],
            [turning(-4 - 6 * k) for k in range(3)],
        ],
    )
    # one step carries a queue of three incoming cars
    queue = [obs(1), obs(5, dy=5), obs(6, dy=40), obs(6, dy=52), obs(6, dy=64)]
    ep3 = episode(
        "s1-ep3",
        0,
        [
            [forward(50, 5), queue, forward(44, 6)],
            [yielding(24 - 4 * k, 12 + k) for k in range(4)],
            [turning(-6 - 4 * k) for k in range(4)],
        ],
    )
    return {
        "id": "left-turn-2way",
        "vocabulary": BASE_VOCAB,
        "lane_groups": [{"name": "same-direction", "codes": [5]}, {"name": "incoming", "codes": [6]}],
        "episodes": [ep1, ep2, ep3],
    }


def stop_only():
    return [obs(2), obs(9)]


def cross_left(dx):
    return [obs(2), obs(7, dx=dx), obs(9)]


def cross_right(dx):
    return [obs(2), obs(8, dx=dx), obs(9)]


def turn_after_stop(right):
    return [obs(3), obs(5, dy=right), obs(9)]


def stop_right_cross_right(right, dx):
    return [obs(2), obs(5, dy=right), obs(8, dx=dx), obs(9)]


def stop_right_cross_both(right, dxl, dxr):
    return [obs(2), obs(5, dy=right), obs(7, dx=dxl), obs(8, dx=dxr), obs(9)]


def scenario2():
    train = [
        episode(
            "s2-ep1",
            18,
            [
                [forward(60 - 4 * k, 6 + k) for k in range(5)],
                [stop_only() for _ in range(2)],
                [cross_left(-30 + 6 * k) for k in range(4)],
                [turn_after_stop(-5)],
            ],
        ),
        episode(
            "s2-ep2",
            0,
            [
                [forward(64 - 5 * k, 5 + k) for k in range(4)],
                [stop_only() for _ in range(3)],
                [cross_right(30 - 5 * k) for k in range(5)],
                [turn_after_stop(-4), turn_after_stop(-6)],
            ],
        ),
        episode(
            "s2-ep3",
            0,
            [
                [forward(56 - 4 * k, 7) for k in range(5)],
                [stop_only() for _ in range(3)],
                [turn_after_stop(-5)],
            ],
        ),
        episode(
            "s2-ep4",
            0,
            [
                [forward(58 - 4 * k, 6) for k in range(3)],
                [stop_only() for _ in range(2)],
                [cross_left(-24 + 6 * k) for k in range(3)],
                [cross_right(24 - 6 * k) for k in range(3)],
                [turn_after_stop(-5)],
            ],
        ),
    ]
    test = [
        episode(
            "s2-test1",
            0,
            [
                [forward(60 - 5 * k, 6) for k in range(4)],
                [stop_only() for _ in range(2)],
                [stop_right_cross_right(-5, 24 - 6 * k) for k in range(3)],
                [stop_right_cross_both(-5, -18 + 6 * k, 14 - 4 * k) for k in range(2)],
                [turn_after_stop(-5)],
            ],
            split="test",
        ),
    ]
    return {
        "id": "left-turn-t-stop",
        "vocabulary": BASE_VOCAB + CROSS_VOCAB,
        "lane_groups": [
            {"name": "same-direction", "codes": [5]},
            {"name": "incoming", "codes": [6]},
            {"name": "crossing-left", "codes": [7]},
            {"name": "crossing-right", "codes": [8]},
        ],
        "stop_event_codes": [2, 9],
        "episodes": train + test,
    }


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    for name, doc in (("scenario1.json", scenario1()), ("scenario2.json", scenario2())):
        (OUT / name).write_text(json.dumps(doc, indent=1) + "\n")
        print("wrote", OUT / name)
