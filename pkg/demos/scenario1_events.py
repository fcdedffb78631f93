"""
Events in a left turn on a two-way road
=======================================

Train the spatial grammar on the first fixture and look at what it learned:
the distinct parse trees of the training steps, and how each episode
collapses into a short event string.
"""

import numpy as np

from semantic_memory import RunConfig, fixture_path, load_scenario
from semantic_memory.pipeline import train_spatial_phase

scenario = load_scenario(fixture_path("scenario1.json"))
for el in scenario.vocabulary:
    print(f"{el.code}: {el.description} ({el.kind})")

# one grammar over every training step, default settings
phase = train_spatial_phase([scenario], RunConfig())
print(f"\nEM ran {len(phase.history)} iterations, log-likelihood {phase.history[0]:.2f} -> {phase.history[-1]:.2f}")

print("\nevent catalog:")
for form, entry in phase.catalog:
    print(f"  {entry.label}  {form}")

# a dozen or so steps per episode, but only three events
print("\nsegmented episodes:")
for seq in phase.corpus:
    print(f"  {seq.episode_id}: {' '.join(seq.labels)}  durations {seq.durations}")

# the emission rows show which nonterminals stand for which elements
g = phase.grammar
np.set_printoptions(precision=2, suppress=True)
print("\nemissions (rows: nonterminals, cols: codes 1..6):")
print(g.emissions)
