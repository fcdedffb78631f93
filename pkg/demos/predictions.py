"""
Predicting the rest of an episode
=================================

Both predictors side by side on the T-junction fixture. The episodic store
looks up stored episodes sharing the longest prefix; the temporal PCFG
scores every completion up to the horizon. Whatever the prefix, the
completions keep the event where the car stops at the sign.
"""

from semantic_memory import RunConfig, fixture_path, load_scenario, predict_episodic, predict_pcfg
from semantic_memory.pipeline import train_spatial_phase, train_temporal_phase
from semantic_memory.temporal import length_mass

scenario = load_scenario(fixture_path("scenario2.json"))
config = RunConfig()
spatial = train_spatial_phase([scenario], config)
temporal = train_temporal_phase([scenario], spatial.grammar, spatial.catalog, config)

stop = spatial.catalog.labels_with_leaves(scenario.stop_event_codes)
print("stop event:", stop)
print("stored episodes:")
for seq, count in temporal.store.counts.items():
    print(f"  {' '.join(seq)}  x{count}")


def show(pred):
    print(f"  {pred.source}:")
    for c in pred.completions:
        print(f"    {' '.join(c.labels) or '(done)':<14} {c.score:.3f}")


for prefix in ([], ["E1"], ["E1", "E2"], ["E1", "E2", "E3"]):
    print(f"\nprefix {' '.join(prefix) or '(empty)'}")
    show(predict_episodic(temporal.store, prefix, config.top_k))
    show(predict_pcfg(temporal.pcfg, prefix, config.max_len, config.top_k))

# probability mass the grammar leaves on each string length
print("\nmass by length:", " ".join(f"{length_mass(temporal.pcfg, n):.3f}" for n in range(1, 9)))
