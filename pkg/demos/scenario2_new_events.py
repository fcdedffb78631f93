"""
New events at a T-junction with a stop sign
===========================================

The second fixture adds crossing traffic and a stop sign. Its test episode
contains configurations that never occur in training; the grammar still
parses them and the catalog grows by two events flagged as generated at test.
"""

from semantic_memory import GENERATED_AT_TEST, RunConfig, fixture_path, load_scenario, predict_episode
from semantic_memory.pipeline import train_spatial_phase, train_temporal_phase

scenario = load_scenario(fixture_path("scenario2.json"))
config = RunConfig()

spatial = train_spatial_phase([scenario], config)
temporal = train_temporal_phase([scenario], spatial.grammar, spatial.catalog, config)
print(f"{len(spatial.catalog)} events after training:")
for form, entry in spatial.catalog:
    print(f"  {entry.label}  {form}")

catalog = spatial.catalog.copy()
for ep in scenario.episodes_in("test"):
    print(f"\ntest episode {ep.id}")
    for rep in predict_episode(ep, scenario, spatial.grammar, catalog, temporal.pcfg, temporal.store, config):
        flag = "  NEW" if rep.new_event else ""
        print(f"  step {rep.index:3d}  {rep.label}  {rep.tree}{flag}")

print(f"\n{len(catalog)} events in total, {catalog.count(GENERATED_AT_TEST)} generated at test")
