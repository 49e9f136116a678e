"""Build the 48-node spatio-temporal graph and look at attention.

Run: python3 demos/03_graph_and_attention.py
"""
import numpy as np

from leofusion import graph as gb
from leofusion import simulator as sim
from leofusion.gat import Model, ModelConfig

frames = sim.generate_scenario(sim.ScenarioConfig("HIGHWAY_FOLLOW", 1.0, 2, 4.5, 1.8, lane="LL"))
g = gb.build_graph(frames[20:26], frames[25].truth)
print("edges (temporal, spatial, self):", gb.edge_counts())
print("features", g.features.shape, "- one row per (source, slot); slot 0 is the newest frame")
for s, name in enumerate(gb.SOURCE_NAMES):
    row = g.features[gb.node_index(s, 0)]
    state = "missing" if row[6] >= gb.SENTINEL_VAR else f"x={row[0:3].round(2)} dt={row[10]:.3f}"
    print(f"  {name:14s} {state}")

model = Model.init(ModelConfig(dropout=0.0))
model.params = {k: v + 0.05 * np.random.default_rng(0).normal(size=v.shape) for k, v in model.params.items()}
x = model.inputs([g])[0]
node = gb.node_index(0, 0)  # newest LRL node
for branch in ("intra", "inter"):
    a = model.attention(x, layer=0, branch=branch, head=0)[node]
    nz = np.flatnonzero(a)
    print(f"\n{branch} attention of {gb.NODE_META[node]} (sums to {a.sum():.12f}):")
    for j in nz:
        print(f"  -> {gb.NODE_META[j]}  {a[j]:.3f}")
print("\nlambda per layer:", [round(v, 3) for v in model.lambdas()])
