"""Train a small model on synthetic data and run the ablations.

Takes about a minute. Run: python3 demos/04_train_and_ablate.py
"""
from leofusion import evaluation as ev
from leofusion import simulator as sim
from leofusion import training as tr
from leofusion.gat import ModelConfig

train_cfgs = sim.make_configs(list(sim.ScenarioKind), 2, 3.0, seed=5)
frames = [f for c in train_cfgs for f in sim.generate_scenario(c)]
graphs = tr.graphs_from_frames(frames, stride=3)
train, val = tr.split_by_scenario(graphs, 0.25)
print(f"{len(train)} training graphs, {len(val)} validation graphs (split by scenario)")

model_cfg = ModelConfig(d_model=64, heads=4, layers=2)
res = tr.train(train, val, model_cfg, tr.OptimConfig(max_epochs=8))
for h in res.history:
    print(f"epoch {h['epoch']}: train {h['train_loss']:.3f}  val {h['val_loss']:.3f}  val GIoU {h['val_giou']:.3f}")

test = sim.make_configs(["OCCLUSION"], 2, 3.0, seed=99, lane="EL")
test_graphs = tr.graphs_from_frames([f for c in test for f in sim.generate_scenario(c)], stride=2)
runs = {
    "full": ev.evaluate(res.model, test_graphs),
    "no inter-attention": ev.evaluate(res.model, test_graphs, no_inter_attention=True),
    "without LRR": ev.evaluate(res.model, test_graphs, drop_sensors=["LRR"]),
}
print(f"\nheld-out occlusion set, {len(test_graphs)} graphs")
for name, r in runs.items():
    row = r.row()
    print(f"  {name:20s} GIoU {row['giou']:.3f}  RF_x MAE {row['mae']['rf_x']:.3f}  l MAE {row['mae']['l']:.3f}"
          f"  FP_x MAE {row['corners']['fp_x']:.3f}")
