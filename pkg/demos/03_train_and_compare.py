"""Train a classical and a quantum peak finder briefly and score them.

A few epochs on a small slice of the hard dataset; the numbers are far
from converged and only show the workflow. Takes about a minute.
"""

from quanvnn import TrainConfig, build_hard_dataset, stratified_split, train
from quanvnn.metrics import evaluate_params, table_rows

data = build_hard_dataset(0)
tr, va, te = stratified_split(data, seed=0)
train_set = [data[i] for i in tr[:120]]
val_set = [data[i] for i in va[:30]]
test_set = [data[i] for i in te]

reports = {}
for frontend in ("classical", "quantum"):
    cfg = TrainConfig(epochs=6, seed=0, frontend=frontend)
    model = cfg.build_model()
    record = train(model, train_set, val_set, cfg,
                   progress=lambda e, t, v: print(f"  {frontend} epoch {e}: train {t:.4f} val {v:.4f}"))
    reports[frontend] = evaluate_params(model, record.final_params, test_set)

for row in table_rows(reports):
    print(f"{row['model']:>9}: F1 {row['F1']:.3f}  recall {row['Recall']:.3f}  MAE {row['MAE']:.4f}")
