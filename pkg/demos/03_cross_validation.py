import numpy as np

from hsidense.models import ModelSpec
from hsidense.phantom import PhantomSpec, iter_cohort
from hsidense.preprocess import preprocess_cube
from hsidense.train import TrainConfig, class_weights, make_folds, roc_csv, run_cv

# Eight phantom patients; most have both a tumor and a healthy region.
spec = PhantomSpec(separation=1.0, noise_sigma=0.05, seed=1)
prepared = {c.patient_id: preprocess_cube(c, r) for c, r in iter_cohort(8, 0.7, spec)}
for pid, p in prepared.items():
    print(pid, {rid: lab.name for rid, lab in p.region_labels.items()}, len(p.training), "sources")

# Folds are cut at patient level, then each held-out group is halved.
for f in make_folds(sorted(prepared), k=4, seed=0):
    print(f"fold {f.fold}: train {len(f.train)}  validation {list(f.validation)}  test {list(f.test)}")

# Inverse-frequency weights for a 70/100 healthy/tumor imbalance
print("class weights for (70, 100):", np.round(class_weights((70, 100)), 4))

# Cross-validation with a small Densenet3D; crops are averaged per region
model = ModelSpec(variant="Densenet3D", initial_channels=4, growth_rate=4, layers_per_block=(1, 1, 1))
report = run_cv(prepared, model, TrainConfig(iterations=80, batch_size=20), folds=4, seed=0)
for f in report.folds:
    if f.rejected:
        print(f"fold {f.fold} rejected: {f.rejected}")
        continue
    print(f"fold {f.fold}: acc {f.test.accuracy:.2f}  first/last loss {f.trace.losses[0]:.3f}/{f.trace.losses[-1]:.3f}")
    for p in f.predictions:
        print("   ", p["region_id"], "label", p["label"], "p(tumor) %.3f" % p["probability"], "from", p["n_crops"], "crops")

print(report.table_row())
print("pooled AUC", report.pooled_auc)
print(roc_csv(report.pooled_roc))
