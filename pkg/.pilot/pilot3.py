import time
import numpy as np
from causalattn.synthetic import SynSpec, make_synthetic
from causalattn.train import TrainConfig, build_model, fit

ds = make_synthetic(SynSpec(bias=0.5, n_per_class=1000, seed=7))
cells = [
    ("van-lr3e-3", dict(lr=3e-3, cal_enabled=False)),
    ("cal-lr1e-2", dict(lr=1e-2)),
    ("cal-lr3e-3", dict(lr=3e-3)),
]
for name, kw in cells:
    cfg = TrainConfig(epochs=60, batch_size=128, hidden=64, seed=0, **kw)
    model = build_model(cfg, ds.feature_dim, ds.num_classes)
    t0 = time.time()
    res = fit(model, ds, cfg, log=lambda e: print(
        f"  {name} ep{e['epoch']:02d} loss={e['loss_total']:.3f} val={e['val_acc']:.3f}",
        flush=True) if e["epoch"] % 5 == 0 else None)
    print(name, "test_best=%.4f test_last=%.4f best_ep=%d (%.0fs)" % (
        res.test_acc_best, res.test_acc_last, res.best_epoch, time.time() - t0),
        flush=True)
print("PILOT3 DONE")
