import json, time
import numpy as np
from causalattn.synthetic import SynSpec, make_synthetic
from causalattn.train import TrainConfig, build_model, fit

ds = make_synthetic(SynSpec(bias=0.5, n_per_class=500, seed=100))
cells = [
    ("cal-lr3e-3",  dict(lr=3e-3)),
    ("cal-lr1e-2",  dict(lr=1e-2)),
    ("cal-lr3e-2",  dict(lr=3e-2)),
    ("cal-l0-lr1e-3", dict(lr=1e-3, lambda1=0.0, lambda2=0.0)),
    ("van-lr1e-3",  dict(lr=1e-3, cal_enabled=False)),
    ("van-lr3e-3",  dict(lr=3e-3, cal_enabled=False)),
]
for name, kw in cells:
    cfg = TrainConfig(epochs=20, batch_size=128, hidden=64, seed=0, **kw)
    model = build_model(cfg, ds.feature_dim, ds.num_classes)
    t0 = time.time()
    res = fit(model, ds, cfg)
    print(name, "test_best=%.3f" % res.test_acc_best,
          "val=", [round(e["val_acc"], 3) for e in res.history],
          "loss=", [round(e["loss_total"], 3) for e in res.history],
          "(%.0fs)" % (time.time() - t0), flush=True)
print("PILOT2 DONE")
