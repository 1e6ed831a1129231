"""Server-side FairMF on seed users plus the proximity pull at clients."""
# %%
from pathlib import Path

import numpy as np

from fairfrs import Hyperparams, load_movielens, make_synthetic, run_training, split

data = Path(__file__).resolve().parents[1] / "data" / "ml-100k"
ds = load_movielens(data) if (data / "u.data").exists() else make_synthetic(n=300, m=200)
attr = "age"

# %% same partition for both modes; 20% of ratings belong to seed users
rows = []
for seed in range(3):
    part = split(ds, 0.8, 0.2, rng_seed=seed)
    base = run_training(part, Hyperparams(), "rs_fedrec", seed, attribute=attr).traces[-1]
    for lam_f, eta in [(0.1, 0.1), (2000.0, 0.5)]:
        # a large penalty needs the holdout sign and a smaller server step to stay stable
        extra = {"fair_holdout": 0.2, "gamma_server": 0.005} if lam_f > 1 else {}
        hp = Hyperparams(lambda_f=lam_f, eta=eta, **extra)
        fair = run_training(part, hp, "rs_fairfrs", seed, attribute=attr).traces[-1]
        rows.append((seed, lam_f, eta, base.rmse_test, abs(base.ldap), fair.rmse_test,
                     abs(fair.ldap)))

# %%
print("seed lambda_f eta | rs_fedrec rmse |ldap| | rs_fairfrs rmse |ldap|")
for r in rows:
    print("{:4d} {:8.1f} {:3.1f} | {:.4f} {:.4f} | {:.4f} {:.4f}".format(*r))
rows = np.array(rows)
for lam_f in np.unique(rows[:, 1]):
    sel = rows[rows[:, 1] == lam_f]
    print(f"lambda_f={lam_f:g}: mean |ldap| change {1 - sel[:, 6].mean() / sel[:, 4].mean():+.1%}")
