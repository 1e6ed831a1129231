"""Uploading from a third of the clients costs little accuracy."""
# %%
from pathlib import Path

from fairfrs import Hyperparams, comm_cost, load_movielens, make_synthetic, run_training, split

data = Path(__file__).resolve().parents[1] / "data" / "ml-100k"
ds = load_movielens(data) if (data / "u.data").exists() else make_synthetic(n=300, m=200)
part = split(ds, 0.8, 0.0, rng_seed=0)
hp = Hyperparams()

full = run_training(part, hp, "fedrec", rng_seed=0)
rs = run_training(part, hp, "rs_fedrec", rng_seed=0)

# %%
for t_full, t_rs in zip(full.traces[::4], rs.traces[::4]):
    print(f"round {t_full.round:2d}  fedrec {t_full.rmse_test:.4f}  rs_fedrec {t_rs.rmse_test:.4f}")
print("parameter reduction", round(comm_cost(rs.traces, full.traces)["reduction"], 4))

# %% group gaps under plain FedRec
last = full.traces[-1]
for attr, g in last.groups.items():
    print(attr, "disadvantaged", round(g["rmse_a"], 4), "advantaged", round(g["rmse_b"], 4))
