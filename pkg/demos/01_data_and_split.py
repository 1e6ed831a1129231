"""Loading ratings, group labels and the train/test/seed split."""
# %%
from pathlib import Path

import numpy as np

from fairfrs import load_movielens, make_synthetic, restrict_seed_items, split

data = Path(__file__).resolve().parents[1] / "data" / "ml-100k"
ds = load_movielens(data) if (data / "u.data").exists() else make_synthetic(n=300, m=200)
print(ds.source, ds.n, "users", ds.m, "items", len(ds), "ratings")
print("gender", ds.group_counts("gender"), "age", ds.group_counts("age"))

# %% per-user 80/20 split; 20% of all ratings go to withheld seed users
part = split(ds, train_frac=0.8, seed_user_frac=0.2, rng_seed=0)
print("train", part.train_mask.sum(), "test", part.test_mask.sum(),
      "seed", part.seed_mask.sum(), "from", len(part.seed_users), "seed users")

# seed users never show up as clients
assert not np.isin(part.seed_users, part.client_users).any()

# %% the server may only know a slice of each seed user's history
thin = restrict_seed_items(part, keep_frac=0.25, rng_seed=0)
print("seed ratings kept at 25%:", thin.seed_mask.sum())

# %% the split is reproducible from a manifest
man = part.to_manifest()
print({k: man["counts"][k] for k in ("clients", "train", "test", "seed_users")})
