"""One communication round spelled out with the single-client API."""
# %%
import numpy as np

from fairfrs import Hyperparams, make_synthetic, split
from fairfrs.protocol import ClientState, aggregate, client_round, sample_clients, sample_virtual_items

ds = make_synthetic(n=40, m=30, rng_seed=1)
part = split(ds, 0.8, 0.0, rng_seed=1)
hp = Hyperparams(k=4, tau=0.35)
rng = np.random.default_rng(0)
V = rng.normal(0, 0.05, (ds.m, hp.k))

clients = [ClientState(u, rng.normal(0, 0.05, hp.k), it, r)
           for u, (it, r) in part.per_user("train").items()]
for c in clients:
    sample_virtual_items(c, ds.m, hp.rho, rng)   # I'_u, fixed for the whole run

# %% every client trains, only the sampled ones upload
chosen = set(sample_clients(len(clients), hp.tau, rng).tolist())
uploads = []
for idx, c in enumerate(clients):
    _, up = client_round(c, V, None, hp, round=0)
    if idx in chosen:
        uploads.append(up)
print(len(uploads), "of", len(clients), "clients upload",
      sum(up.n_params for up in uploads), "parameters")

# the upload mixes rated and virtual items; the server cannot tell them apart
print("client", uploads[0].user_id, "sends", len(uploads[0].item_ids), "item rows")

# %% server: per-item mean of the uploaded gradients
V = V - hp.gamma * aggregate(uploads, ds.m, hp.k)
