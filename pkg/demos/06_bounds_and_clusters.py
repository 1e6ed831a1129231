"""How many sampled clients are enough, and do clusters stay represented."""
# %%
import numpy as np

from fairfrs.sampling import (BoundQuery, cluster_representation_mc, kmeans_elbow,
                              lemma1_bound, theorem1_bound)

for eps in (0.1, 0.25, 0.4):
    b = theorem1_bound(BoundQuery(n=6000, tau=0.35, epsilon=eps))
    print(f"eps={eps}: P(deviation >= eps) <= {b:.3g}")
print("cluster count bound, |C|=2100, eps=35:", round(lemma1_bound(2100, 35), 4))

# %% Monte Carlo: 20 equal clusters, 35% sampled, 500 rounds
for balanced in (True, False):
    r = cluster_representation_mc(6000, 20, 0.35, 500, rng_seed=0, balanced=balanced)
    print("balanced" if balanced else "iid labels", "P(>15% off)", r["exceed_prob"],
          "min count", r["min_count"])

# %% elbow on a toy embedding with 5 groups
rng = np.random.default_rng(0)
X = np.concatenate([rng.normal(c, 0.5, (60, 3)) for c in rng.normal(0, 4, (5, 3))])
for K, inertia in kmeans_elbow(X, range(1, 9)):
    print(K, round(inertia, 1))
