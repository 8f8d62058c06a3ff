"""What does alpha_label do to the clients?

One Dirichlet draw per class decides how that class is spread over the
clients.  Small alpha concentrates each class on a few clients, so each
client sees only a handful of labels.
"""
import numpy as np

from fedsim.data import generate_synthetic, label_entropy, mean_client_entropy, partition_dirichlet
from fedsim.numcore import RngStream

data = generate_synthetic(rng=RngStream(0), n_samples=20_000)
print(f"pool: {len(data)} samples, {data.n_classes} classes, max entropy {np.log(data.n_classes):.3f}")

for alpha in (0.1, 0.5, 1.0, 5.0):
    plan = partition_dirichlet(data, None, 10, alpha, RngStream(1), min_samples=10)
    print(f"\nalpha={alpha}: mean client label entropy {mean_client_entropy(plan, data):.3f}")
    for cid in range(3):
        counts = np.bincount(data.y[plan.train[cid]], minlength=data.n_classes)
        ent = label_entropy(data.y[plan.train[cid]], data.n_classes)
        print(f"  client {cid}: n={counts.sum():5d} entropy={ent:.2f} labels {counts.tolist()}")
