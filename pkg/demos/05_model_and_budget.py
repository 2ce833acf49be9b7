"""The full network: size, cost, a forward pass, and the divergence penalty."""
import numpy as np

from hypergcn.network import (HyperGCN, ModelConfig, count_params, cosine_matrix,
                              divergence_loss, flop_breakdown, total_loss)

model = HyperGCN(ModelConfig())          # NTU layout, 60 classes, channels 128/256/256
fl = flop_breakdown(model, 64, 25)
print(f"params {count_params(model):,}  GFLOPs {fl['total'] / 1e9:.3f} "
      f"(frame-dependent {fl['per_frame']:,}, fixed {fl['fixed']:,})")
print("doubling T doubles the frame-dependent part:",
      flop_breakdown(model, 128, 25)["per_frame"] == 2 * fl["per_frame"])

# A small model keeps the demo quick.
tiny = HyperGCN(ModelConfig.tiny())
rng = np.random.default_rng(0)
x = rng.standard_normal((4, 1, 3, 8, 5))
logits = tiny.predict(x)
print("tiny logits", logits.shape, "deterministic:", np.array_equal(logits, tiny.predict(x)))
# Untrained, batch-norm still uses its initial running statistics, so the
# inference logits are large and the loss is far from chance level.
print("loss with labels [0,1,2,0]:", round(total_loss(logits, [0, 1, 2, 0], tiny), 4))

# Hyper-joints are pushed apart: identical columns cost the most.
print("cosine matrix of two identical columns:\n", cosine_matrix(np.ones((4, 2))).round(6))
print("divergence at init:", round(divergence_loss(tiny), 4))
for F in tiny.hyper_joint_matrices():
    F[:] = np.eye(len(F))[:, :F.shape[1]]
print("divergence with orthogonal hyper-joints:", divergence_loss(tiny))
