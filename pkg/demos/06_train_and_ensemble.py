"""Train one small model per input stream on a toy set and fuse their scores."""
import numpy as np

from hypergcn.data import TOY5, Modality, prepare, stack_sequences, synthetic_sequences
from hypergcn.network import HyperGCN, ModelConfig
from hypergcn.train import OptimConfig, TrainState, ensemble_scores, fit, lr_at

cfg = ModelConfig.tiny(num_classes=3)
optim = OptimConfig(base_lr=0.05, warmup_epochs=3, step_epochs=(20,), step_factors=(0.1,),
                    total_epochs=25, batch_size=6)
print("learning rates:", [lr_at(e, optim) for e in (0, 1, 2, 3, 19, 20, 24)])

train_seqs = synthetic_sequences(18, TOY5, 16, num_classes=3, seed=0)
test_seqs = synthetic_sequences(9, TOY5, 16, num_classes=3, seed=1)

scores = []
for m in Modality:
    tr = stack_sequences([prepare(s, TOY5, m, cfg.T_in) for s in train_seqs], 1)
    te = stack_sequences([prepare(s, TOY5, m, cfg.T_in) for s in test_seqs], 1)
    model = HyperGCN(cfg)
    hist = fit(model, tr, optim, TrainState(seed=0))
    s = model.predict(te.x, te.mask)
    scores.append(s)
    print(f"{m.value:>12}: final train loss {hist[-1]['loss']:.3f}, "
          f"test top-1 {np.mean(s.argmax(1) == te.labels):.3f}")

labels = te.labels
print("4-stream ensemble top-1:", ensemble_scores(scores, labels))
print("weighted 2:1:1:1 top-1:", ensemble_scores(scores, labels, [2, 1, 1, 1]))
