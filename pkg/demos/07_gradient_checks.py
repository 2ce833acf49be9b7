"""Verifying the hand-written backward passes with central differences."""
from hypergcn.gradcheck import gradcheck
from hypergcn.network import ModelConfig
from hypergcn.nn import Conv1x1

small = ModelConfig.tiny(layers_per_stage=1)

# With every nonlinearity off the loss is smooth and differences are nearly exact.
lin = gradcheck(linear=True, max_per_tensor=2)
print(f"linear model: max normwise error {lin.max_normwise:.1e}")

report = gradcheck(small, max_per_tensor=3, seed=1)
for line in report.lines():
    print(line)

# A sign error in one backward pass is caught immediately.
original = Conv1x1.backward


def broken(self, dy):
    dx = original(self, dy)
    self.grads["weight"] *= -1
    return dx


Conv1x1.backward = broken
bad = gradcheck(small, max_per_tensor=2, seed=1)
Conv1x1.backward = original
print(f"with a flipped sign: max error {bad.max_error:.2f} -> {'PASS' if bad.passed else 'FAIL'}")
