import numpy as np


def module_gradcheck(mod, x, rng, step=1e-5, per_tensor=None, signature=None, floor=1e-5):
    """Max relative error of every parameter tensor and of the input gradient.

    The probe loss is <forward(x), R> for a fixed random R.  ``signature``
    returns a hashable view of any discrete selection made in the forward
    pass; points where it changes under +-step are skipped.
    """
    R = rng.standard_normal(mod.forward(x).shape)
    mod.zero_grad()
    mod.forward(x)
    dx = mod.backward(R)
    base = signature() if signature else None
    analytic = {n: g.copy() for n, g in mod.gradients().items()}
    analytic["<input>"] = dx
    tensors = dict(mod.parameters())
    tensors["<input>"] = x

    def f():
        out = float(np.sum(mod.forward(x) * R))
        return out, (signature() if signature else None)

    errors, skipped = {}, 0
    for name, arr in tensors.items():
        flat, g = arr.reshape(-1), analytic[name].reshape(-1)
        idx = np.arange(flat.size)
        if per_tensor is not None and flat.size > per_tensor:
            idx = rng.choice(flat.size, per_tensor, replace=False)
        worst = 0.0
        for i in idx:
            old = flat[i]
            flat[i] = old + step
            fp, sp = f()
            flat[i] = old - step
            fm, sm = f()
            flat[i] = old
            if signature and (sp != base or sm != base):
                skipped += 1
                continue
            num = (fp - fm) / (2 * step)
            worst = max(worst, abs(num - g[i]) / max(abs(num), abs(g[i]), floor))
        errors[name] = worst
    return errors, skipped
