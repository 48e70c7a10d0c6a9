"""Central finite-difference checks for the autodiff engine."""
import numpy as np

from . import autodiff as ad


def rel_error(analytic, numeric, floor=1e-12):
    """max |a - n| / max(max |n|, floor), over all elements."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(a - n)) / max(float(np.max(np.abs(n))), floor))


def numeric_grad(f, x, h=1e-3, index=None):
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place).

    ``index`` restricts the check to a list of flat indices.
    """
    flat = x.reshape(-1)
    idx = range(flat.size) if index is None else index
    out = np.zeros(len(idx) if index is not None else flat.size)
    for k, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out[k] = (fp - fm) / (2 * h)
    return out


def check_op(op, inputs, h=1e-3, seed=0):
    """Relative gradient error of ``sum(w * op(*inputs))`` for a random ``w``.

    Returns the worst error over all inputs. Inputs are float64 arrays.
    """
    rng = np.random.default_rng(seed)
    tens = [ad.Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    out = op(*tens)
    w = rng.standard_normal(out.shape)
    loss = ad.sum_(ad.mul(out, ad.Tensor(w)))
    loss.backward()

    def f():
        with ad.no_grad():
            return float(np.sum(op(*tens).data * w))

    worst = 0.0
    for t in tens:
        num = numeric_grad(f, t.data, h).reshape(t.shape)
        worst = max(worst, rel_error(t.grad, num))
    return worst


def sampled_param_check(params, loss_fn, n=100, h=1e-6, seed=0):
    """Autodiff vs central differences on ``n`` randomly chosen scalar parameters.

    ``params`` maps names to float64 Tensors and ``loss_fn()`` returns the
    scalar loss Tensor. Returns (relative error, analytic values, numeric
    values, picked names).
    """
    for p in params.values():
        p.grad = None
    loss_fn().backward()
    names = list(params)
    sizes = np.array([params[k].data.size for k in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    picks = np.random.default_rng(seed).choice(int(sizes.sum()), n, replace=False)

    def value():
        with ad.no_grad():
            return float(loss_fn().item())

    an, nu, picked = [], [], []
    for flat in picks:
        j = int(np.searchsorted(offsets, flat, side="right") - 1)
        p = params[names[j]]
        i = int(flat - offsets[j])
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        an.append(float(g.reshape(-1)[i]))
        nu.append(float(numeric_grad(value, p.data, h, index=[i])[0]))
        picked.append(names[j])
    an, nu = np.array(an), np.array(nu)
    return rel_error(an, nu), an, nu, picked
