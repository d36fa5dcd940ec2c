"""Shared test utilities: the central finite-difference gradient oracle."""

import numpy as np

from gnnbench import tensor as T


def numeric_grad(f, x, step=1e-6):
    """Central finite differences of a scalar function at numpy array x."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = f(x)
        flat[i] = orig - step
        f_minus = f(x)
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def rel_error(a, b, floor=1e-6):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = np.maximum(np.abs(a) + np.abs(b), floor)
    return float((np.abs(a - b) / scale).max()) if a.size else 0.0


def check_gradients(build, inputs, tol=1e-5, step=1e-6):
    """Compare tape gradients of build(*tensors) against finite differences.

    ``build`` must map freshly wrapped Tensors to a scalar Tensor and be a
    deterministic pure function of its inputs. Returns the worst relative
    error across all inputs.
    """
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    tensors = [T.parameter(x.copy()) for x in inputs]
    with T.Tape() as tape:
        loss = build(*tensors)
        tape.backward(loss)

    worst = 0.0
    for i, tensor in enumerate(tensors):
        def f(x, i=i):
            vals = [v.copy() for v in inputs]
            vals[i] = x
            return build(*[T.as_tensor(v) for v in vals]).item()

        expected = numeric_grad(f, inputs[i], step=step)
        got = tensor.grad if tensor.grad is not None else np.zeros_like(inputs[i])
        err = rel_error(got, expected)
        assert err < tol, f"input {i}: tape grad vs finite differences, rel err {err:.3g} >= {tol}"
        worst = max(worst, err)
    return worst


def module_grad_check(loss_fn, params, tol=1e-5, step=1e-6):
    """Finite-difference check of d(loss)/d(p) for every tensor in params.

    ``loss_fn`` rebuilds the forward pass from the tensors' *current* data
    and returns a scalar Tensor. Probes run inside a fresh tape so layers
    that key behavior off recording (batch norm) stay in training mode,
    and perturb ``p.data`` in place. Returns the worst relative error.
    """
    with T.Tape() as tape:
        tape.backward(loss_fn())
    grads = []
    for p in params:
        assert p.grad is not None, "parameter received no gradient"
        grads.append(p.grad.copy())

    def value():
        with T.Tape():
            return float(loss_fn().data)

    # entries whose analytic and numeric values are both tiny relative to the
    # gradient's overall scale sit below finite-difference round-off (central
    # differences carry ~eps*|loss|/step of absolute noise); the floor keeps
    # them from registering as relative error
    gmax = max(np.abs(g).max() for g in grads)
    floor = max(1e-6, 1e-3 * gmax)

    worst = 0.0
    for p, got in zip(params, grads):
        flat = p.data.reshape(-1)
        num = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = value()
            flat[i] = orig - step
            lo = value()
            flat[i] = orig
            num[i] = (hi - lo) / (2.0 * step)
        err = rel_error(got.reshape(-1), num, floor=floor)
        assert err < tol, f"param grad vs finite differences, rel err {err:.3g} >= {tol}"
        worst = max(worst, err)
    return worst
