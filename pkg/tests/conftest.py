import mpmath as mp
import numpy as np
import pytest

from riskcal.hierarchy import ClassTaxonomy, ErrorKind


def central_difference(f, x, h):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    for j in range(x.size):
        xp = x.copy().reshape(-1)
        xm = x.copy().reshape(-1)
        xp[j] += h
        xm[j] -= h
        flat[j] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2.0 * h)
    return grad


def componentwise_rel_err(analytic, numeric, floor=1e-8):
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def random_taxonomy(rng, k):
    flags = np.zeros(k, dtype=int)
    n_malignant = int(rng.integers(1, k))
    flags[rng.permutation(k)[:n_malignant]] = 1
    return ClassTaxonomy(tuple(f"c{i}" for i in range(k)), tuple(flags.tolist()))


def top_gap(z):
    s = np.sort(np.asarray(z))[..., ::-1]
    return s[..., 0] - s[..., 1]


@pytest.fixture
def four_class():
    return ClassTaxonomy(("B1", "B2", "M1", "M2"), (0, 0, 1, 1))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# High-precision reference losses, written directly from the textbook
# formulas. Used as the finite-difference oracle so float64 cancellation in
# the difference quotient does not mask small gradient components.
MP_DIGITS = 40


def _mp_log_softmax(z, y):
    m = max(z)
    lse = m + mp.log(mp.fsum(mp.exp(v - m) for v in z))
    return [v - lse for v in z]


def mp_reference_loss(spec, z, y):
    """Loss value of ``spec`` at logits ``z`` (mp numbers) for label ``y``."""
    logp = _mp_log_softmax(z, y)
    kind = spec.kind
    if kind == "ce":
        return -logp[y]
    if kind == "wce":
        return mp.mpf(float(spec.weights[y])) * -logp[y]
    if kind == "focal":
        pt = mp.exp(logp[y])
        return -mp.mpf(spec.alpha_f) * (1 - pt) ** mp.mpf(spec.gamma) * logp[y]
    if kind == "label_smoothing":
        k = len(z)
        eps = mp.mpf(spec.epsilon)
        q = [eps / k + (1 - eps if j == y else 0) for j in range(k)]
        return -mp.fsum(qj * lj for qj, lj in zip(q, logp))
    if kind == "rcl":
        y_hat = max(range(len(z)), key=lambda j: (z[j], -j))
        return mp.mpf(float(spec.severity.entries[y, y_hat])) * -logp[y]
    raise ValueError(kind)


def mp_central_difference(spec, z, y, h=1e-5):
    with mp.workdps(MP_DIGITS):
        base = [mp.mpf(float(v)) for v in z]
        hh = mp.mpf(h)
        grad = []
        for j in range(len(base)):
            zp = list(base)
            zm = list(base)
            zp[j] += hh
            zm[j] -= hh
            diff = (mp_reference_loss(spec, zp, y) - mp_reference_loss(spec, zm, y)) / (2 * hh)
            grad.append(float(diff))
    return np.array(grad)


# Extended-precision forward pass + loss, independent of the package code.
# Serves as the end-to-end finite-difference oracle for parameter gradients.
LD = np.longdouble


def _ld_loss_rows(spec, z, y):
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(len(y))
    nll = -logp[rows, y]
    kind = spec.kind
    if kind == "ce":
        return nll
    if kind == "wce":
        return np.asarray(spec.weights, dtype=LD)[y] * nll
    if kind == "focal":
        pt = np.exp(-nll)
        return LD(spec.alpha_f) * (1 - pt) ** LD(spec.gamma) * nll
    if kind == "label_smoothing":
        k = z.shape[1]
        eps = LD(spec.epsilon)
        q = np.full(z.shape, eps / k, dtype=LD)
        q[rows, y] += 1 - eps
        return -(q * logp).sum(axis=1)
    if kind == "rcl":
        y_hat = np.argmax(z, axis=1)  # numpy argmax returns the first maximum
        return np.asarray(spec.severity.entries, dtype=LD)[y, y_hat] * nll
    raise ValueError(kind)


def ld_batch_loss(spec, architecture, params, x, y):
    x = np.asarray(x, dtype=LD)
    p = {k: np.asarray(v, dtype=LD) for k, v in params.items()}
    if architecture == "linear":
        z = x @ p["W"].T + p["b"]
    else:
        hidden = np.maximum(x @ p["W1"].T + p["b1"], 0)
        z = hidden @ p["W2"].T + p["b2"]
    return _ld_loss_rows(spec, z, np.asarray(y)).mean()


def ld_param_gradient(spec, architecture, params, x, y, h=1e-4):
    """Central differences of the mean batch loss w.r.t. every parameter."""
    out = {}
    for name, value in params.items():
        base = np.asarray(value, dtype=LD)
        grad = np.zeros(base.shape, dtype=LD)
        for idx in np.ndindex(base.shape):
            plus = dict(params)
            minus = dict(params)
            bp = base.copy()
            bm = base.copy()
            bp[idx] += LD(h)
            bm[idx] -= LD(h)
            plus[name], minus[name] = bp, bm
            grad[idx] = (
                ld_batch_loss(spec, architecture, plus, x, y)
                - ld_batch_loss(spec, architecture, minus, x, y)
            ) / LD(2 * h)
        out[name] = grad.astype(np.float64)
    return out


def brute_force(taxonomy, y_true, y_pred):
    """Per-sample recomputation of every metric, with no confusion matrix."""
    k = taxonomy.k
    pairs = list(zip(y_true, y_pred))
    n = len(pairs)
    malignant = [(t, p) for t, p in pairs if taxonomy.superclass[t] == 1]
    fatal = [1 for t, p in malignant if taxonomy.superclass[p] == 0]
    f1s = []
    for c in range(k):
        tp = sum(1 for t, p in pairs if t == c and p == c)
        fp = sum(1 for t, p in pairs if t != c and p == c)
        fn = sum(1 for t, p in pairs if t == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    kinds = {kind: 0 for kind in ErrorKind}
    for t, p in pairs:
        if t == p:
            kinds[ErrorKind.CORRECT] += 1
        elif taxonomy.superclass[t] == taxonomy.superclass[p]:
            kinds[ErrorKind.VISUAL_AMBIGUITY] += 1
        elif taxonomy.superclass[t] == 0:
            kinds[ErrorKind.TYPE_I] += 1
        else:
            kinds[ErrorKind.TYPE_II] += 1
    return {
        "cer": 100.0 * len(fatal) / len(malignant) if malignant else None,
        "f1_macro": sum(f1s) / k,
        "accuracy": sum(1 for t, p in pairs if t == p) / n if n else None,
        "kinds": kinds,
        "n_malignant": len(malignant),
    }
