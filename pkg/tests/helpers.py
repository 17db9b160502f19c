"""Shared test utilities: gradient-check plumbing, synthetic fixtures."""

import numpy as np

from hsfuse.fusion import ModalityVector
from hsfuse.model import ModelConfig, forward, named_tensors, replace_tensors
from hsfuse.optim import cross_entropy
from hsfuse.tensor import finite_diff_grad

BENCH_DIM = 16
BENCH_CLASSES = 16


def flatten_tensors(tensors):
    names = list(tensors)
    flat = np.concatenate([tensors[k].ravel() for k in names])
    shapes = {k: tensors[k].shape for k in names}
    return names, flat, shapes


def unflatten_tensors(names, flat, shapes):
    out, at = {}, 0
    for k in names:
        size = int(np.prod(shapes[k]))
        out[k] = flat[at : at + size].reshape(shapes[k])
        at += size
    return out


def loss_of_flat_params(cfg, params, sample, label):
    """Scalar loss as a function of the flattened parameter vector."""
    tensors = named_tensors(cfg, params)
    names, flat0, shapes = flatten_tensors(tensors)

    def f(flat):
        p = replace_tensors(cfg, params, unflatten_tensors(names, flat, shapes))
        logits, _ = forward(cfg, p, sample)
        return cross_entropy(logits, label)[0]

    return f, names, flat0, shapes


def rel_err(analytic, numeric):
    analytic = np.asarray(analytic).ravel()
    numeric = np.asarray(numeric).ravel()
    scale = max(1.0, float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))))
    return float(np.max(np.abs(analytic - numeric))) / scale


def random_sample(cfg, rng):
    return [ModalityVector(name, rng.normal(size=dim)) for name, dim in cfg.modalities]


def numeric_param_grad(cfg, params, sample, label, eps=1e-6):
    f, names, flat0, shapes = loss_of_flat_params(cfg, params, sample, label)
    return names, unflatten_tensors(names, finite_diff_grad(f, flat0, eps), shapes)


def numeric_input_grad(cfg, params, sample, label, modality, eps=1e-6):
    idx = [m.name for m in sample].index(modality)

    def f(x):
        bumped = list(sample)
        bumped[idx] = ModalityVector(modality, x)
        logits, _ = forward(cfg, params, bumped)
        return cross_entropy(logits, label)[0]

    return finite_diff_grad(f, sample[idx].values, eps)


# --- synthetic interaction benchmark ---------------------------------------
# 16 classes encoded as sign patterns of the elementwise product of the two
# modality vectors: 4 class bits, each replicated over a block of 4
# coordinates. A per-sample block-tied sign flip is applied to BOTH
# modalities, so each modality alone carries no class signal; only the
# interaction (the product) does.


def bench_sign_pattern(c):
    return np.array([1.0 if (c >> (j % 4)) & 1 else -1.0 for j in range(BENCH_DIM)])


def bench_split(rng, per_class, noise=0.15):
    samples = []
    for c in range(BENCH_CLASSES):
        s = bench_sign_pattern(c)
        for _ in range(per_class):
            rho = rng.choice([-1.0, 1.0], size=4)
            r = np.array([rho[j % 4] for j in range(BENCH_DIM)])
            m1 = r * (1.0 + rng.normal(scale=noise, size=BENCH_DIM))
            m2 = r * (s + rng.normal(scale=noise, size=BENCH_DIM))
            samples.append(([ModalityVector("A", m1), ModalityVector("B", m2)], c))
    return samples


def bench_config(fusion, seed, hidden=128):
    return ModelConfig(
        modalities=(("A", BENCH_DIM), ("B", BENCH_DIM)),
        classes=BENCH_CLASSES,
        hidden=hidden,
        fusion=fusion,
        seed=seed,
    )


# --- separable two-class fixture --------------------------------------------


def separable_fixture(n_per_class=5, dim=2, gap=2.0, seed=3):
    """Two linearly separable clusters on one 2-d modality."""
    rng = np.random.default_rng(seed)
    train, val = [], []
    for split, bucket in (("train", train), ("val", val)):
        for c in (0, 1):
            center = np.array([gap if c == 0 else -gap, 0.0])
            for _ in range(n_per_class):
                x = center + rng.normal(scale=0.3, size=dim)
                bucket.append(([ModalityVector("D", x)], c))
    return train, val
