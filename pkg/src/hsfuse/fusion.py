"""Modality projection and early fusion with analytic forward/backward passes.

Three fusion methods over N modality vectors:

  concat      fused = out_1 || ... || out_N
  multconcat  fused = (out_1 || ... || out_N) || (out_1 ⊙ ... ⊙ out_N)
  lmf         fused = sum over rank slices i of  ⊙_m (z~_m · F_m^(i))

where out_i = ReLU(W_i M_i + b_i) is the projected modality and z~_m is the
raw modality vector with a constant 1 appended (last position). The LMF path
factorizes the contraction of the full outer product ⊗_m z~_m with a weight
tensor; `tensor_fusion_oracle` materializes that contraction brute-force and
must agree with `lmf_fuse` exactly (up to fp rounding) — that identity is the
defining test of the low-rank route.

Backward passes are hand-derived and checked against central finite
differences in the test suite.
"""

from dataclasses import dataclass, field
from collections.abc import Sequence

import numpy as np

from .errors import DimensionError, UsageError
from .tensor import Mat, Vec, affine, relu

FUSION_METHODS = ("concat", "multconcat", "lmf")


@dataclass(frozen=True)
class ModalityVector:
    """A dense feature vector tagged with its modality name."""

    name: str
    values: Vec

    def __post_init__(self):
        if not self.name or any(ch in self.name for ch in " \t,:=;"):
            raise UsageError(f"bad modality name {self.name!r}")
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise DimensionError(f"modality {self.name!r} needs a non-empty 1-d vector")
        if not np.all(np.isfinite(v)):
            raise UsageError(f"modality {self.name!r} has non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


@dataclass
class ProjectionParams:
    """Per-modality (W_i, b_i); every modality projects to the same hidden size."""

    weights: dict[str, Mat]
    biases: dict[str, Vec]

    def __post_init__(self):
        if set(self.weights) != set(self.biases):
            raise UsageError("projection weights and biases cover different modalities")
        hs = {w.shape[0] for w in self.weights.values()}
        hs |= {b.shape[0] for b in self.biases.values()}
        if len(hs) != 1:
            raise DimensionError(f"projections disagree on hidden size: {sorted(hs)}")

    @property
    def hidden(self) -> int:
        return next(iter(self.weights.values())).shape[0]


@dataclass
class LmfParams:
    """Per-modality factor stacks F_m of shape (rank, d_m + 1, out_dim)."""

    factors: dict[str, np.ndarray]
    rank: int
    out_dim: int

    def __post_init__(self):
        if self.rank < 1:
            raise UsageError(f"rank must be >= 1, got {self.rank}")
        if self.out_dim < 1:
            raise UsageError(f"out_dim must be >= 1, got {self.out_dim}")
        for name, f in self.factors.items():
            if f.ndim != 3 or f.shape[0] != self.rank or f.shape[2] != self.out_dim:
                raise DimensionError(
                    f"factor {name!r} has shape {f.shape}, expected "
                    f"({self.rank}, d_{name}+1, {self.out_dim})"
                )


@dataclass(frozen=True)
class FusedVector:
    values: Vec
    method: str


def project_modality(m: ModalityVector, w: Mat, b: Vec) -> Vec:
    """out_i = ReLU(W_i M_i + b_i)."""
    if w.shape[1] != m.dim:
        raise DimensionError(
            f"projection for {m.name!r}: W is {w.shape[0]}x{w.shape[1]}, input dim {m.dim}"
        )
    return relu(affine(m.values, w, b))


def concat_fuse(outs: Sequence[Vec]) -> FusedVector:
    if len(outs) == 0:
        raise UsageError("concat_fuse needs at least one input")
    return FusedVector(np.concatenate([np.asarray(o, dtype=np.float64) for o in outs]), "concat")


def hadamard_fuse(outs: Sequence[Vec]) -> Vec:
    if len(outs) == 0:
        raise UsageError("hadamard_fuse needs at least one input")
    dims = {np.asarray(o).shape for o in outs}
    if len(dims) != 1:
        raise DimensionError(f"hadamard_fuse inputs disagree on dim: {sorted(dims)}")
    z = np.array(outs[0], dtype=np.float64)
    for o in outs[1:]:
        z *= o
    return z


def mult_concat_fuse(outs: Sequence[Vec]) -> FusedVector:
    """Concatenation of the projections joined with their Hadamard product."""
    if len(outs) == 0:
        raise UsageError("mult_concat_fuse needs at least one input")
    c = concat_fuse(outs).values
    z = hadamard_fuse(outs)
    return FusedVector(np.concatenate([c, z]), "multconcat")


def _augment(z: Vec) -> Vec:
    # trailing constant 1 (fixed convention, matters for checkpoint portability)
    return np.concatenate([z, [1.0]])


def lmf_fuse(zs: Sequence[ModalityVector], params: LmfParams) -> FusedVector:
    """Low-rank fusion: per rank slice, project each augmented modality to the
    output space and take the elementwise product across modalities; sum slices."""
    _check_lmf_shapes(zs, params)
    total = np.zeros(params.out_dim)
    for i in range(params.rank):
        slice_prod = np.ones(params.out_dim)
        for z in zs:
            slice_prod *= _augment(z.values) @ params.factors[z.name][i]
        total += slice_prod
    return FusedVector(total, "lmf")


def tensor_fusion_oracle(zs: Sequence[ModalityVector], params: LmfParams) -> Vec:
    """Brute-force check of lmf_fuse: materialize the full weight tensor
    W_k = Σ_i ⊗_m F_m^(i)[:, k] per output coordinate and contract it with the
    full outer product ⊗_m z~_m. Exponential in N; capped at 10^6 cells."""
    _check_lmf_shapes(zs, params)
    sizes = [z.dim + 1 for z in zs]
    if int(np.prod(sizes)) > 10**6:
        raise UsageError(f"oracle tensor would have {np.prod(sizes)} cells (cap 10^6)")
    outer = np.ones(1)
    for z in zs:
        outer = np.multiply.outer(outer, _augment(z.values))
    outer = outer.reshape(sizes)
    out = np.empty(params.out_dim)
    for k in range(params.out_dim):
        w = np.zeros(sizes)
        for i in range(params.rank):
            slice_w = np.ones(1)
            for z in zs:
                slice_w = np.multiply.outer(slice_w, params.factors[z.name][i][:, k])
            w += slice_w.reshape(sizes)
        out[k] = np.sum(w * outer)
    return out


def _check_lmf_shapes(zs: Sequence[ModalityVector], params: LmfParams) -> None:
    if len(zs) == 0:
        raise UsageError("lmf needs at least one modality")
    names = [z.name for z in zs]
    if len(set(names)) != len(names):
        raise UsageError(f"duplicate modality in lmf input: {names}")
    for z in zs:
        if z.name not in params.factors:
            raise DimensionError(f"no lmf factor for modality {z.name!r}")
        f = params.factors[z.name]
        if f.shape[1] != z.dim + 1:
            raise DimensionError(
                f"lmf factor for {z.name!r} expects dim {f.shape[1] - 1}, input has {z.dim}"
            )


@dataclass
class FusionCache:
    """Intermediates retained by fuse_forward for the matching backward call."""

    method: str
    inputs: list[Vec]
    names: list[str] = field(default_factory=list)
    # lmf only: per modality name, (rank, out_dim) array of z~_m · F_m^(i)
    rank_projections: dict[str, np.ndarray] = field(default_factory=dict)
    augmented: dict[str, Vec] = field(default_factory=dict)
    lmf_params: LmfParams | None = None


@dataclass
class FusionGrads:
    d_inputs: list[Vec]
    d_factors: dict[str, np.ndarray] | None = None


def fuse_forward(
    method: str,
    inputs: Sequence[ModalityVector],
    lmf_params: LmfParams | None = None,
) -> tuple[FusedVector, FusionCache]:
    """Forward pass for any fusion method, caching what backward needs.

    For concat/multconcat the inputs are the projected out_i vectors (wrapped
    with their modality names); for lmf they are the raw modality vectors.
    """
    if method not in FUSION_METHODS:
        raise UsageError(f"unknown fusion method {method!r}, expected one of {FUSION_METHODS}")
    values = [z.values for z in inputs]
    names = [z.name for z in inputs]
    cache = FusionCache(method=method, inputs=values, names=names)
    if method == "concat":
        return concat_fuse(values), cache
    if method == "multconcat":
        return mult_concat_fuse(values), cache
    if lmf_params is None:
        raise UsageError("lmf fusion requires LmfParams")
    cache.lmf_params = lmf_params
    fused = np.zeros(lmf_params.out_dim)
    for z in inputs:
        cache.augmented[z.name] = _augment(z.values)
        cache.rank_projections[z.name] = cache.augmented[z.name] @ lmf_params.factors[z.name]
    _check_lmf_shapes(inputs, lmf_params)
    for i in range(lmf_params.rank):
        slice_prod = np.ones(lmf_params.out_dim)
        for name in names:
            slice_prod *= cache.rank_projections[name][i]
        fused += slice_prod
    return FusedVector(fused, "lmf"), cache


def fusion_backward(method: str, cache: FusionCache, upstream: Vec) -> FusionGrads:
    """Gradients of the fused output w.r.t. every input (and lmf factors).

    The Hadamard term's gradient w.r.t. out_i is upstream ⊙ Π_{j≠i} out_j;
    products over "all but one" are computed by dividing the full product out
    only where safe, falling back to explicit leave-one-out products when any
    factor is zero.
    """
    if cache.method != method:
        raise UsageError(f"cache was built for {cache.method!r}, not {method!r}")
    upstream = np.asarray(upstream, dtype=np.float64)
    if method == "concat":
        return FusionGrads(d_inputs=_split_like(upstream, cache.inputs, "concat"))
    if method == "multconcat":
        n = len(cache.inputs)
        h = cache.inputs[0].shape[0]
        if upstream.shape[0] != (n + 1) * h:
            raise DimensionError(
                f"multconcat upstream has dim {upstream.shape[0]}, expected {(n + 1) * h}"
            )
        d_concat = _split_like(upstream[: n * h], cache.inputs, "multconcat")
        d_z = upstream[n * h :]
        d_inputs = []
        for i in range(n):
            others = _leave_one_out_product(cache.inputs, i)
            d_inputs.append(d_concat[i] + d_z * others)
        return FusionGrads(d_inputs=d_inputs)
    # lmf
    p = cache.lmf_params
    if p is None:
        raise UsageError("lmf cache is missing its parameters")
    if upstream.shape[0] != p.out_dim:
        raise DimensionError(f"lmf upstream has dim {upstream.shape[0]}, expected {p.out_dim}")
    d_factors = {name: np.zeros_like(p.factors[name]) for name in cache.names}
    d_inputs = [np.zeros_like(v) for v in cache.inputs]
    projections = [cache.rank_projections[name] for name in cache.names]
    for i in range(p.rank):
        slices = [proj[i] for proj in projections]
        for m, name in enumerate(cache.names):
            # d fused / d p_{m,i} = ⊙ of the other modalities' slice projections
            others = _leave_one_out_product(slices, m)
            d_proj = upstream * others
            d_factors[name][i] = np.outer(cache.augmented[name], d_proj)
            d_aug = p.factors[name][i] @ d_proj
            d_inputs[m] += d_aug[:-1]  # drop the augmented-1 coordinate
    return FusionGrads(d_inputs=d_inputs, d_factors=d_factors)


def _split_like(flat: Vec, parts: Sequence[Vec], method: str) -> list[Vec]:
    total = sum(p.shape[0] for p in parts)
    if flat.shape[0] != total:
        raise DimensionError(f"{method} upstream has dim {flat.shape[0]}, expected {total}")
    out, at = [], 0
    for p in parts:
        out.append(flat[at : at + p.shape[0]].copy())
        at += p.shape[0]
    return out


def _leave_one_out_product(vectors: Sequence[Vec], skip: int) -> Vec:
    """Elementwise Π_{j≠skip} vectors[j]; exact even when entries are zero."""
    result = np.ones_like(vectors[0])
    for j, v in enumerate(vectors):
        if j != skip:
            result = result * v
    return result
