"""The assembled network: projections + fusion + one-layer classifier.

The classifier is a single affine map over the fused vector; softmax happens
in the loss / prediction paths. Parameters live in a structured dataclass but
are exposed to the optimizer as an ordered name -> array mapping
(`named_tensors` / `replace_tensors`), which is also the order the checkpoint
file uses.

Checkpoint format (text, one file):

    hsfuse-checkpoint v1
    <single-line config record>
    <comma-separated HS6 vocabulary in index order>
    <tensor name> <rows> <cols>
    <rows lines of space-separated decimals>
    ...

Floats are written with 17 significant digits, which round-trips fp64
exactly, so save -> load -> forward reproduces logits bit-for-bit.
"""

import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    CorruptionError,
    DimensionError,
    UsageError,
    VersionError,
)
from .fusion import (
    FUSION_METHODS,
    FusionCache,
    FusionGrads,
    LmfParams,
    ModalityVector,
    ProjectionParams,
    fuse_forward,
    fusion_backward,
)
from .tensor import Mat, Vec, affine, softmax

CHECKPOINT_MAGIC = "hsfuse-checkpoint"
CHECKPOINT_VERSION = "v1"
_FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture description; modality order is significant (it fixes the
    concatenation order and the checkpoint layout)."""

    modalities: tuple[tuple[str, int], ...]  # (name, input dim), ordered
    classes: int
    hidden: int = 512
    fusion: str = "multconcat"
    rank: int = 16  # lmf only
    lmf_dim: int = 128  # lmf output dim (d_h)
    seed: int = 0
    concat_raw: bool = False  # concat the raw vectors instead of projections

    def __post_init__(self):
        if self.fusion not in FUSION_METHODS:
            raise ConfigError(f"unknown fusion method {self.fusion!r}")
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if self.hidden < 1:
            raise ConfigError(f"hidden size must be >= 1, got {self.hidden}")
        if not self.modalities:
            raise ConfigError("at least one modality is required")
        names = [m for m, _ in self.modalities]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate modality names: {names}")
        for name, dim in self.modalities:
            if not name or any(ch in name for ch in " \t,:=;"):
                raise ConfigError(f"bad modality name {name!r}")
            if dim < 1:
                raise ConfigError(f"modality {name!r} has non-positive dim {dim}")
        if self.fusion == "lmf":
            if self.rank < 1:
                raise ConfigError(f"lmf rank must be >= 1, got {self.rank}")
            if self.lmf_dim < 1:
                raise ConfigError(f"lmf_dim must be >= 1, got {self.lmf_dim}")
        if self.concat_raw and self.fusion != "concat":
            raise ConfigError("concat_raw only applies to the concat fusion method")

    @property
    def modality_names(self) -> tuple[str, ...]:
        return tuple(m for m, _ in self.modalities)

    def modality_dim(self, name: str) -> int:
        for m, d in self.modalities:
            if m == name:
                return d
        raise UsageError(f"unknown modality {name!r}")

    @property
    def fused_dim(self) -> int:
        n = len(self.modalities)
        if self.fusion == "lmf":
            return self.lmf_dim
        if self.fusion == "multconcat":
            return (n + 1) * self.hidden
        if self.concat_raw:
            return sum(d for _, d in self.modalities)
        return n * self.hidden

    @property
    def uses_projections(self) -> bool:
        if self.fusion == "lmf":
            return False
        return not self.concat_raw


@dataclass
class ModelParams:
    projections: ProjectionParams | None
    lmf: LmfParams | None
    cls_w: Mat
    cls_b: Vec


def init_model(cfg: ModelConfig) -> ModelParams:
    """Uniform(-s, s) weights with s = sqrt(1/fan_in) per matrix, zero biases.

    Fully determined by cfg.seed; tensor creation order is fixed (modalities
    in config order, classifier last) so same seed means bit-identical params.
    """
    rng = np.random.default_rng(cfg.seed)

    def uniform(shape, fan_in):
        s = np.sqrt(1.0 / fan_in)
        return rng.uniform(-s, s, size=shape)

    projections = None
    lmf = None
    if cfg.uses_projections:
        weights, biases = {}, {}
        for name, dim in cfg.modalities:
            weights[name] = uniform((cfg.hidden, dim), fan_in=dim)
            biases[name] = np.zeros(cfg.hidden)
        projections = ProjectionParams(weights=weights, biases=biases)
    elif cfg.fusion == "lmf":
        factors = {}
        for name, dim in cfg.modalities:
            factors[name] = uniform((cfg.rank, dim + 1, cfg.lmf_dim), fan_in=dim + 1)
        lmf = LmfParams(factors=factors, rank=cfg.rank, out_dim=cfg.lmf_dim)
    cls_w = uniform((cfg.classes, cfg.fused_dim), fan_in=cfg.fused_dim)
    cls_b = np.zeros(cfg.classes)
    return ModelParams(projections=projections, lmf=lmf, cls_w=cls_w, cls_b=cls_b)


def named_tensors(cfg: ModelConfig, params: ModelParams) -> dict[str, np.ndarray]:
    """Ordered name -> array view of the parameters (same array objects)."""
    out: dict[str, np.ndarray] = {}
    for name, _ in cfg.modalities:
        if params.projections is not None:
            out[f"proj.{name}.w"] = params.projections.weights[name]
            out[f"proj.{name}.b"] = params.projections.biases[name]
        if params.lmf is not None:
            out[f"lmf.{name}.f"] = params.lmf.factors[name]
    out["cls.w"] = params.cls_w
    out["cls.b"] = params.cls_b
    return out


def replace_tensors(cfg: ModelConfig, params: ModelParams, tensors: dict[str, np.ndarray]) -> ModelParams:
    """Rebuild a ModelParams from a named-tensor mapping (inverse of named_tensors)."""
    projections = None
    lmf = None
    if params.projections is not None:
        weights = {name: tensors[f"proj.{name}.w"] for name, _ in cfg.modalities}
        biases = {name: tensors[f"proj.{name}.b"] for name, _ in cfg.modalities}
        projections = ProjectionParams(weights=weights, biases=biases)
    if params.lmf is not None:
        factors = {name: tensors[f"lmf.{name}.f"] for name, _ in cfg.modalities}
        lmf = LmfParams(factors=factors, rank=params.lmf.rank, out_dim=params.lmf.out_dim)
    return ModelParams(projections=projections, lmf=lmf, cls_w=tensors["cls.w"], cls_b=tensors["cls.b"])


def clone_params(cfg: ModelConfig, params: ModelParams) -> ModelParams:
    return replace_tensors(
        cfg, params, {k: v.copy() for k, v in named_tensors(cfg, params).items()}
    )


@dataclass
class ForwardCache:
    sample: list[ModalityVector]
    pre_activations: dict[str, Vec]  # projection path only
    projected: dict[str, Vec]
    fused: Vec
    fusion_cache: FusionCache
    logits: Vec


def _ordered_sample(cfg: ModelConfig, sample: list[ModalityVector]) -> list[ModalityVector]:
    by_name = {}
    for m in sample:
        if m.name in by_name:
            raise UsageError(f"modality {m.name!r} appears twice in the sample")
        by_name[m.name] = m
    missing = [n for n in cfg.modality_names if n not in by_name]
    extra = [n for n in by_name if n not in cfg.modality_names]
    if missing or extra:
        raise UsageError(
            f"sample does not match configured modalities: missing {missing}, extra {extra}"
        )
    for m in sample:
        want = cfg.modality_dim(m.name)
        if m.dim != want:
            raise DimensionError(f"modality {m.name!r} has dim {m.dim}, config says {want}")
    return [by_name[n] for n in cfg.modality_names]


def forward(cfg: ModelConfig, params: ModelParams, sample: list[ModalityVector]) -> tuple[Vec, ForwardCache]:
    """logits = W_c · fused(sample) + b_c, plus the cache backward needs."""
    ordered = _ordered_sample(cfg, sample)
    pre, projected = {}, {}
    if cfg.uses_projections:
        assert params.projections is not None
        fusion_inputs = []
        for m in ordered:
            p = affine(m.values, params.projections.weights[m.name], params.projections.biases[m.name])
            pre[m.name] = p
            projected[m.name] = np.maximum(p, 0.0)
            fusion_inputs.append(ModalityVector(m.name, projected[m.name]))
    else:
        fusion_inputs = ordered
    fused, fcache = fuse_forward(cfg.fusion, fusion_inputs, lmf_params=params.lmf)
    logits = affine(fused.values, params.cls_w, params.cls_b)
    cache = ForwardCache(
        sample=ordered,
        pre_activations=pre,
        projected=projected,
        fused=fused.values,
        fusion_cache=fcache,
        logits=logits,
    )
    return logits, cache


def backward(
    cfg: ModelConfig,
    params: ModelParams,
    cache: ForwardCache,
    dlogits: Vec,
) -> tuple[dict[str, np.ndarray], dict[str, Vec]]:
    """Gradients of a scalar loss (given d loss / d logits) w.r.t. every
    parameter tensor and every raw modality input."""
    grads: dict[str, np.ndarray] = {}
    grads["cls.w"] = np.outer(dlogits, cache.fused)
    grads["cls.b"] = np.asarray(dlogits, dtype=np.float64).copy()
    d_fused = params.cls_w.T @ dlogits
    fg: FusionGrads = fusion_backward(cfg.fusion, cache.fusion_cache, d_fused)
    d_inputs: dict[str, Vec] = {}
    if cfg.fusion == "lmf":
        assert fg.d_factors is not None
        for name, _ in cfg.modalities:
            grads[f"lmf.{name}.f"] = fg.d_factors[name]
        for m, d in zip(cache.sample, fg.d_inputs):
            d_inputs[m.name] = d
        return grads, d_inputs
    if cfg.uses_projections:
        assert params.projections is not None
        for m, d_out in zip(cache.sample, fg.d_inputs):
            d_pre = d_out * (cache.pre_activations[m.name] > 0.0)
            grads[f"proj.{m.name}.w"] = np.outer(d_pre, m.values)
            grads[f"proj.{m.name}.b"] = d_pre
            d_inputs[m.name] = params.projections.weights[m.name].T @ d_pre
    else:
        for m, d in zip(cache.sample, fg.d_inputs):
            d_inputs[m.name] = d
    return grads, d_inputs


def predict_topk(
    cfg: ModelConfig,
    params: ModelParams,
    sample: list[ModalityVector],
    k: int,
    vocab_labels: list[str],
) -> list[tuple[str, float]]:
    """Top-k (hs6, probability) pairs, probabilities from the full softmax.

    Sorted by descending probability; exact ties go to the lower class index.
    k is clamped to the class count.
    """
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k}")
    if len(vocab_labels) != cfg.classes:
        raise UsageError(
            f"vocabulary has {len(vocab_labels)} labels, model has {cfg.classes} classes"
        )
    logits, _ = forward(cfg, params, sample)
    probs = softmax(logits)
    order = sorted(range(cfg.classes), key=lambda i: (-probs[i], i))
    return [(vocab_labels[i], float(probs[i])) for i in order[: min(k, cfg.classes)]]


def ranked_classes(logits: Vec) -> list[int]:
    """All class indices by descending logit, ties to the lower index."""
    return sorted(range(logits.shape[0]), key=lambda i: (-logits[i], i))


# --- checkpoint serialization ---------------------------------------------


def _config_record(cfg: ModelConfig) -> str:
    mods = ",".join(f"{name}:{dim}" for name, dim in cfg.modalities)
    return (
        f"fusion={cfg.fusion} hidden={cfg.hidden} rank={cfg.rank} lmf_dim={cfg.lmf_dim} "
        f"classes={cfg.classes} seed={cfg.seed} concat_raw={int(cfg.concat_raw)} "
        f"modalities={mods}"
    )


def _parse_config_record(line: str) -> ModelConfig:
    fields = {}
    for part in line.strip().split(" "):
        if "=" not in part:
            raise CorruptionError(f"bad config field {part!r} on line 2")
        key, value = part.split("=", 1)
        fields[key] = value
    required = {"fusion", "hidden", "rank", "lmf_dim", "classes", "seed", "concat_raw", "modalities"}
    missing = required - set(fields)
    if missing:
        raise CorruptionError(f"config record missing fields: {sorted(missing)}")
    try:
        modalities = tuple(
            (name, int(dim))
            for name, dim in (m.split(":") for m in fields["modalities"].split(","))
        )
        return ModelConfig(
            modalities=modalities,
            classes=int(fields["classes"]),
            hidden=int(fields["hidden"]),
            fusion=fields["fusion"],
            rank=int(fields["rank"]),
            lmf_dim=int(fields["lmf_dim"]),
            seed=int(fields["seed"]),
            concat_raw=bool(int(fields["concat_raw"])),
        )
    except (ValueError, ConfigError) as exc:
        raise CorruptionError(f"config record is invalid: {exc}") from exc


def _tensor_blocks(cfg: ModelConfig, params: ModelParams):
    """(name, 2-d array) pairs in checkpoint order; 1-d tensors become 1 x n,
    lmf factor stacks (r, d+1, d_h) become (r*(d+1)) x d_h."""
    for name, arr in named_tensors(cfg, params).items():
        if arr.ndim == 1:
            yield name, arr.reshape(1, -1)
        elif arr.ndim == 2:
            yield name, arr
        else:
            yield name, arr.reshape(-1, arr.shape[-1])


def save_checkpoint(params: ModelParams, cfg: ModelConfig, vocab_labels: list[str], path: str) -> None:
    """Write atomically: a temp file in the target directory, then rename."""
    if len(vocab_labels) != cfg.classes:
        raise UsageError(
            f"vocabulary has {len(vocab_labels)} labels, config says {cfg.classes} classes"
        )
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}", _config_record(cfg), ",".join(vocab_labels)]
    for name, block in _tensor_blocks(cfg, params):
        lines.append(f"{name} {block.shape[0]} {block.shape[1]}")
        for row in block:
            lines.append(" ".join(_FLOAT_FMT % v for v in row))
    content = "\n".join(lines) + "\n"
    directory = os.path.dirname(os.path.abspath(path))
    try:
        fd, tmp = tempfile.mkstemp(prefix=".ckpt-", dir=directory)
    except OSError as exc:
        raise OSError(f"cannot write checkpoint to {path}: {exc}") from exc
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except OSError:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def serialize_checkpoint(params: ModelParams, cfg: ModelConfig, vocab_labels: list[str]) -> bytes:
    """The exact bytes save_checkpoint would write (used for checksums)."""
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}", _config_record(cfg), ",".join(vocab_labels)]
    for name, block in _tensor_blocks(cfg, params):
        lines.append(f"{name} {block.shape[0]} {block.shape[1]}")
        for row in block:
            lines.append(" ".join(_FLOAT_FMT % v for v in row))
    return ("\n".join(lines) + "\n").encode("utf-8")


def load_checkpoint(path: str) -> tuple[ModelParams, ModelConfig, list[str]]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise CorruptionError(f"{path}: empty checkpoint file")
    header = lines[0].split(" ")
    if len(header) != 2 or header[0] != CHECKPOINT_MAGIC:
        raise CorruptionError(f"{path}: line 1: not a {CHECKPOINT_MAGIC} file")
    if header[1] != CHECKPOINT_VERSION:
        raise VersionError(
            f"{path}: unsupported checkpoint version {header[1]!r} (supported: {CHECKPOINT_VERSION})"
        )
    if len(lines) < 3:
        raise CorruptionError(f"{path}: truncated before vocabulary line")
    cfg = _parse_config_record(lines[1])
    vocab_labels = lines[2].split(",") if lines[2] else []
    if len(vocab_labels) != cfg.classes:
        raise CorruptionError(
            f"{path}: vocabulary has {len(vocab_labels)} labels, config says {cfg.classes}"
        )
    # template params so shapes are known, then fill from the file
    template = init_model(cfg)
    expected = dict(_tensor_blocks(cfg, template))
    tensors: dict[str, np.ndarray] = {}
    ln = 3
    for name, block in expected.items():
        if ln >= len(lines):
            raise CorruptionError(f"{path}: truncated, expected tensor {name!r} at line {ln + 1}")
        head = lines[ln].split(" ")
        if len(head) != 3:
            raise CorruptionError(f"{path}: line {ln + 1}: expected '<name> <rows> <cols>'")
        got_name, rows_s, cols_s = head
        if got_name != name:
            raise CorruptionError(f"{path}: line {ln + 1}: expected tensor {name!r}, got {got_name!r}")
        try:
            rows, cols = int(rows_s), int(cols_s)
        except ValueError as exc:
            raise CorruptionError(f"{path}: line {ln + 1}: bad shape: {exc}") from exc
        if (rows, cols) != block.shape:
            raise CorruptionError(
                f"{path}: line {ln + 1}: tensor {name!r} has shape {rows}x{cols}, "
                f"config implies {block.shape[0]}x{block.shape[1]}"
            )
        ln += 1
        data = np.empty((rows, cols))
        for r in range(rows):
            if ln >= len(lines):
                raise CorruptionError(f"{path}: truncated inside tensor {name!r}")
            values = lines[ln].split(" ")
            if len(values) != cols:
                raise CorruptionError(
                    f"{path}: line {ln + 1}: row has {len(values)} values, expected {cols}"
                )
            try:
                data[r] = [float(v) for v in values]
            except ValueError as exc:
                raise CorruptionError(f"{path}: line {ln + 1}: bad float: {exc}") from exc
            ln += 1
        full_shape = named_tensors(cfg, template)[name].shape
        tensors[name] = data.reshape(full_shape)
    if ln != len(lines):
        raise CorruptionError(f"{path}: {len(lines) - ln} unexpected trailing line(s)")
    params = replace_tensors(cfg, template, tensors)
    return params, cfg, vocab_labels
