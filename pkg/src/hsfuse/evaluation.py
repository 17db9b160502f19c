"""Top-k accuracy, hierarchical HS2/HS4 accuracy, and report generation.

A report carries top-k accuracy for the requested k values (1, 3, 5 by
default), top-1 accuracy at each prefix level of the code hierarchy, and
per-class support/hit counts. It serializes to a small `key=value` record
document that parses back losslessly, and renders as a fixed-width table
with one column per k.
"""

import re
from dataclasses import dataclass, field

from .data import HS6_RE
from .errors import UsageError, ValidationError
from .fusion import ModalityVector
from .model import ModelConfig, ModelParams, forward, ranked_classes

Sample = tuple[list[ModalityVector], int]


@dataclass
class EvalReport:
    split: str
    n: int
    topk: dict[int, float]  # k -> accuracy
    hs2_top1: float
    hs4_top1: float
    hs6_top1: float
    per_class_support: dict[str, int] = field(default_factory=dict)
    per_class_hits: dict[str, int] = field(default_factory=dict)


def top_k_accuracy(
    rankings: list[list[int]], labels: list[int], k: int, classes: int | None = None
) -> float:
    """Fraction of samples whose label is among the first min(k, C) ranked classes.

    `classes` pins C for the clamping rule; when omitted, each ranking is
    assumed long enough (>= min(k, C)) and clamped to its own length.
    """
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k}")
    if len(rankings) != len(labels):
        raise UsageError(f"{len(rankings)} rankings vs {len(labels)} labels")
    if not rankings:
        raise UsageError("cannot score an empty prediction set")
    hits = 0
    for ranking, label in zip(rankings, labels):
        if len(set(ranking)) != len(ranking):
            raise UsageError("ranking contains repeated classes")
        take = min(k, classes) if classes is not None else k
        if classes is not None and len(ranking) < take:
            raise UsageError(f"ranking of length {len(ranking)} cannot answer top-{take}")
        if label in ranking[:take]:
            hits += 1
    return hits / len(labels)


def hierarchical_accuracy(pred: list[str], labels: list[str], level: int) -> float:
    """Fraction of predictions whose first `level` digits match the label's."""
    if level not in (2, 4, 6):
        raise UsageError(f"level must be 2, 4 or 6, got {level}")
    if len(pred) != len(labels) or not pred:
        raise UsageError(f"{len(pred)} predictions vs {len(labels)} labels")
    for code in list(pred) + list(labels):
        if not HS6_RE.match(code):
            raise ValidationError(f"malformed hs6 code {code!r}")
    hits = sum(1 for p, t in zip(pred, labels) if p[:level] == t[:level])
    return hits / len(labels)


def evaluate_model(
    cfg: ModelConfig,
    params: ModelParams,
    samples: list[Sample],
    vocab_labels: list[str],
    ks: tuple[int, ...] = (1, 3, 5),
    split: str = "test",
) -> EvalReport:
    if not samples:
        raise UsageError(f"split {split!r} is empty")
    if len(vocab_labels) != cfg.classes:
        raise UsageError(
            f"vocabulary has {len(vocab_labels)} labels, model has {cfg.classes} classes"
        )
    rankings, labels = [], []
    for sample, label in samples:
        if not 0 <= label < cfg.classes:
            raise UsageError(f"label index {label} outside the {cfg.classes}-class vocabulary")
        logits, _ = forward(cfg, params, sample)
        rankings.append(ranked_classes(logits))
        labels.append(label)
    topk = {k: top_k_accuracy(rankings, labels, k, classes=cfg.classes) for k in sorted(ks)}
    pred_codes = [vocab_labels[r[0]] for r in rankings]
    label_codes = [vocab_labels[t] for t in labels]
    support: dict[str, int] = {}
    hits: dict[str, int] = {}
    for code in sorted(set(label_codes)):
        support[code] = 0
        hits[code] = 0
    for p, t in zip(pred_codes, label_codes):
        support[t] += 1
        if p == t:
            hits[t] += 1
    return EvalReport(
        split=split,
        n=len(samples),
        topk=topk,
        hs2_top1=hierarchical_accuracy(pred_codes, label_codes, 2),
        hs4_top1=hierarchical_accuracy(pred_codes, label_codes, 4),
        hs6_top1=hierarchical_accuracy(pred_codes, label_codes, 6),
        per_class_support=support,
        per_class_hits=hits,
    )


# --- report (de)serialization ----------------------------------------------

_REPORT_MAGIC = "#evalreport v1"


def report_to_text(report: EvalReport) -> str:
    lines = [_REPORT_MAGIC, f"split={report.split}", f"n={report.n}"]
    for k in sorted(report.topk):
        lines.append(f"top{k}={report.topk[k]!r}")
    lines.append(f"hs2_top1={report.hs2_top1!r}")
    lines.append(f"hs4_top1={report.hs4_top1!r}")
    lines.append(f"hs6_top1={report.hs6_top1!r}")
    for code in sorted(report.per_class_support):
        lines.append(f"class.{code}={report.per_class_support[code]},{report.per_class_hits[code]}")
    return "\n".join(lines) + "\n"


def report_from_text(text: str) -> EvalReport:
    lines = text.splitlines()
    if not lines or lines[0] != _REPORT_MAGIC:
        raise ValidationError(f"not an evalreport document (line 1: {lines[:1]!r})")
    fields: dict[str, str] = {}
    support: dict[str, int] = {}
    hits: dict[str, int] = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        key, value = line.split("=", 1)
        if key.startswith("class."):
            code = key[len("class.") :]
            s, h = value.split(",")
            support[code], hits[code] = int(s), int(h)
        else:
            fields[key] = value
    topk = {}
    for key, value in fields.items():
        m = re.match(r"^top([0-9]+)$", key)
        if m:
            topk[int(m.group(1))] = float(value)
    return EvalReport(
        split=fields["split"],
        n=int(fields["n"]),
        topk=topk,
        hs2_top1=float(fields["hs2_top1"]),
        hs4_top1=float(fields["hs4_top1"]),
        hs6_top1=float(fields["hs6_top1"]),
        per_class_support=support,
        per_class_hits=hits,
    )


def render_table(report: EvalReport, title: str = "") -> str:
    """Fixed-width accuracy table, one top-k column per requested k."""
    ks = sorted(report.topk)
    head = ["split", "n"] + [f"k={k}" for k in ks] + ["HS2", "HS4", "HS6"]
    row = (
        [report.split, str(report.n)]
        + [f"{report.topk[k]:.3f}" for k in ks]
        + [f"{report.hs2_top1:.3f}", f"{report.hs4_top1:.3f}", f"{report.hs6_top1:.3f}"]
    )
    widths = [max(len(h), len(r)) for h, r in zip(head, row)]
    lines = []
    if title:
        lines.append(title)
    lines.append("  ".join(h.ljust(w) for h, w in zip(head, widths)))
    lines.append("  ".join(r.ljust(w) for r, w in zip(row, widths)))
    return "\n".join(lines)


def render_comparison(named_reports: list[tuple[str, EvalReport]]) -> str:
    """Multi-run table; per column the best value is marked `*`, second `+`."""
    if not named_reports:
        raise UsageError("nothing to compare")
    ks = sorted(named_reports[0][1].topk)
    columns = [f"k={k}" for k in ks]

    def values(report):
        return [report.topk[k] for k in ks]

    marks: list[list[str]] = [["" for _ in columns] for _ in named_reports]
    for col in range(len(columns)):
        ordered = sorted(
            range(len(named_reports)), key=lambda i: -values(named_reports[i][1])[col]
        )
        if ordered:
            marks[ordered[0]][col] = "*"
        if len(ordered) > 1:
            marks[ordered[1]][col] = "+"
    name_w = max(len("run"), max(len(name) for name, _ in named_reports))
    header = "run".ljust(name_w) + "  " + "  ".join(c.rjust(8) for c in columns)
    lines = [header]
    for i, (name, report) in enumerate(named_reports):
        cells = [
            f"{v:.3f}{marks[i][c] or ' '}".rjust(8) for c, v in enumerate(values(report))
        ]
        lines.append(name.ljust(name_w) + "  " + "  ".join(cells))
    return "\n".join(lines)
