"""Retrieval scoring: average precision and NMRR, per query and aggregated.

NMRR follows the MPEG-7 convention: relevant items ranked beyond the window
K = min(4*NG, 2*GTM) are penalized at 1.25*K, and the modified retrieval
rank is normalized so 0 is a perfect run and 1 the worst possible.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DataError
from .retrieval import DescriptorIndex, RankedList
from .tensor_store import DatasetManifest


@dataclass(eq=False)
class QueryScore:
    query_id: str
    ng: int
    nmrr: float
    ave_pr: float


@dataclass(eq=False)
class EvalReport:
    dataset_id: str
    fingerprint: str
    metric: str
    per_query: list      # [QueryScore, ...] in query_id order
    anmrr: float
    map: float
    per_class: dict      # class -> {"anmrr", "map", "n_queries"}


def _relevant_ranks(ranked: RankedList, relevant) -> list:
    """1-based ranks of the relevant ids, in ranking order."""
    relevant = set(relevant)
    if not relevant:
        raise DataError(f"empty relevant set for query {ranked.query_id!r}")
    ranks = [pos for pos, (image_id, _) in enumerate(ranked.items, start=1)
             if image_id in relevant]
    if len(ranks) != len(relevant):
        raise DataError(
            f"ranking for query {ranked.query_id!r} is missing "
            f"{len(relevant) - len(ranks)} relevant ids"
        )
    return ranks


def average_precision(ranked: RankedList, relevant) -> float:
    """Mean of precision at each relevant item's rank, in [0, 1]."""
    ranks = _relevant_ranks(ranked, relevant)
    return sum(j / r for j, r in enumerate(ranks, start=1)) / len(ranks)


def nmrr(ranked: RankedList, relevant, gtm: int) -> float:
    """Normalized modified retrieval rank in [0, 1] (0 = perfect).

    ``gtm`` is the maximum ground-truth size over all evaluated queries; it
    sets the penalty window K = min(4*NG, 2*gtm).
    """
    ranks = _relevant_ranks(ranked, relevant)
    ng = len(ranks)
    if gtm < ng:
        raise DataError(f"gtm={gtm} smaller than NG={ng}")
    k = min(4 * ng, 2 * gtm)
    penalized = [r if r <= k else 1.25 * k for r in ranks]
    avr = sum(penalized) / ng
    mrr = avr - 0.5 - ng / 2
    denom = 1.25 * k - 0.5 - ng / 2
    return min(max(mrr / denom, 0.0), 1.0)


def evaluate_run(index: DescriptorIndex, manifest: DatasetManifest,
                 ranked_lists) -> EvalReport:
    """Score a set of ranked lists against class-label ground truth.

    Ground truth for each query is every image sharing its class label,
    the query itself excluded. Aggregates are unweighted means over queries.
    """
    ranked_lists = sorted(ranked_lists, key=lambda r: r.query_id)
    if not ranked_lists:
        raise DataError("no ranked lists to evaluate")

    members = {}
    for image_id, label in manifest.class_of.items():
        members.setdefault(label, set()).add(image_id)

    queried_classes = set()
    for r in ranked_lists:
        if r.query_id not in manifest.class_of:
            raise DataError(f"query {r.query_id!r} not in manifest")
        queried_classes.add(manifest.class_of[r.query_id])
    gtm = max(len(members[c]) - 1 for c in queried_classes)

    per_query = []
    for r in ranked_lists:
        label = manifest.class_of[r.query_id]
        relevant = members[label] - {r.query_id}
        if not relevant:
            raise DataError(f"query {r.query_id!r} has no class peers")
        per_query.append(QueryScore(
            query_id=r.query_id,
            ng=len(relevant),
            nmrr=nmrr(r, relevant, gtm),
            ave_pr=average_precision(r, relevant),
        ))

    anmrr = sum(q.nmrr for q in per_query) / len(per_query)
    mean_ap = sum(q.ave_pr for q in per_query) / len(per_query)

    per_class = {}
    for label in sorted(queried_classes):
        scores = [q for q in per_query if manifest.class_of[q.query_id] == label]
        per_class[label] = {
            "anmrr": sum(q.nmrr for q in scores) / len(scores),
            "map": sum(q.ave_pr for q in scores) / len(scores),
            "n_queries": len(scores),
        }

    return EvalReport(
        dataset_id=manifest.dataset_id,
        fingerprint=index.fingerprint,
        metric=index.metric.value,
        per_query=per_query,
        anmrr=anmrr,
        map=mean_ap,
        per_class=per_class,
    )


def report_to_dict(report: EvalReport) -> dict:
    return {
        "dataset_id": report.dataset_id,
        "config": {"fingerprint": report.fingerprint, "metric": report.metric},
        "per_query": [
            {"query_id": q.query_id, "NG": q.ng, "nmrr": q.nmrr, "ave_pr": q.ave_pr}
            for q in report.per_query
        ],
        "anmrr": report.anmrr,
        "map": report.map,
        "per_class": report.per_class,
    }


def render_report_text(report: EvalReport) -> str:
    """Human-readable summary table."""
    lines = [
        f"dataset: {report.dataset_id}",
        f"metric:  {report.metric}",
        f"queries: {len(report.per_query)}",
        f"ANMRR:   {report.anmrr:.4f}",
        f"MAP(%):  {100.0 * report.map:.2f}",
        "",
        f"{'class':<24}{'ANMRR':>8}{'MAP(%)':>9}{'queries':>9}",
    ]
    for label, row in report.per_class.items():
        lines.append(
            f"{label:<24}{row['anmrr']:>8.4f}{100.0 * row['map']:>9.2f}"
            f"{row['n_queries']:>9d}"
        )
    return "\n".join(lines) + "\n"
