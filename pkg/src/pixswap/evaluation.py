"""Cross-clothes / same-clothes retrieval protocols and CMC/mAP metrics.

The gallery is ranked per query by ascending Euclidean distance; relevance
is identity-only (the clothes constraint lives in protocol construction,
carried by the manifest's split field). Distance ties are broken by gallery
index so results reproduce across implementations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .ingest import Dataset


class ProtocolError(Exception):
    """Manifest splits violate the protocol invariants."""


@dataclass(frozen=True)
class Protocol:
    query_indices: list
    gallery_indices: list
    mode: str  # "cross_clothes" or "same_clothes"


@dataclass
class EvalResult:
    rank1: float
    rank5: float
    rank10: float
    mean_ap: float
    per_query_ap: list = field(default_factory=list)

    def to_json(self, mode, num_query, num_gallery):
        return json.dumps(
            {
                "mode": mode,
                "rank1": self.rank1,
                "rank5": self.rank5,
                "rank10": self.rank10,
                "mAP": self.mean_ap,
                "num_query": num_query,
                "num_gallery": num_gallery,
            },
            indent=2,
            sort_keys=True,
        )


def build_protocol(dataset: Dataset, mode: str) -> Protocol:
    if mode not in ("cross_clothes", "same_clothes"):
        raise ValueError(f"unknown protocol mode {mode!r}")
    gallery = dataset.indices_for_split("gallery")
    query_split = "query_cross" if mode == "cross_clothes" else "query_same"
    query = dataset.indices_for_split(query_split)
    if not query:
        raise ProtocolError(f"empty {query_split} split: evaluation undefined")
    if not gallery:
        raise ProtocolError("empty gallery split: evaluation undefined")

    gallery_pairs = {
        (dataset.records[i].identity, dataset.records[i].clothes_id) for i in gallery
    }
    gallery_ids = {dataset.records[i].identity for i in gallery}
    offending = []
    for i in query:
        rec = dataset.records[i]
        if mode == "cross_clothes":
            if (rec.identity, rec.clothes_id) in gallery_pairs:
                offending.append(rec)
        else:
            if (rec.identity, rec.clothes_id) not in gallery_pairs:
                offending.append(rec)
        if rec.identity not in gallery_ids:
            offending.append(rec)
    if offending:
        raise ProtocolError(
            f"{mode} invariant violated by {len(offending)} record(s), "
            f"first: {offending[0]}"
        )
    return Protocol(query_indices=query, gallery_indices=gallery, mode=mode)


def evaluate(
    query_embeddings: np.ndarray,
    query_identities,
    gallery_embeddings: np.ndarray,
    gallery_identities,
    ranks=(1, 5, 10),
) -> EvalResult:
    """CMC Rank-k and mAP of Euclidean-ranked retrieval.

    AP follows the re-ID convention: mean over relevant hits of
    precision-at-hit, divided by the number of relevant gallery records."""
    q = np.asarray(query_embeddings, dtype=np.float64)
    g = np.asarray(gallery_embeddings, dtype=np.float64)
    q_ids = np.asarray(query_identities)
    g_ids = np.asarray(gallery_identities)
    num_g = g.shape[0]

    sq_q = np.sum(q**2, axis=1)[:, None]
    sq_g = np.sum(g**2, axis=1)[None, :]
    dist = np.maximum(sq_q + sq_g - 2.0 * (q @ g.T), 0.0)
    order = np.argsort(dist, axis=1, kind="stable")  # stable: ties by gallery index

    hits = np.zeros(len(ranks))
    per_query_ap = []
    for qi in range(q.shape[0]):
        relevant = (g_ids[order[qi]] == q_ids[qi]).astype(np.float64)
        num_rel = relevant.sum()
        if num_rel == 0:
            raise ProtocolError(f"query {qi} has no relevant gallery record")
        first_hit = int(np.argmax(relevant))
        for j, k in enumerate(ranks):
            if first_hit < k:
                hits[j] += 1
        precision_at = np.cumsum(relevant) / np.arange(1, num_g + 1)
        per_query_ap.append(float((precision_at * relevant).sum() / num_rel))

    n_q = q.shape[0]
    return EvalResult(
        rank1=float(hits[0] / n_q),
        rank5=float(hits[1] / n_q),
        rank10=float(hits[2] / n_q),
        mean_ap=float(np.mean(per_query_ap)),
        per_query_ap=per_query_ap,
    )


def evaluate_protocol(embeddings, dataset: Dataset, protocol: Protocol) -> EvalResult:
    """evaluate() driven by a protocol; embeddings indexed by record index."""
    q = np.stack([np.asarray(embeddings[i]) for i in protocol.query_indices])
    g = np.stack([np.asarray(embeddings[i]) for i in protocol.gallery_indices])
    q_ids = [dataset.records[i].identity for i in protocol.query_indices]
    g_ids = [dataset.records[i].identity for i in protocol.gallery_indices]
    return evaluate(q, q_ids, g, g_ids)


def format_table(results: dict) -> str:
    """Human-readable summary; results maps mode -> EvalResult."""
    lines = [f"{'protocol':<14} {'R1':>7} {'R5':>7} {'R10':>7} {'mAP':>7}"]
    for mode, res in results.items():
        lines.append(
            f"{mode:<14} {res.rank1:7.4f} {res.rank5:7.4f} "
            f"{res.rank10:7.4f} {res.mean_ap:7.4f}"
        )
    return "\n".join(lines)
