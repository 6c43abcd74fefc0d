"""VQA evaluation harness: normalized records, metrics, dataset statistics.

Closed-set questions score 1 when the normalized prediction equals the
normalized answer as a token list; the reported accuracy is the mean over
closed items. Open-set questions score the fraction of unique ground-truth
tokens present in the prediction (set recall). Normalization lowercases,
maps every character outside [a-z0-9] to a space, and splits on whitespace.

Aggregates are computed with math.fsum over per-item scores, so shuffling
items and predictions together can never change a reported number.

Dataset converters for the three public source formats (VQA-RAD, SLAKE,
PathVQA) map raw JSON to VqaItem behind one ingestion entry point; SLAKE is
filtered to its English subset.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal, Sequence

from .errors import (
    EmptyClosedSetError,
    EmptyGroundTruthError,
    MalformedRecordError,
    MissingPredictionError,
)

AnswerType = Literal["OPEN", "CLOSED"]
Split = Literal["train", "val", "test"]

SPLITS = ("train", "val", "test")

_NON_ALNUM = re.compile(r"[^a-z0-9]+")


@dataclass(frozen=True)
class VqaItem:
    qid: str
    image: str
    question: str
    answer: str
    answer_type: AnswerType
    split: Split

    def __post_init__(self):
        if self.answer_type not in ("OPEN", "CLOSED"):
            raise ValueError(f"qid {self.qid}: bad answer_type {self.answer_type!r}")
        if self.split not in SPLITS:
            raise ValueError(f"qid {self.qid}: bad split {self.split!r}")
        if not self.answer:
            raise ValueError(f"qid {self.qid}: empty answer")


@dataclass(frozen=True)
class Prediction:
    qid: str
    text: str


@dataclass
class EvalReport:
    closed_accuracy: float | None
    open_recall: float | None
    n_closed: int
    n_open: int
    per_item: list[tuple[str, float]]

    @property
    def average(self) -> float | None:
        cols = [v for v in (self.open_recall, self.closed_accuracy) if v is not None]
        return sum(cols) / len(cols) if cols else None


def normalize(text: str) -> list[str]:
    """Lowercase, strip non-alphanumerics to spaces, split, drop empties."""
    return [t for t in _NON_ALNUM.sub(" ", text.lower()).split() if t]


def open_recall(pred: str, answer: str) -> float:
    """Fraction of unique normalized answer tokens present in the prediction."""
    truth = set(normalize(answer))
    if not truth:
        raise EmptyGroundTruthError(f"answer {answer!r} has no tokens after normalization")
    return len(truth & set(normalize(pred))) / len(truth)


def _closed_score(pred: str, answer: str) -> float:
    return 1.0 if normalize(pred) == normalize(answer) else 0.0


def _pred_map(preds: Sequence[Prediction]) -> dict[str, str]:
    return {p.qid: p.text for p in preds}


def closed_accuracy(preds: Sequence[Prediction], items: Sequence[VqaItem]) -> float:
    """Mean exact-token-match score over the CLOSED items."""
    closed = [it for it in items if it.answer_type == "CLOSED"]
    if not closed:
        raise EmptyClosedSetError("no CLOSED items to score")
    by_qid = _pred_map(preds)
    missing = [it.qid for it in closed if it.qid not in by_qid]
    if missing:
        raise MissingPredictionError(missing)
    scores = sorted((it.qid, _closed_score(by_qid[it.qid], it.answer)) for it in closed)
    return math.fsum(s for _, s in scores) / len(scores)


def evaluate(preds: Sequence[Prediction], items: Sequence[VqaItem]) -> EvalReport:
    """Score every item and aggregate into closed accuracy and open recall."""
    by_qid = _pred_map(preds)
    missing = [it.qid for it in items if it.qid not in by_qid]
    if missing:
        raise MissingPredictionError(missing)

    per_item: list[tuple[str, float]] = []
    open_scores: list[tuple[str, float]] = []
    closed_scores: list[tuple[str, float]] = []
    for it in items:
        if it.answer_type == "CLOSED":
            score = _closed_score(by_qid[it.qid], it.answer)
            closed_scores.append((it.qid, score))
        else:
            score = open_recall(by_qid[it.qid], it.answer)
            open_scores.append((it.qid, score))
        per_item.append((it.qid, score))

    open_scores.sort()
    closed_scores.sort()
    return EvalReport(
        closed_accuracy=(
            math.fsum(s for _, s in closed_scores) / len(closed_scores)
            if closed_scores
            else None
        ),
        open_recall=(
            math.fsum(s for _, s in open_scores) / len(open_scores)
            if open_scores
            else None
        ),
        n_closed=len(closed_scores),
        n_open=len(open_scores),
        per_item=per_item,
    )


def _cell(value: float | None) -> str:
    return "/" if value is None else f"{100.0 * value:.2f}"


def render_report(report: EvalReport) -> str:
    """Plain-text table with Open / Closed / Average columns ("/" when absent)."""
    header = f"{'Open':>8}  {'Closed':>8}  {'Average':>8}"
    row = f"{_cell(report.open_recall):>8}  {_cell(report.closed_accuracy):>8}  {_cell(report.average):>8}"
    counts = f"open items: {report.n_open}   closed items: {report.n_closed}"
    return "\n".join([header, row, counts]) + "\n"


def report_to_json(report: EvalReport) -> dict:
    return {
        "closed_accuracy": report.closed_accuracy,
        "open_recall": report.open_recall,
        "average": report.average,
        "n_closed": report.n_closed,
        "n_open": report.n_open,
        "per_item": [[qid, score] for qid, score in report.per_item],
    }


# --- dataset statistics -------------------------------------------------------


def dataset_stats(items: Sequence[VqaItem]) -> list[dict]:
    """Per split (train/val/test order): QA pairs, open, closed, distinct images."""
    rows = []
    for split in SPLITS:
        subset = [it for it in items if it.split == split]
        if not subset:
            continue
        rows.append(
            {
                "split": split,
                "qa_pairs": len(subset),
                "open": sum(1 for it in subset if it.answer_type == "OPEN"),
                "closed": sum(1 for it in subset if it.answer_type == "CLOSED"),
                "images": len({it.image for it in subset}),
            }
        )
    return rows


def _record_domain(rec: dict) -> str:
    domain = rec.get("domain")
    if isinstance(domain, str) and domain:
        return domain
    if isinstance(domain, dict):
        active = sorted(k for k, v in domain.items() if v)
        if active:
            return active[0]
    return "unknown"


def instruct_stats(records: Sequence[dict]) -> list[dict]:
    """Per domain: distinct images and QA turns (one QA = human+assistant pair)."""
    images: dict[str, set[str]] = {}
    qas: dict[str, int] = {}
    for idx, rec in enumerate(records):
        try:
            image = rec["image"]
            convs = rec["conversations"]
            pairs = len(convs) // 2
        except (KeyError, TypeError) as exc:
            raise MalformedRecordError(f"record {idx}: {exc}") from exc
        domain = _record_domain(rec)
        images.setdefault(domain, set()).add(image)
        qas[domain] = qas.get(domain, 0) + pairs
    return [
        {"domain": d, "images": len(images[d]), "qa_turns": qas[d]}
        for d in sorted(images)
    ]


def render_counts_table(rows: Sequence[dict]) -> str:
    """Fixed-width text table for the stats subcommand."""
    if not rows:
        return "(no rows)\n"
    cols = list(rows[0].keys())
    widths = {c: max(len(c), *(len(str(r[c])) for r in rows)) for c in cols}
    lines = ["  ".join(f"{c:>{widths[c]}}" for c in cols)]
    for r in rows:
        lines.append("  ".join(f"{str(r[c]):>{widths[c]}}" for c in cols))
    return "\n".join(lines) + "\n"


# --- readers / writers ---------------------------------------------------------


def write_vqa_jsonl(path: str | Path, items: Iterable[VqaItem]) -> None:
    lines = [
        json.dumps(
            {
                "qid": it.qid,
                "image": it.image,
                "question": it.question,
                "answer": it.answer,
                "answer_type": it.answer_type,
                "split": it.split,
            },
            ensure_ascii=False,
        )
        for it in items
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_vqa_jsonl(path: str | Path) -> list[VqaItem]:
    items = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            items.append(
                VqaItem(
                    qid=str(obj["qid"]),
                    image=str(obj["image"]),
                    question=str(obj["question"]),
                    answer=str(obj["answer"]),
                    answer_type=obj["answer_type"],
                    split=obj["split"],
                )
            )
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise MalformedRecordError(f"{path}:{lineno}: {exc}") from exc
    return items


def read_predictions(path: str | Path) -> list[Prediction]:
    preds = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            preds.append(Prediction(qid=str(obj["qid"]), text=str(obj["text"])))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise MalformedRecordError(f"{path}:{lineno}: {exc}") from exc
    return preds


# --- source-format converters ----------------------------------------------------


def convert_vqa_rad(raw: Sequence[dict]) -> list[VqaItem]:
    """VQA-RAD single-file JSON; test membership comes from phrase_type."""
    items = []
    for rec in raw:
        phrase = str(rec.get("phrase_type", ""))
        items.append(
            VqaItem(
                qid=str(rec["qid"]),
                image=str(rec["image_name"]),
                question=str(rec["question"]),
                answer=str(rec["answer"]),
                answer_type=str(rec["answer_type"]).strip().upper(),
                split="test" if phrase.startswith("test") else "train",
            )
        )
    return items


def convert_slake(raw: Sequence[dict], split: Split) -> list[VqaItem]:
    """SLAKE per-split JSON; only the English subset (q_lang == "en") is kept."""
    items = []
    for rec in raw:
        if rec.get("q_lang") != "en":
            continue
        items.append(
            VqaItem(
                qid=str(rec["qid"]),
                image=str(rec["img_name"]),
                question=str(rec["question"]),
                answer=str(rec["answer"]),
                answer_type=str(rec["answer_type"]).strip().upper(),
                split=split,
            )
        )
    return items


def convert_pathvqa(raw: Sequence[dict], split: Split) -> list[VqaItem]:
    """PathVQA records; yes/no answers are CLOSED, everything else OPEN."""
    items = []
    for idx, rec in enumerate(raw):
        answer = str(rec["answer"])
        declared = rec.get("answer_type")
        answer_type = (
            str(declared).strip().upper()
            if declared
            else ("CLOSED" if answer.strip().lower() in ("yes", "no") else "OPEN")
        )
        items.append(
            VqaItem(
                qid=str(rec.get("qid", f"{split}_{idx}")),
                image=str(rec["image"]),
                question=str(rec["question"]),
                answer=answer,
                answer_type=answer_type,
                split=split,
            )
        )
    return items


def load_vqa_dataset(
    fmt: str, path: str | Path, split: Split | None = None
) -> list[VqaItem]:
    """Single ingestion entry point over all supported source formats.

    fmt "jsonl" reads the normalized VqaItem JSON-lines format; "vqa_rad"
    reads the single-file release (split derived per record); "slake" and
    "pathvqa" read one raw per-split JSON file and need the split argument.
    """
    if fmt == "jsonl":
        return read_vqa_jsonl(path)
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if fmt == "vqa_rad":
        return convert_vqa_rad(raw)
    if fmt in ("slake", "pathvqa"):
        if split is None:
            raise ValueError(f"format {fmt!r} needs an explicit split")
        return convert_slake(raw, split) if fmt == "slake" else convert_pathvqa(raw, split)
    raise ValueError(f"unknown dataset format {fmt!r}")
