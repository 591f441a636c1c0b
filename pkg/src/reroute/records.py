"""Line-delimited record files for models, reference sets and sample splits.

Every file starts with one header line fixing the dimensions, followed by one
JSON object per line. Floats are written with Python's shortest round-trip
representation, so reading a file back reproduces every value bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .core import InvalidInputError, Label, ModelInput, ReferenceEntry, RoutingWeights, Sample, TaskEmbedding
from .refindex import ReferenceSet, seal
from .toymoe import ExpertBank, Router


class RecordFormatError(InvalidInputError):
    pass


def atomic_write_text(path, text: str) -> None:
    """Write to a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_line(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def write_jsonl(path, header: dict, records) -> None:
    lines = [dumps_line(header)] + [dumps_line(r) for r in records]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_jsonl(path, kind: str):
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise RecordFormatError(f"{path}: empty record file")
    try:
        header = json.loads(lines[0])
        records = [json.loads(ln) for ln in lines[1:]]
    except json.JSONDecodeError as exc:
        raise RecordFormatError(f"{path}: malformed record: {exc}") from exc
    if header.get("kind") != kind:
        raise RecordFormatError(f"{path}: expected a {kind!r} file, found {header.get('kind')!r}")
    return header, records


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# -- model ---------------------------------------------------------------

def write_model(path, bank: ExpertBank, router: Router | None = None) -> None:
    header = {"kind": "model", "D": bank.feature_dim, "E": bank.expert_count, "C": bank.class_count}
    recs = [{"expert": j, "W": bank.W[j].tolist(), "b": bank.b[j].tolist()}
            for j in range(bank.expert_count)]
    if router is not None:
        recs.append({"router": True, "R": router.R.tolist(), "bias": router.bias.tolist()})
    write_jsonl(path, header, recs)


def read_model(path):
    """Returns ``(bank, router)``; router is None if the file has none."""
    header, recs = read_jsonl(path, "model")
    experts = sorted((r for r in recs if "expert" in r), key=lambda r: r["expert"])
    if len(experts) != header["E"]:
        raise RecordFormatError(f"{path}: header says E={header['E']}, found {len(experts)} experts")
    bank = ExpertBank(np.array([r["W"] for r in experts]), np.array([r["b"] for r in experts]))
    if (bank.feature_dim, bank.class_count) != (header["D"], header["C"]):
        raise RecordFormatError(f"{path}: expert shapes disagree with header")
    router = None
    for r in recs:
        if r.get("router"):
            router = Router(np.array(r["R"]), np.array(r["bias"]))
    return bank, router


# -- samples and reference sets ------------------------------------------

def _sample_header(kind, D, De, E, C, T) -> dict:
    return {"kind": kind, "D": D, "D_e": De, "E": E, "C": C, "T": T}


def _sample_record(sample_id, x: ModelInput, emb: TaskEmbedding, label: Label, routing=None) -> dict:
    return {
        "sample_id": sample_id,
        "features": x.features.tolist(),
        "embedding": emb.values.tolist(),
        "routing": None if routing is None else routing.weights.tolist(),
        "label": label.class_id,
        "task_type": x.task_type,
    }


def write_reference_set(path, refset: ReferenceSet, class_count: int, task_type_count: int) -> None:
    e0 = refset[0]
    header = _sample_header("reference_set", e0.input.features.size, refset.embedding_dim,
                            refset.expert_count, class_count, task_type_count)
    write_jsonl(path, header, (_sample_record(e.sample_id, e.input, e.embedding, e.label, e.routing)
                               for e in refset.entries))


def read_reference_set(path, bank: ExpertBank) -> ReferenceSet:
    """Load and re-verify a reference set against ``bank``."""
    header, recs = read_jsonl(path, "reference_set")
    entries = []
    for r in recs:
        x = ModelInput(r["features"], r["task_type"])
        entries.append(ReferenceEntry.verified(
            bank, x, TaskEmbedding(r["embedding"]), RoutingWeights(r["routing"]),
            Label(r["label"]), r["sample_id"]))
    refset = seal(entries)
    if (refset.embedding_dim, refset.expert_count) != (header["D_e"], header["E"]):
        raise RecordFormatError(f"{path}: entries disagree with header")
    return refset


def write_samples(path, samples, D, De, E, C, T) -> None:
    header = _sample_header("samples", D, De, E, C, T)
    write_jsonl(path, header, (_sample_record(s.sample_id, s.input, s.embedding, s.label) for s in samples))


def read_samples(path) -> tuple:
    _, recs = read_jsonl(path, "samples")
    return tuple(
        Sample(r["sample_id"], ModelInput(r["features"], r["task_type"]),
               TaskEmbedding(r["embedding"]), Label(r["label"]))
        for r in recs
    )
