"""HTTP service backing the annotator UI.

Serves ranked prototypes and their member patches, accepts label
submissions, and tracks per-part progress. Labels land in an append-only
JSON-lines store (last write wins per prototype+part); reads always see
the latest submitted label.
"""

import datetime
import json
import os
import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse
from pydantic import BaseModel, Field

from .prototypes import AnnotationRecord, rank_prototypes

STORE_ENV = "PARTGUIDE_STORE"


class LabelSubmission(BaseModel):
    prototype_id: int
    part_class: str
    bulk_label: int = Field(ge=0, le=1)
    exceptions: list[int] = []
    annotator: str = ""


class LabelStore:
    """Append-only JSONL store; one writer lock serializes label writes."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, record):
        line = json.dumps(record.to_json()) + "\n"
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a") as f:
                f.write(line)
                f.flush()
                os.fsync(f.fileno())

    def latest(self):
        """Last-write-wins view keyed by (prototype_id, part_class)."""
        current = {}
        if not self.path.exists():
            return current
        with open(self.path) as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                record = AnnotationRecord.from_json(json.loads(line))
                current[(record.prototype_id, record.part_class)] = record
        return current


def create_app(workspace, prototypes, store_path=None):
    store_path = os.environ.get(STORE_ENV, store_path)
    if store_path is None:
        store_path = workspace.root / "records.jsonl"
    store = LabelStore(store_path)
    proto_by_id = {p.id: p for p in prototypes}
    app = FastAPI(title="partguide annotation service")
    app.state.store = store

    def patch_info(image_id, patch_index):
        grid = workspace.grid(image_id)
        patch = grid.patches[patch_index]
        entry = workspace.manifest.image(image_id)
        return {"image_id": image_id, "patch_index": patch_index,
                "box": list(patch.box), "image_width": entry.width,
                "image_height": entry.height,
                "thumbnail": f"/api/image/{image_id}"}

    @app.get("/api/parts")
    def parts():
        return {"parts": workspace.part_classes}

    @app.get("/api/prototypes")
    def prototypes_for_part(part: str):
        if part not in workspace.part_classes:
            raise HTTPException(404, f"unknown part class {part!r}")
        ranked = rank_prototypes(prototypes, part)
        labeled = store.latest()
        return {"part": part, "prototypes": [
            {"id": p.id, "score": p.score_per_class[part],
             "member_count": len(p.members),
             "members": [patch_info(*m) for m in p.members],
             "done": (p.id, part) in labeled}
            for p in ranked]}

    @app.get("/api/patches")
    def patches(prototype: int):
        if prototype not in proto_by_id:
            raise HTTPException(404, f"unknown prototype {prototype}")
        proto = proto_by_id[prototype]
        return {"prototype_id": prototype,
                "patches": [patch_info(*m) for m in proto.members]}

    @app.post("/api/labels")
    def submit_label(submission: LabelSubmission):
        if submission.prototype_id not in proto_by_id:
            raise HTTPException(404, f"unknown prototype {submission.prototype_id}")
        if submission.part_class not in workspace.part_classes:
            raise HTTPException(404, f"unknown part class {submission.part_class!r}")
        proto = proto_by_id[submission.prototype_id]
        bad = [i for i in submission.exceptions
               if not 0 <= i < len(proto.members)]
        if bad:
            raise HTTPException(422, f"exception indices out of range: {bad}")
        record = AnnotationRecord(
            submission.prototype_id, submission.part_class,
            submission.bulk_label, sorted(set(submission.exceptions)),
            1 + len(set(submission.exceptions)), source="human",
            annotator=submission.annotator,
            timestamp=datetime.datetime.now(datetime.timezone.utc).isoformat())
        store.append(record)
        return {"stored": record.to_json()}

    @app.get("/api/progress")
    def progress(part: str):
        if part not in workspace.part_classes:
            raise HTTPException(404, f"unknown part class {part!r}")
        labeled = store.latest()
        done = sum(1 for (_, cls) in labeled if cls == part)
        return {"part": part, "done": done, "total": len(prototypes)}

    @app.get("/api/image/{image_id}")
    def image(image_id: str):
        try:
            entry = workspace.manifest.image(image_id)
        except KeyError:
            raise HTTPException(404, f"unknown image {image_id!r}") from None
        path = Path(entry.pixel_source)
        if not path.is_absolute():
            path = workspace.root / path
        if not path.exists():
            raise HTTPException(404, f"pixel source missing for {image_id!r}")
        return FileResponse(path)

    return app
