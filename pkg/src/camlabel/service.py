"""Proposal-review HTTP backend.

The append-only interaction log is the source of truth: an event is
durably written before any state transition becomes visible, replaying the
log from empty reproduces the exact state, and replaying a known event id
is a no-op. Each proposal accepts exactly one decision
(pending -> accepted | modified | rejected); annotators additionally flag
missed defects, which have no proposal to reference.

Decisions convert back into weak labels (rejected proposal -> negative
click at its centroid, missed -> positive click, accepted/modified ->
positive click at the final mask centroid), which is what closes the
retraining loop.
"""

from __future__ import annotations

import json
import os
import threading
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Literal, Optional

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import FileResponse, Response
from pydantic import BaseModel, Field, model_validator

from . import masks as maskops
from .proposer import InstanceProposal
from .weakset import ImageInfo, WeakLabel

ACTIONS = ("accept", "modify", "reject", "missed")
STATUS_OF_ACTION = {"accept": "accepted", "modify": "modified", "reject": "rejected"}


class ConflictError(RuntimeError):
    """Second decision on an already-decided proposal."""


class UnknownProposalError(KeyError):
    pass


class RLEMask(BaseModel):
    size: list[int] = Field(min_length=2, max_length=2)
    counts: str


class InteractionEventIn(BaseModel):
    """Wire schema of one annotator decision; see module docstring."""

    event_id: str
    image_id: str
    action: Literal["accept", "modify", "reject", "missed"]
    proposal_id: Optional[str] = None
    edited_mask: Optional[RLEMask] = None
    click_point: Optional[list[int]] = None
    defect_class: Optional[str] = None
    duration_ms: Optional[int] = Field(default=None, ge=0)
    annotator_id: str = "anonymous"
    created_at: Optional[datetime] = None

    @model_validator(mode="after")
    def _conditional_fields(self):
        if self.action == "missed":
            if self.proposal_id is not None:
                raise ValueError("missed events must not reference a proposal")
            if self.click_point is None or len(self.click_point) != 2:
                raise ValueError("missed events require click_point [row, col]")
            if not self.defect_class:
                raise ValueError("missed events require defect_class")
        else:
            if not self.proposal_id:
                raise ValueError(f"{self.action} events require proposal_id")
            if self.click_point is not None:
                raise ValueError("click_point is only valid on missed events")
            if self.duration_ms is None:
                raise ValueError(f"{self.action} events require duration_ms")
        if self.action == "modify":
            if self.edited_mask is None:
                raise ValueError("modify events require edited_mask")
        elif self.edited_mask is not None:
            raise ValueError("edited_mask is only valid on modify events")
        return self

    def to_record(self) -> dict:
        created = self.created_at or datetime.now(timezone.utc)
        rec = self.model_dump(mode="json", exclude_none=True)
        rec["created_at"] = created.astimezone(timezone.utc).isoformat()
        return rec


@dataclass
class ProposalState:
    proposal_id: str
    status: str = "pending"  # pending | accepted | modified | rejected
    final_mask: Optional[dict] = None
    last_event_id: Optional[str] = None

    def to_record(self) -> dict:
        return {
            "proposal_id": self.proposal_id,
            "status": self.status,
            "final_mask": self.final_mask,
            "last_event_id": self.last_event_id,
        }


class EventStore:
    """Append-only JSONL event log with folded in-memory state.

    Appends are serialized by a single lock and flushed to disk before the
    state transition is applied, so no visible state lacks its event.
    """

    def __init__(self, log_path, proposals: dict[str, InstanceProposal]):
        self.log_path = Path(log_path)
        self.proposals = proposals
        self._lock = threading.Lock()
        self.events: list[dict] = []
        self._event_ids: set[str] = set()
        self.states: dict[str, ProposalState] = {
            pid: ProposalState(proposal_id=pid) for pid in proposals
        }
        if self.log_path.exists():
            for line in self.log_path.read_text().splitlines():
                if line.strip():
                    self._apply(json.loads(line))

    def _apply(self, record: dict) -> Optional[ProposalState]:
        self.events.append(record)
        self._event_ids.add(record["event_id"])
        if record["action"] == "missed":
            return None
        state = self.states.get(record["proposal_id"])
        if state is None:
            return None
        state.status = STATUS_OF_ACTION[record["action"]]
        state.last_event_id = record["event_id"]
        if record["action"] == "accept":
            state.final_mask = dict(self.proposals[record["proposal_id"]].mask)
        elif record["action"] == "modify":
            state.final_mask = dict(record["edited_mask"])
        else:
            state.final_mask = None
        return state

    def append(self, event: InteractionEventIn) -> Optional[ProposalState]:
        """Durably log one event and apply it; idempotent on event_id."""
        with self._lock:
            if event.event_id in self._event_ids:
                return self.states.get(event.proposal_id) if event.proposal_id else None
            if event.action != "missed":
                state = self.states.get(event.proposal_id)
                if state is None:
                    raise UnknownProposalError(event.proposal_id)
                if state.status != "pending":
                    raise ConflictError(
                        f"proposal {event.proposal_id} already {state.status}"
                    )
            record = event.to_record()
            with open(self.log_path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            return self._apply(record)

    def replay_check(self) -> bool:
        """Fold the on-disk log from empty and compare against live state."""
        fresh = EventStore(self.log_path, self.proposals)
        same_states = {k: v.to_record() for k, v in fresh.states.items()} == {
            k: v.to_record() for k, v in self.states.items()
        }
        return same_states and fresh.events == self.events


def derive_weak_labels(events, proposals: dict[str, InstanceProposal]
                       ) -> tuple[list[WeakLabel], list[str]]:
    """Convert a validated interaction log into new weak labels.

    Pure function of (events, proposals); events referencing unknown
    proposals are skipped and reported in the warning list.
    """
    labels: list[WeakLabel] = []
    warnings: list[str] = []
    for record in events:
        action = record["action"]
        event_id = record["event_id"]
        created = datetime.fromisoformat(record["created_at"])
        if action == "missed":
            row, col = record["click_point"]
            labels.append(
                WeakLabel(label_id=f"evt-{event_id}", image_id=record["image_id"],
                          point=(int(row), int(col)),
                          defect_class=record["defect_class"],
                          polarity="positive", source="interaction_log",
                          created_at=created)
            )
            continue
        proposal = proposals.get(record["proposal_id"])
        if proposal is None:
            warnings.append(
                f"event {event_id}: unknown proposal {record['proposal_id']!r}"
            )
            continue
        if action == "reject":
            point = maskops.mask_centroid(proposal.decode_mask())
            polarity = "negative"
        else:  # accept / modify: positive click at the final mask centroid
            mask_rle = record["edited_mask"] if action == "modify" else proposal.mask
            point = maskops.mask_centroid(maskops.decode_rle(mask_rle))
            polarity = "positive"
        labels.append(
            WeakLabel(label_id=f"evt-{event_id}", image_id=proposal.image_id,
                      point=point, defect_class=proposal.defect_class,
                      polarity=polarity, source="interaction_log",
                      created_at=created)
        )
    return labels, warnings


def export_native(image_id: str, proposals, states: dict[str, ProposalState]) -> dict:
    """Decided proposals of one image as the native annotation document."""
    annotations = []
    for proposal in proposals:
        state = states[proposal.proposal_id]
        if state.status in ("accepted", "modified"):
            mask = state.final_mask
            polygon = maskops.mask_to_polygon(maskops.decode_rle(mask))
            annotations.append(
                {
                    "proposal_id": proposal.proposal_id,
                    "defect_class": proposal.defect_class,
                    "status": state.status,
                    "mask": mask,
                    "polygon": [[int(r), int(c)] for r, c in polygon],
                }
            )
    return {"image_id": image_id, "format": "camlabel-native", "annotations": annotations}


def export_cvat(image_id: str, info: ImageInfo, proposals,
                states: dict[str, ProposalState]) -> str:
    """CVAT-for-images XML with one polygon per decided proposal.

    CVAT points are "x,y" i.e. (col,row) pairs.
    """
    root = ET.Element("annotations")
    ET.SubElement(root, "version").text = "1.1"
    image_el = ET.SubElement(root, "image", id="0", name=Path(info.path).name,
                             width=str(info.width), height=str(info.height))
    for proposal in proposals:
        state = states[proposal.proposal_id]
        if state.status not in ("accepted", "modified"):
            continue
        polygon = maskops.mask_to_polygon(maskops.decode_rle(state.final_mask))
        points = ";".join(f"{c:.2f},{r:.2f}" for r, c in polygon)
        ET.SubElement(image_el, "polygon", label=proposal.defect_class,
                      points=points, occluded="0", source="camlabel")
    return ET.tostring(root, encoding="unicode")


@dataclass
class ReviewApp:
    """Everything the HTTP layer serves: images, proposals, the event log."""

    manifest: dict[str, ImageInfo]
    proposals: dict[str, InstanceProposal]
    store: EventStore

    @classmethod
    def open(cls, manifest: dict[str, ImageInfo],
             proposals: list[InstanceProposal], log_path) -> "ReviewApp":
        by_id = {p.proposal_id: p for p in proposals}
        return cls(manifest=manifest, proposals=by_id,
                   store=EventStore(log_path, by_id))

    def proposals_of(self, image_id: str, defect_class: str | None = None
                     ) -> list[InstanceProposal]:
        items = [p for p in self.proposals.values() if p.image_id == image_id]
        if defect_class is not None:
            items = [p for p in items if p.defect_class == defect_class]
        return sorted(items, key=lambda p: p.proposal_id)


def create_app(review: ReviewApp) -> FastAPI:
    app = FastAPI(title="camlabel review service")
    app.state.review = review

    @app.get("/images")
    def list_images(page: int = Query(1, ge=1), page_size: int = Query(50, ge=1, le=500)):
        infos = sorted(review.manifest.values(), key=lambda i: i.image_id)
        start = (page - 1) * page_size
        items = [
            {"image_id": i.image_id, "height": i.height, "width": i.width}
            for i in infos[start:start + page_size]
        ]
        return {"items": items, "total": len(infos), "page": page,
                "page_size": page_size}

    @app.get("/images/{image_id}")
    def get_image(image_id: str):
        info = review.manifest.get(image_id)
        if info is None:
            raise HTTPException(status_code=404, detail=f"unknown image {image_id!r}")
        suffix = Path(info.path).suffix.lower()
        media = {"jpg": "image/jpeg", "jpeg": "image/jpeg"}.get(
            suffix.lstrip("."), f"image/{suffix.lstrip('.') or 'png'}"
        )
        return FileResponse(info.path, media_type=media)

    @app.get("/images/{image_id}/proposals")
    def get_proposals(image_id: str, defect_class: str | None = Query(None, alias="class")):
        if image_id not in review.manifest:
            raise HTTPException(status_code=404, detail=f"unknown image {image_id!r}")
        items = []
        for proposal in review.proposals_of(image_id, defect_class):
            rec = proposal.to_record()
            rec["state"] = review.store.states[proposal.proposal_id].to_record()
            items.append(rec)
        return {"items": items, "total": len(items)}

    @app.post("/interactions")
    def post_interaction(event: InteractionEventIn):
        try:
            state = review.store.append(event)
        except UnknownProposalError:
            raise HTTPException(status_code=404,
                                detail=f"unknown proposal {event.proposal_id!r}")
        except ConflictError as err:
            raise HTTPException(status_code=409, detail=str(err))
        if state is None:
            return {"ack": True, "event_id": event.event_id}
        return {"event_id": event.event_id, "proposal_state": state.to_record()}

    @app.get("/export/{image_id}")
    def export(image_id: str, format: str = Query("native")):
        if image_id not in review.manifest:
            raise HTTPException(status_code=404, detail=f"unknown image {image_id!r}")
        proposals = review.proposals_of(image_id)
        decided = [p for p in proposals
                   if review.store.states[p.proposal_id].status != "pending"]
        if not decided:
            raise HTTPException(status_code=409,
                                detail="no decided proposals to export")
        if format == "native":
            return export_native(image_id, proposals, review.store.states)
        if format == "cvat":
            info = review.manifest[image_id]
            xml = export_cvat(image_id, info, proposals, review.store.states)
            return Response(content=xml, media_type="application/xml")
        raise HTTPException(status_code=400, detail=f"unsupported format {format!r}")

    @app.get("/labels/derived")
    def derived_labels():
        labels, warnings = derive_weak_labels(review.store.events, review.proposals)
        return {"labels": [l.to_record() for l in labels], "warnings": warnings}

    return app
