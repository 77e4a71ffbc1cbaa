"""QA records as JSON Lines."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from ..errors import FormatError

TASKS = ("action", "transition", "frameqa_attr", "count")
MULTI_CHOICE_TASKS = ("transition",)

# answer kind used by each synthetic task
TASK_KIND = {
    "frameqa_attr": "open_ended",
    "action": "open_ended",
    "mixed": "open_ended",
    "count": "count",
    "transition": "multi_choice",
}


@dataclass
class QARecord:
    video_id: str
    task: str
    question: list
    answer: int
    candidates: list = field(default=None)

    def validate(self, count_range=None):
        mc = self.task in MULTI_CHOICE_TASKS
        if mc != (self.candidates is not None):
            raise ValueError(f"{self.video_id}/{self.task}: candidates must be present iff multi-choice")
        if not self.question:
            raise ValueError(f"{self.video_id}/{self.task}: empty question")
        if mc and not 0 <= self.answer < len(self.candidates):
            raise ValueError(f"{self.video_id}: correct index {self.answer} outside candidates")
        if self.task == "count" and count_range and not count_range[0] <= self.answer <= count_range[1]:
            raise ValueError(f"{self.video_id}: count {self.answer} outside {count_range}")

    def to_json(self):
        out = {"video_id": self.video_id, "task": self.task, "question": self.question,
               "answer": self.answer}
        if self.candidates is not None:
            out["candidates"] = self.candidates
        return json.dumps(out, separators=(",", ":"))


def write_records(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json())
            fh.write("\n")


def read_records(path, task=None):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rec = QARecord(obj["video_id"], obj["task"], list(obj["question"]), int(obj["answer"]),
                               obj.get("candidates"))
                rec.validate()
            except (ValueError, KeyError, TypeError) as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from None
            if task is None or rec.task == task:
                out.append(rec)
    return out
