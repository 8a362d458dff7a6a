"""Training instances and JSONL / vocabulary file formats.

JSONL records: one object per line with fields ``input`` (str), ``target``
(str), ``skill`` (optional str), ``task`` (str). UTF-8, LF line endings.
Files are written atomically (temp + rename) and byte-identically for a
fixed instance list.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

from ..config import SKILL_NAMES
from ..errors import ValidationError


@dataclass(frozen=True)
class SkillInstance:
    """One text-to-text example; ``skill`` is set only for pretraining data."""
    input: str
    target: str
    skill: str | None = None
    task: str = ""

    def __post_init__(self):
        if not self.input or not self.target:
            raise ValidationError("instance input and target must be non-empty")
        if self.skill is not None and self.skill not in SKILL_NAMES:
            raise ValidationError(
                f"unknown skill {self.skill!r}; expected one of {SKILL_NAMES}")


def atomic_write_bytes(path, data: bytes):
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def dump_jsonl(instances) -> str:
    lines = []
    for inst in instances:
        rec = {"input": inst.input, "target": inst.target, "task": inst.task}
        if inst.skill is not None:
            rec["skill"] = inst.skill
        lines.append(json.dumps(rec, sort_keys=True, ensure_ascii=False))
    return "\n".join(lines) + ("\n" if lines else "")


def save_jsonl(path, instances):
    atomic_write_text(path, dump_jsonl(instances))


def load_jsonl(path) -> list[SkillInstance]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path}:{lineno}: malformed JSON: {e}") from None
            if not isinstance(rec, dict):
                raise ValidationError(f"{path}:{lineno}: expected an object")
            for fld in ("input", "target"):
                if fld not in rec or not isinstance(rec[fld], str) or not rec[fld]:
                    raise ValidationError(
                        f"{path}:{lineno}: missing or empty field {fld!r}")
            try:
                out.append(SkillInstance(rec["input"], rec["target"],
                                         rec.get("skill"), rec.get("task", "")))
            except ValidationError as e:
                raise ValidationError(f"{path}:{lineno}: {e}") from None
    return out
