"""On-disk run store: ``<output_dir>/<run_id>/{result,transcript,meta}.json``."""

from __future__ import annotations

import json
import os
import re
import shutil
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from ulid import ULID

from .errors import GeneUSError
from .schema import GenerationResult, serialize

_RUN_ID = re.compile(r"^[0-9A-HJKMNP-TV-Z]{26}$")


class RunNotFound(GeneUSError, KeyError):
    pass


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    input_digest: str
    result_path: str
    transcript_path: str
    created_at: str

    def to_dict(self) -> dict[str, str]:
        return asdict(self)


class RunStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _dir(self, run_id: str) -> Path:
        if not _RUN_ID.match(run_id):
            raise RunNotFound(run_id)
        return self.root / run_id

    def save(self, result: GenerationResult, extra_meta: dict[str, Any] | None = None) -> RunRecord:
        """Write a run; it becomes visible in one rename, so readers never see half a run."""
        run_id = str(ULID())
        final = self.root / run_id
        staging = self.root / f".staging-{run_id}"
        staging.mkdir(parents=True)
        try:
            (staging / "result.json").write_text(serialize(result) + "\n", encoding="utf-8")
            transcript = result.transcript.to_dict() if result.transcript is not None else {"steps": []}
            transcript["traces"] = [t.to_dict() for t in result.traces if t is not None]
            (staging / "transcript.json").write_text(
                json.dumps(transcript, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
            )
            record = RunRecord(
                run_id=run_id,
                input_digest=result.requirements.source_digest,
                result_path=str(final / "result.json"),
                transcript_path=str(final / "transcript.json"),
                created_at=datetime.now(timezone.utc).isoformat(),
            )
            meta = {**record.to_dict(), **(extra_meta or {})}
            (staging / "meta.json").write_text(json.dumps(meta, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
            os.rename(staging, final)
        except BaseException:
            shutil.rmtree(staging, ignore_errors=True)
            raise
        return record

    def result_text(self, run_id: str) -> str:
        path = self._dir(run_id) / "result.json"
        try:
            return path.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise RunNotFound(run_id) from None

    def record(self, run_id: str) -> RunRecord:
        path = self._dir(run_id) / "meta.json"
        try:
            meta = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise RunNotFound(run_id) from None
        return RunRecord(**{k: meta[k] for k in RunRecord.__dataclass_fields__})

    def run_ids(self) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(p.name for p in self.root.iterdir() if p.is_dir() and _RUN_ID.match(p.name))
