import csv
import hashlib
import io
import json
import math
import platform
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

import numpy as np
import scipy

CSV_COLUMNS = ("check_id", "experiment", "anchor", "passed", "runtime_s", "constants", "ratios", "detail")


@dataclass
class CheckRecord:
    check_id: str
    experiment: str
    # what the check establishes, in words
    anchor: str
    constants: dict[str, float] = field(default_factory=dict)
    ratios: list[float] = field(default_factory=list)
    passed: bool = False
    runtime_s: float = 0.0
    detail: str = ""


@dataclass
class VerificationReport:
    config: dict
    records: list[CheckRecord] = field(default_factory=list)
    environment: dict = field(default_factory=dict)
    coverage: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    def failed(self) -> list[CheckRecord]:
        return [r for r in self.records if not r.passed]


def _clean(value):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else repr(v)
    return value


def _number(value) -> float:
    return float(value) if isinstance(value, str) else value


def config_digest(config: dict) -> str:
    return hashlib.md5(json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")).hexdigest()


def environment_metadata(config: dict) -> dict:
    return {
        "python": platform.python_version(),
        "platform": platform.platform(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "argv": list(sys.argv),
        "config_md5": config_digest(config),
        "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }


def report_to_json(report: VerificationReport) -> str:
    data = {
        "passed": report.passed,
        "config": report.config,
        "environment": report.environment,
        "coverage": report.coverage,
        "records": [asdict(r) for r in report.records],
    }
    return json.dumps(_clean(data), indent=2, sort_keys=False) + "\n"


def report_from_json(text: str) -> VerificationReport:
    data = json.loads(text)
    records = []
    for r in data.get("records", []):
        r = dict(r)
        r["constants"] = {k: _number(v) for k, v in r.get("constants", {}).items()}
        r["ratios"] = [_number(v) for v in r.get("ratios", [])]
        records.append(CheckRecord(**r))
    return VerificationReport(data.get("config", {}), records, data.get("environment", {}), data.get("coverage", {}))


def report_to_csv(report: VerificationReport) -> str:
    """Flat CSV text, one row per check; constants and ratios are JSON cells."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in report.records:
        writer.writerow({
            "check_id": r.check_id,
            "experiment": r.experiment,
            "anchor": r.anchor,
            "passed": "true" if r.passed else "false",
            "runtime_s": repr(float(r.runtime_s)),
            "constants": json.dumps(_clean(r.constants), sort_keys=True),
            "ratios": json.dumps(_clean(r.ratios)),
            "detail": r.detail,
        })
    return buf.getvalue()


def read_report_csv(text: str) -> list[CheckRecord]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is not None and tuple(reader.fieldnames) != CSV_COLUMNS:
        raise ValueError(f"unexpected report columns {reader.fieldnames}")
    records = []
    for row in reader:
        records.append(CheckRecord(
            check_id=row["check_id"],
            experiment=row["experiment"],
            anchor=row["anchor"],
            constants={k: _number(v) for k, v in json.loads(row["constants"]).items()},
            ratios=[_number(v) for v in json.loads(row["ratios"])],
            passed=row["passed"] == "true",
            runtime_s=float(row["runtime_s"]),
            detail=row["detail"],
        ))
    return records
