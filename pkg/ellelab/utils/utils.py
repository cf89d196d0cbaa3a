from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional

import yaml

PACKAGE_DIR = Path(__file__).resolve().parent.parent
CONFIG_PATH = PACKAGE_DIR / "config.yaml"

_CONFIG: Dict[str, Any] | None = None


def load_config() -> Dict[str, Any]:
    """Load repo defaults from config.yaml, resolving relative paths against the package."""
    global _CONFIG
    if _CONFIG is None:
        if CONFIG_PATH.exists():
            with CONFIG_PATH.open("r", encoding="utf-8") as fh:
                _CONFIG = yaml.safe_load(fh) or {}
        else:
            _CONFIG = {}
        for section, keys in (("logging", ["log_file"]), ("output", ["directory"]), ("idx", ["directory"])):
            values = _CONFIG.get(section) or {}
            for key in keys:
                if key in values:
                    path = Path(values[key])
                    if not path.is_absolute():
                        values[key] = str((PACKAGE_DIR / path).resolve())
    return _CONFIG


def ensure_dir(path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)


def _json_value(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, Mapping):
        return {k: _json_value(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_value(v) for v in value]
    return value


def dumps_row(row: Mapping[str, Any]) -> str:
    return json.dumps({k: _json_value(v) for k, v in row.items()}, sort_keys=True)


def read_jsonl(path: Path) -> Iterable[Dict[str, Any]]:
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            yield json.loads(line)


def write_jsonl(path: Path, rows: Iterable[Mapping[str, Any]]) -> None:
    ensure_dir(path)
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(dumps_row(row) + "\n")


def config_hash(sections: Mapping[str, Any]) -> str:
    """sha256 of the canonical JSON of a resolved configuration."""
    return hashlib.sha256(json.dumps(sections, sort_keys=True).encode("utf-8")).hexdigest()


def run_id(name: str, digest: str, seed: int) -> str:
    return f"{name}-{digest[:12]}-s{seed}"


class MetricsLog:
    """Append-only JSON Lines sink; every row carries the run id and config hash."""

    def __init__(self, path: Path | str, run: str, digest: str):
        self.path = Path(path)
        self.run = run
        self.digest = digest
        ensure_dir(self.path)
        self._fh = self.path.open("a", encoding="utf-8")

    def write(self, kind: str, row: Mapping[str, Any]) -> None:
        full = {"kind": kind, "run_id": self.run, "config_hash": self.digest, **row}
        self._fh.write(dumps_row(full) + "\n")
        self._fh.flush()

    def __call__(self, kind: str, row: Mapping[str, Any]) -> None:
        self.write(kind, row)

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.flush()
            self._fh.close()

    def __enter__(self) -> "MetricsLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_metrics(sink: MetricsLog, rows: Iterable[Mapping[str, Any]], kind: Optional[str] = None) -> None:
    """Write rows that already carry a `kind` tag (or all tagged with `kind`)."""
    try:
        for row in rows:
            row = dict(row)
            sink.write(kind or row.pop("kind"), row)
    except OSError:
        sink.close()
        raise


EPOCH_COLUMNS = ["epoch", "train_loss", "clean_acc", "robust_acc", "elin_probe", "misalignment_probe", "co_flag"]


def export_epoch_csv(log_path: Path, csv_path: Path, columns: List[str] = EPOCH_COLUMNS) -> int:
    """Pivot the epoch rows of a metrics log into a CSV curve file; returns the row count."""
    rows = [r for r in read_jsonl(Path(log_path)) if r.get("kind") == "epoch"]
    ensure_dir(csv_path)
    with Path(csv_path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["run_id", *columns], extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return len(rows)
