from .utils import (
    EPOCH_COLUMNS,
    MetricsLog,
    config_hash,
    dumps_row,
    ensure_dir,
    export_epoch_csv,
    load_config,
    read_jsonl,
    run_id,
    write_jsonl,
    write_metrics,
)

__all__ = [
    "EPOCH_COLUMNS", "MetricsLog", "config_hash", "dumps_row", "ensure_dir", "export_epoch_csv",
    "load_config", "read_jsonl", "run_id", "write_jsonl", "write_metrics",
]
