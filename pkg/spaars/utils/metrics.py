"""Append-only JSON-lines metrics stream."""
from pathlib import Path
from typing import Iterator, List, Optional, Union

from spaars.schemas.curriculum_schemas import MetricsRecord
from spaars.utils.errors import ConfigurationError


class MetricsWriter:
    """One MetricsRecord per line; no timestamps so identical runs give identical files."""

    def __init__(self, path: Union[str, Path], truncate_at: Optional[int] = None):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if truncate_at is None:
            self._file = open(self.path, "w")
        else:
            # resume: drop records written after the checkpoint
            self._file = open(self.path, "r+" if self.path.exists() else "w")
            self._file.truncate(truncate_at)
            self._file.seek(truncate_at)

    def write(self, record: MetricsRecord):
        self._file.write(record.model_dump_json() + "\n")

    def tell(self) -> int:
        self._file.flush()
        return self._file.tell()

    def close(self):
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path: Union[str, Path]) -> List[MetricsRecord]:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Metrics file not found: {path}")
    return list(iter_metrics(path))


def iter_metrics(path: Path) -> Iterator[MetricsRecord]:
    with open(path) as f:
        for line in f:
            if line.strip():
                yield MetricsRecord.model_validate_json(line)
