"""CSV table reader for goldizone experiment logs.

The producer writes a comment row ``# schema=goldizone/<command>/v<N>``
followed by a header row and comma-separated data rows. This reader is
the only coupling to the producer: everything downstream works on the
returned (schema, columns) pair.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, SchemaError

SUPPORTED_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Table:
    path: str
    schema: str                 # e.g. "goldizone/sweep-alpha/v1"
    header: tuple
    columns: dict               # name -> list of raw strings

    def __len__(self):
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def require(self, *names):
        for name in names:
            if name not in self.columns:
                raise SchemaError(
                    f"missing column {name!r} in {self.path} "
                    f"(has: {', '.join(self.header)})")

    def floats(self, name):
        self.require(name)
        return np.array([float(v) for v in self.columns[name]])

    def strings(self, name):
        self.require(name)
        return list(self.columns[name])


def read_table(path):
    schema = None
    rows = []
    header = None
    with open(path, newline="") as fh:
        for record in csv.reader(fh):
            if not record:
                continue
            if record[0].startswith("#"):
                text = record[0].lstrip("#").strip()
                if text.startswith("schema="):
                    schema = text[len("schema="):]
                continue
            if header is None:
                header = record
            else:
                rows.append(record)
    if schema is None or header is None:
        raise SchemaError(f"{path} carries no '# schema=' header row")
    version = schema.rsplit("/v", 1)[-1]
    if not version.isdigit() or int(version) != SUPPORTED_SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema {schema!r} in {path}; "
                          f"this reader handles v{SUPPORTED_SCHEMA_VERSION}")
    if not rows:
        raise EmptyInput(f"{path} holds no data rows")
    columns = {name: [row[i] for row in rows]
               for i, name in enumerate(header)}
    return Table(path=str(path), schema=schema, header=tuple(header),
                 columns=columns)
