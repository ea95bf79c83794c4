"""
File persistence helpers

Every output file is written to a temporary sibling first and renamed into
place, so an interrupted run never leaves a truncated file behind.
"""

import json
import logging
import os
import tempfile
from contextlib import contextmanager

logger = logging.getLogger(__name__)


@contextmanager
def atomic_write(path, mode="w"):
    """
    Open a temporary file next to `path`; rename it over `path` on success

    Args:
        path: final destination
        mode: "w" for text (UTF-8) or "wb" for bytes
    """
    path = os.path.abspath(path)
    directory = os.path.dirname(path)
    if directory and not os.path.exists(directory):
        os.makedirs(directory, exist_ok=True)

    fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", suffix=os.path.basename(path), dir=directory)
    try:
        if "b" in mode:
            handle = os.fdopen(fd, mode)
        else:
            handle = os.fdopen(fd, mode, encoding="utf-8", newline="\n")
        with handle:
            yield handle
        os.replace(tmp_path, path)
        logger.debug(f"✅ Wrote {path}")
    except BaseException:
        if os.path.exists(tmp_path):
            try:
                os.remove(tmp_path)
            except OSError as e:
                logger.warning(f"⚠️ Could not remove temp file {tmp_path}: {e}")
        raise


def write_jsonl(path, records):
    """Write dicts one per line; keys keep their insertion order"""
    count = 0
    with atomic_write(path) as handle:
        for record in records:
            handle.write(json.dumps(record, ensure_ascii=False, separators=(",", ":")))
            handle.write("\n")
            count += 1
    return count


def read_jsonl(path):
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def write_json(path, payload):
    with atomic_write(path) as handle:
        json.dump(payload, handle, ensure_ascii=False, indent=2, sort_keys=False)
        handle.write("\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def write_bytes(path, payload):
    with atomic_write(path, "wb") as handle:
        handle.write(payload)


def write_dataframe_tsv(path, frame):
    """Write a pandas DataFrame as TSV with a header row"""
    with atomic_write(path) as handle:
        frame.to_csv(handle, sep="\t", index=False, lineterminator="\n", float_format="%.6g")
