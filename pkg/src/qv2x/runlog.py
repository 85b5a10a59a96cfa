"""Append-only run logs, stamped artifacts, and the event-order sentinel.

Two artifact families come out of every run. CSV curves are the
deterministic contract: identical (config, seed) must reproduce them
byte for byte, so nothing wall-clock flavored may enter them. The
JSON-lines log is the forensic record: it carries wall-clock times, the
per-record config hash, and the phase sentinels that pin the simulation
event order (channel evolution, then transmissions, then agent
decisions, then learning updates).
"""

import csv
import json
import time

from .errors import CheckFailure, DataError

EVENT_CYCLE = ("channel", "transmit", "decide", "learn")


class RunLogger:
    """Serialized append-only JSON-lines writer for one run."""

    def __init__(self, path, run_id: str, config_hash: str):
        self.path = path
        self.run_id = str(run_id)
        self.config_hash = str(config_hash)
        self._index = 0
        self._fh = open(path, "a")

    def log(self, phase: str, step, metric: str, value) -> dict:
        record = {
            "index": self._index,
            "wall_clock": time.time(),
            "run_id": self.run_id,
            "config": self.config_hash,
            "phase": str(phase),
            "step": int(step),
            "metric": str(metric),
            "value": float(value),
        }
        self._fh.write(json.dumps(record) + "\n")
        self._index += 1
        return record

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_log(path) -> list[dict]:
    """Parse a JSON-lines log, checking per-run monotone record order."""
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: bad log record: {exc}")
            records.append(rec)
    last_index = {}
    for rec in records:
        run = rec.get("run_id")
        idx = rec.get("index")
        if run in last_index and idx <= last_index[run]:
            raise DataError(
                f"log order regressed for run {run}: {idx} after {last_index[run]}"
            )
        last_index[run] = idx
    return records


def assert_event_order(records, cycle=EVENT_CYCLE) -> int:
    """Check that sentinel phases repeat in the fixed simulation order.

    Records outside the cycle are ignored. Returns the number of
    complete cycles seen; raises CheckFailure on any out-of-order phase.
    """
    phases = [r["phase"] for r in records if r.get("phase") in cycle]
    for i, phase in enumerate(phases):
        want = cycle[i % len(cycle)]
        if phase != want:
            raise CheckFailure(
                f"event order violated at sentinel {i}: "
                f"saw {phase!r}, expected {want!r}"
            )
    if len(phases) % len(cycle) != 0:
        raise CheckFailure(
            f"{len(phases)} sentinels do not close the last cycle of {cycle}"
        )
    return len(phases) // len(cycle)


# ---------------------------------------------------------------------------
# stamped CSV artifacts

_STAMP_PREFIX = "# config="


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def write_csv(path, header, rows, config_hash: str) -> None:
    """CSV with a leading config-hash stamp; cells formatted stably."""
    with open(path, "w", newline="") as fh:
        fh.write(f"{_STAMP_PREFIX}{config_hash}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(row[key]) for key in header])


def read_csv(path) -> tuple[str, list[dict]]:
    """Read a stamped CSV back as (config hash, rows of strings)."""
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith(_STAMP_PREFIX):
            raise DataError(f"{path} is missing its config stamp")
        stamp = first[len(_STAMP_PREFIX):].strip()
        reader = csv.DictReader(fh)
        return stamp, list(reader)


def write_summary(path, lines, config_hash: str) -> None:
    with open(path, "w") as fh:
        fh.write(f"config {config_hash}\n")
        for line in lines:
            fh.write(f"{line}\n")


def artifact_hashes(out_dir) -> dict:
    """Config hash found in each artifact of one output directory.

    Covers stamped CSVs, summaries, and JSON-lines logs; a run whose
    artifacts disagree has mixed outputs from different configs.
    """
    import os

    found = {}
    for name in sorted(os.listdir(out_dir)):
        full = os.path.join(out_dir, name)
        if not os.path.isfile(full):
            continue
        if name.endswith(".csv"):
            found[name], _ = read_csv(full)
        elif name.endswith(".txt"):
            with open(full) as fh:
                first = fh.readline().split()
                if len(first) == 2 and first[0] == "config":
                    found[name] = first[1]
        elif name.endswith(".jsonl"):
            hashes = {r["config"] for r in read_log(full) if "config" in r}
            if len(hashes) > 1:
                raise DataError(f"{name} mixes config hashes {sorted(hashes)}")
            if hashes:
                found[name] = hashes.pop()
    return found
