"""Session logs: one row per pipeline tick.

The leading columns follow the dataset file convention (plant state at the
tick time) so stride tooling can read either format; command, distribution
and power columns follow.
"""

from __future__ import annotations

import csv

import numpy as np

from ..kinematics import FEATURE_NAMES, FormatVersionError, InvalidInputError

LOG_VERSION = 1

_STATE_COLS = (
    ["t"]
    + [f"theta_{i}" for i in range(4)]
    + [f"theta_dot_{i}" for i in range(4)]
    + ["theta_bp"]
    + [f"tau_int_{i}" for i in range(4)]
    + [f"alpha_{i}" for i in range(2)]
    + [f"foot_rel_{i}" for i in range(4)]
    + ["activity_label"]
)

_EXTRA_COLS = (
    [f"self_mu_{n}" for n in FEATURE_NAMES]
    + [f"self_sigma_{n}" for n in FEATURE_NAMES]
    + [f"applied_mu_{n}" for n in FEATURE_NAMES]
    + [f"kin_mu_{i}" for i in range(8)]
    + [f"kin_sigma_{i}" for i in range(8)]
    + [f"theta_d_{i}" for i in range(4)]
    + [f"theta_dot_d_{i}" for i in range(4)]
    + [f"k_{i}" for i in range(4)]
    + [f"d_{i}" for i in range(4)]
    + [f"power_{i}" for i in range(4)]
    + ["latency_ms", "segment", "mode", "safe_stop", "delta_phase", "seq"]
)

COLUMNS = _STATE_COLS + _EXTRA_COLS


def write_session_log(ticks, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"#log_version={LOG_VERSION}"])
        w.writerow(COLUMNS)
        for tk in ticks:
            row = ([f"{tk.t:.6f}"]
                   + [f"{v:.9g}" for v in tk.theta]
                   + [f"{v:.9g}" for v in tk.theta_dot]
                   + [f"{tk.theta_bp:.9g}"]
                   + [f"{v:.9g}" for v in tk.tau_int]
                   + [f"{v:.9g}" for v in tk.alpha]
                   + [f"{v:.9g}" for v in tk.foot_rel]
                   + [tk.activity]
                   + [f"{v:.9g}" for v in tk.self_mu]
                   + [f"{v:.9g}" for v in tk.self_sigma]
                   + [f"{v:.9g}" for v in tk.applied_mu]
                   + [f"{v:.9g}" for v in tk.kin_mu]
                   + [f"{v:.9g}" for v in tk.kin_sigma]
                   + [f"{v:.9g}" for v in tk.theta_d]
                   + [f"{v:.9g}" for v in tk.theta_dot_d]
                   + [f"{v:.9g}" for v in tk.k]
                   + [f"{v:.9g}" for v in tk.d]
                   + [f"{v:.9g}" for v in tk.power]
                   + [f"{tk.latency_ms:.4f}", tk.segment, tk.mode,
                      int(tk.safe_stop), f"{tk.delta_phase:.6g}", tk.seq])
            w.writerow(row)


class SessionLog:
    """Column-oriented view of a written session log."""

    def __init__(self, columns, rows):
        self.columns = columns
        self._idx = {c: i for i, c in enumerate(columns)}
        self.rows = rows

    def __len__(self):
        return len(self.rows)

    def col(self, name):
        i = self._idx[name]
        try:
            return np.array([float(r[i]) for r in self.rows])
        except ValueError:
            return np.array([r[i] for r in self.rows], dtype=object)

    def mat(self, names):
        return np.column_stack([self.col(n) for n in names])

    @property
    def t(self):
        return self.col("t")

    def segments(self):
        return self.col("segment")


def read_session_log(path) -> SessionLog:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if not header or not header[0].startswith("#log_version="):
            raise InvalidInputError(f"{path}: missing session-log version header")
        version = int(header[0].split("=", 1)[1])
        if version != LOG_VERSION:
            raise FormatVersionError(
                f"{path}: session-log version {version}, expected {LOG_VERSION}")
        columns = next(r)
        if columns != COLUMNS:
            raise InvalidInputError(f"{path}: unexpected session-log columns")
        rows = list(r)
    return SessionLog(columns, rows)
