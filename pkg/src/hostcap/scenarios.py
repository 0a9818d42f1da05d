"""Scenario ingestion, validation and subsampling.

A scenario is one joint realization of per-bus irradiance coefficient and
real/reactive demand for buses 2..n. Scenario files are UTF-8 CSV with
``3*(n-1)`` columns per row, grouped ``[alpha_2..alpha_n, p_2..p_n, q_2..q_n]``;
an optional header row is detected by a non-numeric first field. All
scenarios carry uniform weight 1/K.

Subsampling draws rows uniformly without replacement with a seeded PCG64
generator (``numpy.random.default_rng``): indices come from
``rng.choice(K, m, replace=False)`` and are sorted ascending, so a draw of
size K reproduces the input set in order.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass

import numpy as np

from .errors import BadCount, DimensionMismatch, EmptyFile, ParseError


@dataclass(frozen=True)
class ScenarioSet:
    """K scenarios of (alpha, p_D, q_D), each of width n-1."""

    alpha: np.ndarray
    p_D: np.ndarray
    q_D: np.ndarray

    def __post_init__(self):
        for name in ("alpha", "p_D", "q_D"):
            arr = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.alpha.shape == self.p_D.shape == self.q_D.shape):
            raise DimensionMismatch("alpha, p_D, q_D must share shape K x (n-1)")
        if self.alpha.shape[0] < 1:
            raise ParseError("scenario set must contain at least one scenario")
        if np.any(self.alpha < 0):
            raise ParseError("irradiance coefficients must be nonnegative")

    @property
    def K(self) -> int:
        return self.alpha.shape[0]

    @property
    def width(self) -> int:
        """Number of non-substation buses covered (n-1)."""
        return self.alpha.shape[1]

    def digest(self) -> str:
        """Canonical content hash, independent of file formatting."""
        h = hashlib.sha256()
        h.update(np.array(self.alpha.shape, dtype=np.int64).tobytes())
        for arr in (self.alpha, self.p_D, self.q_D):
            h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        return h.hexdigest()


def _parse_rows(lines, n: int, source: str) -> ScenarioSet:
    nb = n - 1
    want = 3 * nb
    rows = []
    first_data_seen = False
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.split(",")
        if not first_data_seen:
            try:
                float(fields[0])
            except ValueError:
                continue  # header row
        first_data_seen = True
        if len(fields) != want:
            raise DimensionMismatch(
                f"{source}:{lineno}: expected {want} columns (3*(n-1) for n={n}), "
                f"got {len(fields)}")
        try:
            rows.append([float(f) for f in fields])
        except ValueError as exc:
            raise ParseError(f"{source}:{lineno}: non-numeric field ({exc})") from exc
    if not rows:
        raise EmptyFile(f"{source}: no scenario rows")
    data = np.asarray(rows, dtype=float)
    alpha, p_D, q_D = data[:, :nb], data[:, nb:2 * nb], data[:, 2 * nb:]
    if np.any(alpha < 0):
        raise ParseError(f"{source}: negative irradiance coefficient")
    if not np.all(np.isfinite(data)):
        raise ParseError(f"{source}: non-finite value")
    return ScenarioSet(alpha=alpha, p_D=p_D, q_D=q_D)


def load_scenarios(path, n: int) -> ScenarioSet:
    """Load and validate a scenario CSV for an n-bus network."""
    with open(path, "r", encoding="utf-8") as fh:
        return _parse_rows(fh, n, str(path))


def loads_scenarios(text: str, n: int) -> ScenarioSet:
    return _parse_rows(io.StringIO(text), n, "<string>")


def save_scenarios(scen: ScenarioSet, path) -> None:
    """Write CSV that round-trips bit-exactly through load_scenarios."""
    data = np.hstack([scen.alpha, scen.p_D, scen.q_D])
    with open(path, "w", encoding="utf-8") as fh:
        for row in data:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def subsample(scen: ScenarioSet, m: int, seed: int) -> ScenarioSet:
    """Draw m scenarios uniformly without replacement, deterministically."""
    m = int(m)
    if not 1 <= m <= scen.K:
        raise BadCount(f"subsample size must lie in 1..{scen.K}, got {m}")
    rng = np.random.default_rng(int(seed))
    idx = np.sort(rng.choice(scen.K, size=m, replace=False))
    return ScenarioSet(alpha=scen.alpha[idx], p_D=scen.p_D[idx],
                       q_D=scen.q_D[idx])
