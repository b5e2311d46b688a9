"""Time-multiplexed click detector with B binary output paths.

A photon entering the arm leaves through path i with probability w_i, and a
path fires (one click) when at least one photon exits through it.  The
conditional probability of k clicks given n photons follows by
inclusion-exclusion over the set of occupied paths.  Losses are not modelled
here; they are absorbed into the arm transmissions of the source model, so
the response matrices describe lossless detectors with P[1, 1] = 1.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from ._fileio import format_mapping, format_matrix, parse_mapping, parse_matrix
from .errors import DegenerateInputError, ValidationError
from .model import JointDistribution, _freeze

_TOL = 1e-12


@dataclass(frozen=True)
class PathWeights:
    """Exit probabilities of the detector paths; nonnegative and summing to 1."""

    w: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.w, dtype=float))
        if w.ndim != 1 or w.size < 1:
            raise ValidationError("path weights must be a non-empty 1-d sequence")
        if np.any(w < 0.0):
            raise ValidationError("path weights must be >= 0")
        total = float(w.sum())
        if abs(total - 1.0) > _TOL:
            raise ValidationError(
                f"path weights must sum to 1 within 1e-12 (got {total!r})"
            )
        _freeze(self, "w", w)

    @property
    def B(self) -> int:
        return self.w.size


def uniform_weights(B: int = 8) -> PathWeights:
    """Equal-splitting weight vector for a B-path detector."""
    if B < 1:
        raise ValidationError("B must be >= 1")
    return PathWeights(np.full(B, 1.0 / B))


@dataclass(frozen=True)
class DetectorResponse:
    """Conditional click matrix P[k, n] for one detector arm.

    Columns are probability distributions over the click number k for a fixed
    photon number n; k never exceeds min(n, B).
    """

    P: np.ndarray
    weights: PathWeights

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        B = self.weights.B
        if P.ndim != 2 or P.shape[0] != B + 1 or P.shape[1] < 1:
            raise ValidationError("P must have B+1 rows and at least one column")
        if np.any(P < 0.0):
            raise ValidationError("click probabilities must be >= 0")
        colsums = P.sum(axis=0)
        if np.any(np.abs(colsums - 1.0) > _TOL):
            raise ValidationError("each column of P must sum to 1 within 1e-12")
        if abs(P[0, 0] - 1.0) > _TOL:
            raise ValidationError("P[0, 0] must be 1")
        if P.shape[1] > 1 and abs(P[1, 1] - 1.0) > _TOL:
            raise ValidationError("P[1, 1] must be 1 for a lossless detector")
        k = np.arange(B + 1)[:, None]
        n = np.arange(P.shape[1])[None, :]
        if np.any(P[k > np.minimum(n, B)] > _TOL):
            raise ValidationError("P[k, n] must vanish for k > min(n, B)")
        _freeze(self, "P", P)

    @property
    def B(self) -> int:
        return self.weights.B

    @property
    def n_max(self) -> int:
        return self.P.shape[1] - 1


@dataclass(frozen=True)
class ClickDistribution:
    """Joint click probabilities p[k, l]; ``deficit`` is the mass lost to the
    photon-number truncation of the underlying distribution."""

    p: np.ndarray
    deficit: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 2:
            raise ValidationError("p must be a matrix")
        if np.any(p < 0.0) or np.any(p > 1.0 + _TOL):
            raise ValidationError("click probabilities must lie in [0, 1]")
        deficit = float(self.deficit)
        if deficit < 0.0:
            raise ValidationError("deficit must be >= 0")
        total = float(p.sum()) + deficit
        if abs(total - 1.0) > _TOL:
            raise ValidationError(
                f"click probabilities plus deficit must equal 1 within 1e-12"
                f" (got {total!r})"
            )
        _freeze(self, "p", p)
        object.__setattr__(self, "deficit", deficit)


def response_matrix(weights: PathWeights, n_max: int) -> DetectorResponse:
    """Conditional click probabilities P[k, n] for 0 <= k <= B, 0 <= n <= n_max.

    P[k, n] sums, over every k-subset S of paths, the probability that
    exactly the paths in S receive at least one of the n photons:

        P[k, n] = sum_{|S|=k} sum_{T subset S} (-1)^(|S|-|T|) (sum_{i in T} w_i)^n

    computed here by grouping the inner subsets by size.
    """
    if n_max < 0:
        raise ValidationError("n_max must be >= 0")
    w = weights.w
    B = weights.B
    ns = np.arange(n_max + 1)
    subset_pow = np.zeros((B + 1, n_max + 1))
    for t in range(1, B + 1):
        for paths in itertools.combinations(range(B), t):
            subset_pow[t] += w[list(paths)].sum() ** ns
    P = np.zeros((B + 1, n_max + 1))
    P[0, 0] = 1.0
    for k in range(1, B + 1):
        for t in range(1, k + 1):
            sign = -1.0 if (k - t) % 2 else 1.0
            P[k, 1:] += sign * math.comb(B - t, k - t) * subset_pow[t, 1:]
    np.maximum(P, 0.0, out=P)
    for k in range(1, B + 1):
        P[k, :k] = 0.0
    return DetectorResponse(P=P, weights=weights)


def simulate_clicks(n: int, weights: PathWeights, rng: np.random.Generator) -> int:
    """Number of paths hit when n photons scatter independently over the paths."""
    if n < 0:
        raise ValidationError("photon number must be >= 0")
    if n == 0:
        return 0
    if n == 1:
        return 1
    counts = rng.multinomial(n, weights.w)
    return int(np.count_nonzero(counts))


def simulate_clicks_batch(
    ns: np.ndarray, weights: PathWeights, rng: np.random.Generator
) -> np.ndarray:
    """Vectorized :func:`simulate_clicks` over an array of photon numbers."""
    ns = np.asarray(ns)
    if np.any(ns < 0):
        raise ValidationError("photon numbers must be >= 0")
    k = np.zeros(ns.shape, dtype=np.int64)
    k[ns == 1] = 1
    multi = np.flatnonzero(ns >= 2)
    if multi.size:
        counts = rng.multinomial(ns[multi], weights.w)
        k[multi] = np.count_nonzero(counts > 0, axis=-1)
    return k


@dataclass(frozen=True)
class CalibrationResult:
    """Estimated path weights with per-bin standard errors."""

    weights: PathWeights
    stderr: np.ndarray
    total: int


def calibrate(bin_counts) -> CalibrationResult:
    """Estimate path weights from per-bin click counts taken at low intensity.

    Assumes at most one photon per pulse (the caller's responsibility), under
    which the counts are multinomial and w_hat_i = counts_i / total is the
    maximum-likelihood estimate with standard error sqrt(w (1 - w) / total).
    """
    counts = np.atleast_1d(np.asarray(bin_counts))
    if counts.ndim != 1 or counts.size < 1:
        raise ValidationError("bin counts must be a non-empty 1-d sequence")
    if np.any(counts < 0) or np.any(counts != np.floor(counts)):
        raise ValidationError("bin counts must be nonnegative integers")
    total = int(counts.sum())
    if total == 0:
        raise DegenerateInputError("all calibration bins are empty")
    w = counts / total
    stderr = np.sqrt(w * (1.0 - w) / total)
    stderr.setflags(write=False)
    return CalibrationResult(weights=PathWeights(w), stderr=stderr, total=total)


def apply_response(
    rho: JointDistribution, resp_a: DetectorResponse, resp_b: DetectorResponse
) -> ClickDistribution:
    """Joint click distribution p[k, l] = sum_{n,m} P[k,n] P'[l,m] rho[n,m].

    The total click mass equals 1 - rho.tail_mass; the missing part is
    reported as the deficit.
    """
    for name, resp in (("resp_a", resp_a), ("resp_b", resp_b)):
        if resp.n_max < rho.n_max:
            raise ValidationError(
                f"{name} covers n <= {resp.n_max} but rho is truncated at {rho.n_max}"
            )
    cols = rho.n_max + 1
    p = resp_a.P[:, :cols] @ rho.probs @ resp_b.P[:, :cols].T
    np.maximum(p, 0.0, out=p)
    return ClickDistribution(p=p, deficit=rho.tail_mass)


# -- text formats -------------------------------------------------------------

def format_response(resp: DetectorResponse) -> str:
    text = format_matrix({"B": resp.B, "n_max": resp.n_max}, resp.P)
    return text + "weights=" + ",".join(format(v, ".17g") for v in resp.weights.w) + "\n"


def parse_response(text: str) -> DetectorResponse:
    lines = text.splitlines()
    weight_lines = [ln for ln in lines if ln.startswith("weights=")]
    if len(weight_lines) != 1:
        raise ValidationError("response file must carry one weights= line")
    weights = PathWeights(
        np.array([float(v) for v in weight_lines[0].split("=", 1)[1].split(",")])
    )
    body = "\n".join(ln for ln in lines if not ln.startswith("weights="))
    header, matrix = parse_matrix(body)
    try:
        B = int(header["B"])
        n_max = int(header["n_max"])
    except KeyError as missing:
        raise ValidationError(f"response header lacks {missing}") from None
    if matrix.shape != (B + 1, n_max + 1):
        raise ValidationError("response matrix shape disagrees with its header")
    if weights.B != B:
        raise ValidationError("weights length disagrees with header B")
    return DetectorResponse(P=matrix, weights=weights)


def write_response(resp: DetectorResponse, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(format_response(resp))


def read_response(path) -> DetectorResponse:
    with open(path, "r", encoding="ascii") as fh:
        return parse_response(fh.read())


def format_calibration(cal: CalibrationResult) -> str:
    pairs = {"B": cal.weights.B, "total": cal.total}
    for i, (w, s) in enumerate(zip(cal.weights.w, cal.stderr)):
        pairs[f"w_{i}"] = w
        pairs[f"stderr_{i}"] = s
    return format_mapping(pairs)


def parse_calibration(text: str) -> CalibrationResult:
    fields = parse_mapping(text)
    try:
        B = int(fields["B"])
        total = int(fields["total"])
        w = np.array([float(fields[f"w_{i}"]) for i in range(B)])
        stderr = np.array([float(fields[f"stderr_{i}"]) for i in range(B)])
    except KeyError as missing:
        raise ValidationError(f"calibration report lacks {missing}") from None
    stderr.setflags(write=False)
    return CalibrationResult(weights=PathWeights(w), stderr=stderr, total=total)
