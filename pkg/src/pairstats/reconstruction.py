"""Maximum-likelihood recovery of the joint photon-number distribution.

Click data are multinomial over the (k, l) cells with cell probabilities
linear in rho, so the likelihood is inverted by the classical multiplicative
expectation-maximization update for positive linear models:

    rho[n, m] <- rho[n, m] * sum_{k,l} P[k,n] P'[l,m] (f[k,l]/F) / p[k,l]

The update keeps rho nonnegative, preserves its normalization exactly
(columns of P and P' each sum to one), and never decreases the
log-likelihood.  Click numbers above B carry no information about photon
numbers beyond the detector's resolution, so support claimed at n much
larger than B is determined by the data only weakly; callers choose n_max.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._fileio import format_mapping, format_matrix, parse_mapping, parse_matrix
from .errors import SupportError, ValidationError
from .loop_detector import DetectorResponse, apply_response
from .model import JointDistribution, _freeze

_TOL = 1e-12


@dataclass(frozen=True)
class ClickHistogram:
    """Joint click counts f[k, l] accumulated over a known number of pulses."""

    f: np.ndarray
    pulses: int

    def __post_init__(self):
        f = np.asarray(self.f)
        if f.ndim != 2 or f.shape[0] != f.shape[1] or f.shape[0] < 1:
            raise ValidationError("f must be a square (B+1) x (B+1) matrix")
        if np.any(f < 0) or np.any(f != np.floor(f)):
            raise ValidationError("click counts must be nonnegative integers")
        f = f.astype(np.int64)
        pulses = int(self.pulses)
        if pulses <= 0:
            raise ValidationError("pulses must be > 0")
        if int(f.sum()) > pulses:
            raise ValidationError("total counts cannot exceed the number of pulses")
        _freeze(self, "f", f)
        object.__setattr__(self, "pulses", pulses)

    @property
    def B(self) -> int:
        return self.f.shape[0] - 1


@dataclass(frozen=True)
class ReconstructionResult:
    """Outcome of an expectation-maximization run.

    The trace holds the log-likelihood of each visited iterate and is
    non-decreasing up to floating-point resolution.
    """

    rho: JointDistribution
    log_likelihood_trace: tuple
    iterations: int
    converged: bool

    def __post_init__(self):
        trace = tuple(float(v) for v in self.log_likelihood_trace)
        if not trace:
            raise ValidationError("log-likelihood trace must be non-empty")
        # 1e-10 absolute slack, widened by a few ulp once |LL| makes 1e-10
        # unrepresentable in double precision.
        slack = 1e-10 + 4.0 * np.spacing(max(abs(v) for v in trace))
        diffs = np.diff(trace)
        if diffs.size and float(diffs.min()) < -slack:
            raise ValidationError(
                f"log-likelihood trace decreases by {-float(diffs.min()):.3e}"
            )
        object.__setattr__(self, "log_likelihood_trace", trace)
        object.__setattr__(self, "iterations", int(self.iterations))
        object.__setattr__(self, "converged", bool(self.converged))


def log_likelihood(
    hist: ClickHistogram,
    rho: JointDistribution,
    resp_a: DetectorResponse,
    resp_b: DetectorResponse,
) -> float:
    """Multinomial log-likelihood sum_{k,l} f[k,l] ln p[k,l] of rho.

    Cells with zero counts contribute nothing.  Raises SupportError when a
    nonzero count falls in a cell of zero model probability.
    """
    clicks = apply_response(rho, resp_a, resp_b)
    if clicks.p.shape != hist.f.shape:
        raise ValidationError("histogram and response dimensions disagree")
    mask = hist.f > 0
    p = clicks.p[mask]
    if np.any(p <= 0.0):
        raise SupportError("observed clicks in cells of zero model probability")
    return math.fsum(hist.f[mask] * np.log(p))


def em_reconstruct(
    hist: ClickHistogram,
    resp_a: DetectorResponse,
    resp_b: DetectorResponse,
    n_max: int,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    init: JointDistribution | None = None,
) -> ReconstructionResult:
    """Recover rho from a click histogram by expectation-maximization.

    Starts from the uniform distribution on the (n_max+1)^2 grid (or from
    ``init``), iterates the multiplicative update, and stops once the
    relative log-likelihood gain falls below ``tol`` or after ``max_iter``
    updates.  Non-convergence is reported through the ``converged`` flag, not
    an exception.

    Args:
        hist: observed joint click counts.
        resp_a: response matrix of arm a; must cover n_max.
        resp_b: response matrix of arm b; must cover n_max.
        n_max: truncation order of the reconstructed grid; must reach the
            largest observed click number.
        tol: stop when the log-likelihood gain is below tol * max(1, |LL|).
        max_iter: maximum number of multiplicative updates.
        init: optional starting distribution on the same grid.
    """
    total = int(hist.f.sum())
    if total <= 0:
        raise ValidationError("histogram is empty")
    observed = int(np.argwhere(hist.f > 0).max())
    if n_max < observed:
        raise ValidationError(
            f"n_max={n_max} is below the largest observed click number {observed}"
        )
    for name, resp in (("resp_a", resp_a), ("resp_b", resp_b)):
        if resp.B != hist.B:
            raise ValidationError(f"{name} has B={resp.B} but histogram has B={hist.B}")
        if resp.n_max < n_max:
            raise ValidationError(f"{name} covers n <= {resp.n_max} < n_max={n_max}")

    Pa = resp_a.P[:, : n_max + 1]
    Pb = resp_b.P[:, : n_max + 1]
    mask = hist.f > 0
    freqs = hist.f / total

    if init is None:
        rho = np.full((n_max + 1, n_max + 1), 1.0 / (n_max + 1) ** 2)
    else:
        if init.n_max != n_max:
            raise ValidationError("init grid size disagrees with n_max")
        rho = init.probs.copy()
        rho /= rho.sum()

    def forward(r):
        p = Pa @ r @ Pb.T
        if np.any(p[mask] <= 0.0):
            raise SupportError("observed clicks in cells of zero model probability")
        return p

    p = forward(rho)
    ll = math.fsum(hist.f[mask] * np.log(p[mask]))
    trace = [ll]
    converged = False
    iterations = 0
    while iterations < max_iter:
        ratio = np.zeros_like(p)
        ratio[mask] = freqs[mask] / p[mask]
        rho = rho * (Pa.T @ ratio @ Pb)
        # column stochasticity keeps the total at 1; renormalize only if
        # accumulated rounding ever becomes visible
        drift = rho.sum()
        if abs(drift - 1.0) > 1e-13:
            rho /= drift
        iterations += 1
        p = forward(rho)
        ll_new = math.fsum(hist.f[mask] * np.log(p[mask]))
        trace.append(ll_new)
        gain = ll_new - ll
        ll = ll_new
        if gain < tol * max(1.0, abs(ll_new)):
            converged = True
            break
    return ReconstructionResult(
        rho=JointDistribution(probs=rho, n_max=n_max, tail_mass=0.0),
        log_likelihood_trace=tuple(trace),
        iterations=iterations,
        converged=converged,
    )


# -- text formats -------------------------------------------------------------

def format_histogram(hist: ClickHistogram) -> str:
    return format_matrix({"pulses": hist.pulses, "B": hist.B}, hist.f)


def parse_histogram(text: str) -> ClickHistogram:
    header, matrix = parse_matrix(text)
    try:
        pulses = int(header["pulses"])
        B = int(header["B"])
    except KeyError as missing:
        raise ValidationError(f"histogram header lacks {missing}") from None
    if matrix.shape != (B + 1, B + 1):
        raise ValidationError("histogram shape disagrees with its header")
    return ClickHistogram(f=matrix, pulses=pulses)


def write_histogram(hist: ClickHistogram, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(format_histogram(hist))


def read_histogram(path) -> ClickHistogram:
    with open(path, "r", encoding="ascii") as fh:
        return parse_histogram(fh.read())


def format_run_report(result: ReconstructionResult) -> str:
    return format_mapping(
        {
            "iterations": result.iterations,
            "converged": result.converged,
            "final_log_likelihood": result.log_likelihood_trace[-1],
            "n_max": result.rho.n_max,
        }
    )


def parse_run_report(text: str) -> dict:
    fields = parse_mapping(text)
    return {
        "iterations": int(fields["iterations"]),
        "converged": fields["converged"] == "True",
        "final_log_likelihood": float(fields["final_log_likelihood"]),
        "n_max": int(fields["n_max"]),
    }
