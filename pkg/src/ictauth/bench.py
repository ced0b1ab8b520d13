"""Throughput measurement for the token endpoints, with 95% confidence bounds.

Two closed-loop experiments (one request in flight at a time, the next sent
only after the previous response):

* A: spend a refresh token at the provider's ``/token`` endpoint, obtaining a
  fresh access/refresh/ID token triple each iteration (the rotated refresh
  token is threaded through);
* B: generate a fresh client key pair, build a possession proof, and request
  a certification token from the ``/ict`` endpoint each iteration.

Each run lasts a fixed wall-clock duration after one discarded warm-up
request. Rates are normalized to requests per minute and summarized as mean
plus a Student-t 95% confidence interval. The t quantile is computed here via
the regularized incomplete beta function so the statistics carry no extra
dependency and can be validated directly against tabulated values.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import requests

from .clock import Clock, SYSTEM_CLOCK
from .errors import (
    BenchSetupError,
    EndpointUnreachable,
    InsufficientSamples,
    ProtocolError,
)
from .issuer import request_ict
from .keys import ALG_ES256, generate_signing_keypair
from .pop import create_pop

EXPERIMENT_A = "A_token_refresh"
EXPERIMENT_B = "B_ict_request"

_KIND_ALIASES = {
    "a": EXPERIMENT_A,
    EXPERIMENT_A.lower(): EXPERIMENT_A,
    "b": EXPERIMENT_B,
    EXPERIMENT_B.lower(): EXPERIMENT_B,
}

HTTP_TIMEOUT_SECONDS = 10.0


# -- Student-t statistics -----------------------------------------------------

def _log_beta(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)

_BETACF_EPS = 3e-16
_BETACF_FPMIN = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETACF_FPMIN:
        d = _BETACF_FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_FPMIN:
            d = _BETACF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETACF_FPMIN:
            c = _BETACF_FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_FPMIN:
            d = _BETACF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETACF_FPMIN:
            c = _BETACF_FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            break
    return h


def _betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    front = math.exp(a * math.log(x) + b * math.log1p(-x) - _log_beta(a, b))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_cdf(t: float, df: float) -> float:
    x = df / (df + t * t)
    p = 0.5 * _betainc(df / 2.0, 0.5, x)
    return 1.0 - p if t >= 0 else p


def student_t_quantile(p: float, df: int) -> float:
    """Inverse CDF by bisection; accurate well past four decimals."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must be in (0, 1)")
    if df < 1:
        raise ValueError("df must be >= 1")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -student_t_quantile(1.0 - p, df)
    lo, hi = 0.0, 2.0
    while student_t_cdf(hi, df) < p:
        hi *= 2.0
        if hi > 1e12:
            raise ValueError("quantile out of range")
    for _ in range(200):
        mid = (lo + hi) / 2.0
        if student_t_cdf(mid, df) < p:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0


def mean_ci95(samples) -> tuple[float, float, float]:
    """Mean and Student-t 95% interval: mean +/- t_{0.975,n-1} * s / sqrt(n).

    ``s`` is the sample standard deviation (n-1 divisor). Needs n >= 2.
    """
    values = [float(x) for x in samples]
    n = len(values)
    if n < 2:
        raise InsufficientSamples(f"need at least 2 samples, got {n}")
    mean = sum(values) / n
    variance = sum((x - mean) ** 2 for x in values) / (n - 1)
    half_width = student_t_quantile(0.975, n - 1) * math.sqrt(variance / n)
    return mean, mean - half_width, mean + half_width


# -- experiment harness --------------------------------------------------------

@dataclass(frozen=True)
class BenchCredentials:
    """How to obtain tokens: the provider's base URL plus a password grant."""

    op_url: str
    username: str
    password: str
    scopes: tuple[str, ...] = ("profile", "email", "e2e_auth_email")
    algorithm: str = ALG_ES256
    contexts: tuple[str, ...] = ("email",)


@dataclass
class BenchReport:
    experiment: str
    runs: list[int]
    run_duration_seconds: float
    run_count: int
    rates_per_minute: list[float] = field(default_factory=list)
    mean_per_minute: float = 0.0
    ci95: tuple[float, float] = (0.0, 0.0)
    degenerate_interval: bool = False
    parameters: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "runs": self.runs,
            "run_duration_seconds": self.run_duration_seconds,
            "run_count": self.run_count,
            "rates_per_minute": self.rates_per_minute,
            "mean_per_minute": self.mean_per_minute,
            "ci95": {"lo": self.ci95[0], "hi": self.ci95[1]},
            "degenerate_interval": self.degenerate_interval,
            "parameters": self.parameters,
        }

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def _password_grant(session: requests.Session, creds: BenchCredentials) -> dict:
    try:
        response = session.post(
            creds.op_url.rstrip("/") + "/token",
            data={
                "grant_type": "password",
                "username": creds.username,
                "password": creds.password,
                "scope": " ".join(creds.scopes),
            },
            timeout=HTTP_TIMEOUT_SECONDS,
        )
    except requests.RequestException as exc:
        raise EndpointUnreachable(f"token endpoint: {exc}") from exc
    if response.status_code != 200:
        raise BenchSetupError(f"password grant failed: {response.text}")
    return response.json()


def _refresh(session: requests.Session, op_url: str, refresh_token: str) -> dict:
    try:
        response = session.post(
            op_url.rstrip("/") + "/token",
            data={"grant_type": "refresh_token", "refresh_token": refresh_token},
            timeout=HTTP_TIMEOUT_SECONDS,
        )
    except requests.RequestException as exc:
        raise EndpointUnreachable(f"token endpoint: {exc}") from exc
    if response.status_code != 200:
        raise BenchSetupError(f"refresh failed: {response.text}")
    return response.json()


def run_experiment(
    kind: str,
    endpoint_url: str,
    credentials: BenchCredentials,
    run_duration_seconds: float = 60.0,
    run_count: int = 20,
    clock: Clock = SYSTEM_CLOCK,
    session: Optional[requests.Session] = None,
) -> BenchReport:
    """Run the closed-loop experiment and summarize it.

    ``endpoint_url`` is the provider base for experiment A and the issuance
    service base for experiment B. Client key generation is part of B's loop,
    which the report records. With a single run the interval degenerates to
    [mean, mean] and is flagged.
    """
    experiment = _KIND_ALIASES.get(str(kind).lower())
    if experiment is None:
        raise ValueError(f"unknown experiment kind: {kind}")
    if run_count < 1:
        raise ValueError("run_count must be >= 1")
    http = session or requests.Session()

    counts: list[int] = []
    for _ in range(run_count):
        if experiment == EXPERIMENT_A:
            counts.append(
                _run_refresh_loop(http, endpoint_url, credentials, run_duration_seconds, clock)
            )
        else:
            counts.append(
                _run_ict_loop(http, endpoint_url, credentials, run_duration_seconds, clock)
            )

    rates = [count * 60.0 / run_duration_seconds for count in counts]
    degenerate = len(rates) < 2
    if degenerate:
        mean = rates[0]
        lo = hi = mean
    else:
        mean, lo, hi = mean_ci95(rates)
    return BenchReport(
        experiment=experiment,
        runs=counts,
        run_duration_seconds=run_duration_seconds,
        run_count=run_count,
        rates_per_minute=rates,
        mean_per_minute=mean,
        ci95=(lo, hi),
        degenerate_interval=degenerate,
        parameters={
            "endpoint": endpoint_url,
            "algorithm": credentials.algorithm,
            "warmup_requests_discarded": 1,
            "key_generation_included": experiment == EXPERIMENT_B,
        },
    )


def _run_refresh_loop(
    http: requests.Session,
    endpoint_url: str,
    creds: BenchCredentials,
    duration: float,
    clock: Clock,
) -> int:
    tokens = _password_grant(http, creds)
    refresh_token = tokens["refresh_token"]
    # warm-up, excluded from the timed window
    tokens = _refresh(http, endpoint_url, refresh_token)
    refresh_token = tokens["refresh_token"]
    count = 0
    start = clock.now()
    while clock.now() - start < duration:
        tokens = _refresh(http, endpoint_url, refresh_token)
        refresh_token = tokens["refresh_token"]
        count += 1
    return count


def _one_ict_request(
    http: requests.Session, endpoint_url: str, creds: BenchCredentials, access_token: str
) -> None:
    client_key = generate_signing_keypair(creds.algorithm)
    pop = create_pop(client_key, SYSTEM_CLOCK)
    try:
        request_ict(
            endpoint_url,
            access_token,
            client_key,
            creds.contexts,
            pop=pop,
            session=http,
            timeout=HTTP_TIMEOUT_SECONDS,
        )
    except ProtocolError as exc:
        raise BenchSetupError(f"issuance failed: {exc.code}: {exc.detail}") from exc


def _run_ict_loop(
    http: requests.Session,
    endpoint_url: str,
    creds: BenchCredentials,
    duration: float,
    clock: Clock,
) -> int:
    tokens = _password_grant(http, creds)
    access_token = tokens["access_token"]
    _one_ict_request(http, endpoint_url, creds, access_token)  # warm-up
    count = 0
    start = clock.now()
    while clock.now() - start < duration:
        _one_ict_request(http, endpoint_url, creds, access_token)
        count += 1
    return count


# -- report rendering ------------------------------------------------------------

def write_report_csv(report: BenchReport, path: str) -> None:
    """Per-run rows: index, raw request count, normalized rate."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "requests", "rate_per_minute"])
        for i, (count, rate) in enumerate(zip(report.runs, report.rates_per_minute), start=1):
            writer.writerow([i, count, f"{rate:.4f}"])


def render_report_plot(report: BenchReport, path: str) -> None:
    """Per-run rates with the mean line and shaded 95% interval."""
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    runs = range(1, len(report.rates_per_minute) + 1)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(list(runs), report.rates_per_minute, "o-", color="#3465a4", label="per-run rate")
    ax.axhline(report.mean_per_minute, color="#cc0000", linewidth=1.2, label="mean")
    if not report.degenerate_interval:
        ax.axhspan(report.ci95[0], report.ci95[1], color="#cc0000", alpha=0.15, label="95% CI")
    ax.set_xlabel("run")
    ax.set_ylabel("requests per minute")
    ax.set_title(f"{report.experiment} ({report.run_duration_seconds:.0f}s runs)")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
