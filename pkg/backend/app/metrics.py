"""
Prometheus metrics instrumentation for change-point runs.
Counts window tests, hazard overrides, threshold-cache traffic and fits;
the CLI dumps the registry to a textfile for node-exporter style scraping.
"""
from prometheus_client import CollectorRegistry, Counter, Histogram
from prometheus_client import write_to_textfile

REGISTRY = CollectorRegistry()

WINDOWS_TESTED_TOTAL = Counter(
    "cbocpd_windows_tested_total",
    "Sliding windows tested by the likelihood ratio test",
    ["verdict"],
    registry=REGISTRY,
)

HAZARD_OVERRIDES_TOTAL = Counter(
    "cbocpd_hazard_overrides_total",
    "Hazard values emitted by the confirmatory rule",
    ["kind"],
    registry=REGISTRY,
)

THRESHOLD_CACHE_TOTAL = Counter(
    "glrt_threshold_cache_total",
    "Empirical threshold cache lookups",
    ["result"],
    registry=REGISTRY,
)

CALIBRATION_SECONDS = Histogram(
    "glrt_calibration_seconds",
    "Time spent calibrating empirical thresholds",
    buckets=[0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 30.0, 120.0],
    registry=REGISTRY,
)

HYPERPARAMETER_FITS_TOTAL = Counter(
    "gp_hyperparameter_fits_total",
    "Kernel hyperparameter fits",
    ["improved"],
    registry=REGISTRY,
)


def write_metrics(path: str) -> None:
    write_to_textfile(path, REGISTRY)
