from typing import Iterable

from prometheus_client import CollectorRegistry, write_to_textfile
from prometheus_client.core import GaugeMetricFamily
from prometheus_client.metrics_core import Metric
from prometheus_client.registry import Collector


class EvalCollector(Collector):
    """Exposes aggregate evaluation rows as gauges labelled by benchmark and method."""

    def __init__(self, benchmark, rows):
        self.benchmark = benchmark
        self.rows = rows

    def collect(self) -> Iterable[Metric]:
        for name, doc in (
            ("validity", "Share of seeds whose interval is valid"),
            ("norm_width", "Mean interval width over the Manski width"),
            ("time_per_1k_s", "Median seconds per 1,000 rows"),
        ):
            g = GaugeMetricFamily(
                f"ivbounds_{name}",
                doc,
                labels=["benchmark", "method"],
            )
            for row in self.rows:
                g.add_metric([self.benchmark, row.method], getattr(row, name).mean)
            yield g


def write_metrics(path, benchmark, rows):
    registry = CollectorRegistry()
    registry.register(EvalCollector(benchmark, rows))
    write_to_textfile(str(path), registry)
