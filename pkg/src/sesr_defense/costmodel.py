"""MAC/parameter rollups and a throughput-times-utilization latency model."""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigurationError
from .models import build_net, parse_description
from .network import NetworkSpec, count_macs, count_params

# Measured latencies (ms) on a 0.5 TOP/s micro-NPU: enlarged MobileNet-V2
# classifier plus each x2 SR model on a 299x299 input.
REPORTED_LATENCY_MS = {
    "classification": 46.18,
    "fsrcnn": 143.73,
    "sesr_m5": 26.76,
    "sesr_m3": 22.38,
    "sesr_m2": 20.19,
}
REPORTED_TOTAL_MS = {"fsrcnn": 189.91, "sesr_m5": 72.94, "sesr_m3": 68.56, "sesr_m2": 66.37}
REPORTED_FPS = {"fsrcnn": 5.26, "sesr_m5": 13.70, "sesr_m3": 14.58, "sesr_m2": 15.06}

# Stored reference MAC counts for MobileNet-V2 (no builder here).
MOBILENET_V2_MACS = {224: 300e6, 598: 2.1e9}


@dataclass(frozen=True)
class DeviceProfile:
    peak_macs_per_second: float
    utilization: float = 1.0

    def __post_init__(self):
        if self.peak_macs_per_second <= 0:
            raise ConfigurationError("peak throughput must be positive")
        if not 0 < self.utilization <= 1:
            raise ConfigurationError(f"utilization must be in (0, 1], got {self.utilization}")

    @classmethod
    def from_tops(cls, tops: float, utilization: float = 1.0) -> "DeviceProfile":
        """One MAC counts as two operations."""
        return cls(tops * 1e12 / 2, utilization)

    @property
    def effective_macs_per_second(self) -> float:
        return self.peak_macs_per_second * self.utilization

    def latency_ms(self, macs: float) -> float:
        return macs / self.effective_macs_per_second * 1000.0


def fps(latency_ms: float) -> float:
    return 1000.0 / latency_ms if latency_ms > 0 else float("inf")


@dataclass(frozen=True)
class CostReport:
    params: int
    macs: int
    latency_ms: float
    stages: dict = field(default_factory=dict)  # stage name -> latency_ms

    @property
    def fps(self) -> float:
        return fps(self.latency_ms)


def _as_net(net) -> NetworkSpec:
    if isinstance(net, NetworkSpec):
        return net
    if isinstance(net, str) and net.strip() and not any(c.isspace() for c in net.strip()):
        return build_net(net)
    return parse_description(net)


def stage_cost(net, input_h: int, input_w: int, device: DeviceProfile, stage: str = "sr") -> CostReport:
    """Cost of one network: ``net`` is a NetworkSpec, a preset name or a text description."""
    spec = _as_net(net)
    macs = count_macs(spec, input_h, input_w) if spec.layers else 0
    lat = device.latency_ms(macs)
    return CostReport(count_params(spec), macs, lat, {stage: lat})


def fixed_stage(latency_ms: float, stage: str, macs: int = 0, params: int = 0) -> CostReport:
    """A stage known only by its measured latency."""
    if latency_ms < 0:
        raise ConfigurationError("latency must be non-negative")
    return CostReport(params, macs, latency_ms, {stage: latency_ms})


def end_to_end(*reports: CostReport) -> CostReport:
    """Sequential stages: parameters, MACs and latencies add."""
    stages: dict = {}
    for r in reports:
        for k, v in r.stages.items():
            stages[k] = stages.get(k, 0.0) + v
    return CostReport(
        sum(r.params for r in reports),
        sum(r.macs for r in reports),
        sum(r.latency_ms for r in reports),
        stages,
    )


def _macs_of(x, h: int, w: int) -> float:
    if isinstance(x, (int, float)):
        return float(x)
    return float(count_macs(_as_net(x), h, w))


def mac_ratio(a, b, h: int = 299, w: int = 299) -> float:
    """MACs of ``b`` divided by MACs of ``a``; nets, preset names or raw counts."""
    ma = _macs_of(a, h, w)
    if ma == 0:
        raise ConfigurationError("reference network has zero MACs")
    return _macs_of(b, h, w) / ma


def calibrate_utilization(net, input_h: int, input_w: int, peak_macs_per_second: float, measured_ms: float) -> float:
    """Utilization that makes the model reproduce a measured latency."""
    if measured_ms <= 0:
        raise ConfigurationError("measured latency must be positive")
    macs = _macs_of(net, input_h, input_w)
    u = macs / (peak_macs_per_second * measured_ms / 1000.0)
    if not 0 < u <= 1:
        raise ConfigurationError(f"measured latency implies utilization {u:.3f} outside (0, 1]")
    return u


def parse_device(text: str) -> float:
    """``"0.5tops"`` / ``"2.5e11"`` to peak MAC/s."""
    t = text.strip().lower()
    try:
        if t.endswith("tops"):
            return float(t[:-4]) * 1e12 / 2
        return float(t)
    except ValueError:
        raise ConfigurationError(f"cannot parse device {text!r}") from None
