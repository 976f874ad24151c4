"""Multi-IRS assisted uplink simulator with delay-aware per-slot power/phase optimization."""

from .config import ScenarioConfig, default_scenario, tiny_scenario

__version__ = "0.1.0"

__all__ = ["ScenarioConfig", "default_scenario", "tiny_scenario", "__version__"]
