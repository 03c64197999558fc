import sys
from pathlib import Path

from hypothesis import HealthCheck, settings

# so test modules can import the sibling oracles module under plain pytest
sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "suite",
    max_examples=60,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")
