import pytest

from neaiaas.catalog import CatalogEntry
from neaiaas.contract import AIServiceProfile, TimerConfig, validate_asp


class TablePredictor:
    """Estimates keyed by site_id; stands in for the analytic predictor."""

    def __init__(self, table):
        self.table = table

    def estimate(self, entry, asp):
        return self.table[entry.site_id]


def entry(site_id, *, model="m", version="1", site_class="edge", tier=1, zone="domestic",
          cost=1.0, deps=(), hw=()):
    return CatalogEntry(model, version, site_id, site_class, tier, zone, cost,
                        frozenset(deps), frozenset(hw))


@pytest.fixture
def profile():
    return AIServiceProfile(
        ttfb_bound=100.0, p95_bound=150.0, p99_bound=200.0,
        completion_prob_min=0.99, hard_timeout=500.0,
    )


@pytest.fixture
def asp(profile):
    return validate_asp(profile)


@pytest.fixture
def timers():
    return TimerConfig(10.0, 20.0, 50.0, 100.0, 250.0, 1000.0)


def anchored(session_id="s1"):
    """A record that has completed discovery and paging."""
    from neaiaas.contract import AISessionRecord, EventKind, LifecycleEvent, transition

    rec = AISessionRecord(session_id=session_id, asp_digest="d")
    rec = transition(rec, LifecycleEvent(EventKind.DISCOVER_DONE), 0.0)
    return transition(rec, LifecycleEvent(EventKind.ANCHOR_DONE), 0.0)


def edge_catalog(n=3, model="m"):
    return [entry(f"e{i}", model=model, tier=2, cost=1.0 + i) for i in range(n)]
