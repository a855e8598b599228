"""Requirement-to-test index for R1..R10."""

from __future__ import annotations

import csv
import io

REQUIREMENTS: dict[str, tuple[str, tuple[str, ...]]] = {
    "R1": (
        "discoverability",
        (
            "tests/test_catalog.py::test_discover_ranks_by_slack",
            "tests/test_catalog.py::test_sovereignty_only_failure",
            "tests/test_catalog.py::test_fallback_ladder",
        ),
    ),
    "R2": (
        "joint compute and transport admission",
        (
            "tests/test_txn.py::test_qos_scarcity_releases_compute",
            "tests/test_sim.py::test_admit_rate_above_cap",
        ),
    ),
    "R3": (
        "atomic binding",
        (
            "tests/test_txn.py::test_commit_binds_both_leases",
            "tests/test_fuzz.py::test_atomicity_fuzz_small",
            "tests/test_properties.py::TestLifecycleMachine::runTest",
        ),
    ),
    "R4": (
        "per-flow transport enforcement",
        (
            "tests/test_txn.py::test_binding_carries_flow_handles",
        ),
    ),
    "R5": (
        "execution-side terms and telemetry",
        (
            "tests/test_telemetry.py::test_window_stats_censoring",
            "tests/test_contract.py::test_compliance_verdict",
        ),
    ),
    "R6": (
        "make-before-break continuity",
        (
            "tests/test_migration.py::test_abort_preserves_source",
            "tests/test_migration.py::test_successful_migration_releases_source",
        ),
    ),
    "R7": (
        "consent and authorization scope",
        (
            "tests/test_contract.py::test_consent_revoked_stops_serving",
            "tests/test_lifecycle.py::test_no_serving_after_revocation",
        ),
    ),
    "R8": (
        "session accounting",
        (
            "tests/test_lifecycle.py::test_session_accounting",
        ),
    ),
    "R9": (
        "diagnosable failures",
        (
            "tests/test_lifecycle.py::test_every_cause_reaches_trace",
            "tests/test_cli.py::test_failure_messages_carry_cause",
        ),
    ),
    "R10": (
        "composition of abstract planes",
        (
            "tests/test_txn.py::test_managers_are_interchangeable_planes",
        ),
    ),
}


def test_ids() -> list[str]:
    return [t for _, tests in REQUIREMENTS.values() for t in tests]


def report_csv() -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("requirement", "title", "test_id"))
    for rid, (title, tests) in REQUIREMENTS.items():
        for t in tests:
            w.writerow((rid, title, t))
    return buf.getvalue()
