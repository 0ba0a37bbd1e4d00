"""Scenario runner and R_RX / P_dd measurement."""

from .metrics import (InsufficientData, LinkMeasurement, TxRxLog, TxRxRecord, compute_pdd,
                      compute_rrx, image_delay)
from .scenario import (Comparison, Scenario, ScenarioError, ScenarioResult, Testbed,
                       bundled_scenarios, compare_direct, load_results, run_direct_scenario,
                       run_scenario)

__all__ = [
    "Comparison", "InsufficientData", "LinkMeasurement", "Scenario", "ScenarioError",
    "ScenarioResult", "Testbed", "TxRxLog", "TxRxRecord", "bundled_scenarios",
    "compare_direct", "compute_pdd", "compute_rrx", "image_delay", "load_results",
    "run_direct_scenario", "run_scenario",
]
