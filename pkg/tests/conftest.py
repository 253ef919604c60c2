import pytest

from biguide.ontology import HI_PROFILE, Ontology, generate_synthetic_ontology
from biguide.workload import WorkloadConfig, generate_workload


@pytest.fixture(scope="session")
def hi_ontology():
    return generate_synthetic_ontology(HI_PROFILE, seed=7)


@pytest.fixture(scope="session")
def small_workload(hi_ontology):
    cfg = WorkloadConfig(n_sessions=30, session_length=(4, 6))
    return generate_workload(hi_ontology, cfg, seed=11)


@pytest.fixture()
def clinic_ontology():
    """Hand-built ontology with named healthcare entities for anchored tests."""
    return Ontology(
        measures={"acute_admits", "er_visits", "net_pay", "readmits"},
        dimensions={"plan", "condition", "month", "hospital"},
        measure_groups={"utilization", "net_payment"},
        dimension_groups={"time", "care_setting"},
        labels={
            "acute_admits": "Acute Admits",
            "er_visits": "ER Visits",
            "net_pay": "Net Pay",
            "readmits": "Readmits",
            "plan": "Plan",
            "condition": "Condition",
            "month": "Month",
            "hospital": "Hospital",
            "utilization": "Utilization",
            "net_payment": "Net Payment",
            "time": "Time",
            "care_setting": "Care Setting",
        },
        isa_edges={
            "acute_admits": "utilization",
            "er_visits": "utilization",
            "readmits": "utilization",
            "net_pay": "net_payment",
            "month": "time",
            "plan": "care_setting",
            "hospital": "care_setting",
        },
        functional_edges={
            ("acute_admits", "plan"),
            ("acute_admits", "condition"),
            ("acute_admits", "month"),
            ("er_visits", "hospital"),
            ("er_visits", "month"),
            ("net_pay", "plan"),
            ("readmits", "condition"),
        },
    )
