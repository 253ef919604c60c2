"""Guided BI analysis: next-step pattern recommendations from session logs
and an OLAP-derived ontology."""

__version__ = "0.1.0"
