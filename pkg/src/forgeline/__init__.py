"""Forgeline: artifact-centric orchestration engine for design-to-code pipelines.

The engine turns design documents and product requirement documents (PRDs)
into persistent intermediate artifacts (design IR, requirement understanding,
plan state, task IR), schedules execution over sibling dependency DAGs, and
exposes everything as callable capabilities over stdio or HTTP/SSE.
"""

__version__ = "0.1.0"
