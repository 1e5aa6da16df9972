"""Question answering over building HVAC telemetry.

The pipeline turns a natural-language question into a structured plan,
compiles the plan's retrieval steps into parameterized SQL over an embedded
readings store, runs any follow-up computation, and has a responder model
phrase the grounded result.  Evaluation tooling, an HTTP service, and a CLI
sit on top of the same orchestrator entry point.
"""

__version__ = "0.1.0"
