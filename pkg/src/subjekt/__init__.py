"""Subject-oriented business process engine.

Processes are choreographies of communicating subject state machines.
Subpackages: model (domain types + validation), model_io (canonical JSON
format), repository (durable store + queries), engine (behavior
interpreter), scheduler (orchestration), api (HTTP facade), cli (client).
"""

__version__ = "0.1.0"
