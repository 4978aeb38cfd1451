"""Desk-scale workbench for ensembles of limited-area weather runs.

Configure nested simulation domains, execute runs through a cached
eight-task pipeline over a deterministic surrogate model, ingest the
hourly output grids into an embedded store, and query single-run and
ensemble analytics through a CLI or an HTTP/WebSocket service.
"""

__version__ = "0.1.0"
