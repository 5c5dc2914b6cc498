"""casecrf: turn annotated clinical-case corpora into group-specific CRFs.

The package covers the full flow: normalized corpus model and loaders
(`corpus`), diagnosis extraction (`diagnosis`), document similarity graph
(`simgraph`), seeded Louvain clustering (`cluster`), CRF template generation
and gold filling (`crfgen`), human-in-the-loop item revision (`revise`),
and the slot-filling evaluation harness (`evalharness`).  `pipeline` wires
the stages together and `cli` exposes each one as a subcommand.
"""

__version__ = "0.1.0"
