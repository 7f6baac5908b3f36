"""
Services for the lab: function spaces, radial oracle, mesh solver, continuation, artifacts and the run ledger.
"""
