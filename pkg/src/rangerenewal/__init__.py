"""Range-renewal processes: exact theory, streaming simulation and verification."""
