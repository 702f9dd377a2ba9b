"""In-context error correction for coarse-step SDE simulation."""
