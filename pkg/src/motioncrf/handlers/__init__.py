"""Command handlers for the motioncrf command line."""
