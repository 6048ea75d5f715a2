"""Pydantic schemas for configuration, reports and metrics records."""
