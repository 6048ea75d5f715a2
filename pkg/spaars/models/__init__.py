"""Dataclass models: networks, CVAE, environments, learners, curriculum state."""
