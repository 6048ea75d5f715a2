"""Service layer; each module exposes a singleton service instance."""
