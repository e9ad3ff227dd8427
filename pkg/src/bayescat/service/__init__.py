from .app import DEFAULT_SAMPLE_COUNT, LiveSession, ServiceStore, create_app

__all__ = ["DEFAULT_SAMPLE_COUNT", "LiveSession", "ServiceStore", "create_app"]
