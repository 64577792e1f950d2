from .settings import Settings, load_settings, read_config_file

__all__ = ["Settings", "load_settings", "read_config_file"]
