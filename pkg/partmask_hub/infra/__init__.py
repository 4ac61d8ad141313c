"""Инфраструктурные компоненты (настройки, чекпойнты, архивы сцен)."""

from partmask_hub.infra.settings import SettingsLoader, settings

__all__ = ["SettingsLoader", "settings"]
