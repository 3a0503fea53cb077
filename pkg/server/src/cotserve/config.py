"""Service configuration."""

from __future__ import annotations

from dataclasses import dataclass


class ConfigError(ValueError):
    """The service was configured with impossible settings."""


ROLES = ("generate", "classify", "embed")


@dataclass(frozen=True)
class ServerConfig:
    """Which models to serve and how.

    Each role's checkpoint path is optional, but at least one must be set —
    a server with nothing to serve is a configuration mistake, not an
    empty deployment.
    """

    generator: str | None = None
    classifier: str | None = None
    embedder: str | None = None
    port: int = 8000
    max_batch: int = 32
    device: str = "cpu"
    max_new_tokens_cap: int = 256

    def __post_init__(self):
        if self.generator is None and self.classifier is None and self.embedder is None:
            raise ConfigError("at least one model (generator/classifier/embedder) must be configured")
        if not 1 <= self.port <= 65535:
            raise ConfigError(f"port must be in [1, 65535], got {self.port}")
        if self.max_batch < 1:
            raise ConfigError(f"max_batch must be >= 1, got {self.max_batch}")
        if self.max_new_tokens_cap < 1:
            raise ConfigError(
                f"max_new_tokens_cap must be >= 1, got {self.max_new_tokens_cap}"
            )

    def path_for(self, role: str) -> str | None:
        return {
            "generate": self.generator,
            "classify": self.classifier,
            "embed": self.embedder,
        }[role]

    @property
    def configured_roles(self) -> tuple[str, ...]:
        return tuple(role for role in ROLES if self.path_for(role) is not None)
