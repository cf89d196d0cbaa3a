from .loader import (
    GridSpec,
    RunConfigSchema,
    canonical,
    canonical_text,
    from_sections,
    parse_config,
    parse_grid,
    read_yaml,
    serialize,
    to_sections,
)

__all__ = [
    "GridSpec", "RunConfigSchema", "canonical", "canonical_text", "from_sections", "parse_config",
    "parse_grid", "read_yaml", "serialize", "to_sections",
]
