"""Allow ``python -m archetype_match``."""

from .cli import main

raise SystemExit(main())
