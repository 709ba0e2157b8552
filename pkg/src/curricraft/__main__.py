"""Module entry point: python -m curricraft ..."""

import sys

from .cli import main

sys.exit(main())
