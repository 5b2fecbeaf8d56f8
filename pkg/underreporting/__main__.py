"""Entry point for ``python -m underreporting``."""

import sys

from underreporting.cli import main

sys.exit(main())
