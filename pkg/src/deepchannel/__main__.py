"""``python -m deepchannel``."""
import sys

from .cli import main

sys.exit(main())
