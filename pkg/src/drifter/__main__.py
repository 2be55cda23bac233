import sys

from drifter.cli import main

sys.exit(main())
