import sys

from coordtrack.cli import main

sys.exit(main())
