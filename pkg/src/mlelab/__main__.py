import sys

from mlelab.cli import main

sys.exit(main())
